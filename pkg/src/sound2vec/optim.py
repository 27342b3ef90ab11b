"""Nesterov-momentum SGD and global-norm gradient clipping.

Parameters and gradients are dicts of arrays keyed by parameter name.
Updates happen in place so layer objects that share the arrays see them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .errors import ConfigError, NonFiniteGradientError


@dataclass
class TrainSchedule:
    lr: float = 0.02
    momentum: float = 0.9
    clip_norm: float = 5.0
    epochs: int = 20
    batch_size: int = 16
    lr_decay: float = 1.0

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError("learning rate must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError("lr_decay must be in (0, 1]")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 1-based epoch: exponential decay from ``lr``."""
        return self.lr * self.lr_decay ** (epoch - 1)


@dataclass
class NesterovState:
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)
    step_count: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(v) for k, v in params.items()})


def global_norm(grads: Dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_gradients(grads: Dict[str, np.ndarray], clip_norm: float) -> Dict[str, np.ndarray]:
    if clip_norm <= 0:
        raise ConfigError("clip_norm must be positive")
    norm = global_norm(grads)
    if norm <= clip_norm:
        return grads
    scale = clip_norm / norm
    return {k: g * scale for k, g in grads.items()}


def nesterov_step(params, grads, state: NesterovState, lr: float, momentum: float) -> NesterovState:
    """``v <- mu v - lr g``; ``theta <- theta + mu v - lr g``.

    A non-finite gradient raises before anything is modified.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for {name}; step skipped")
    for name, p in params.items():
        g = grads[name]
        v = state.velocity.setdefault(name, np.zeros_like(p))
        v *= momentum
        v -= lr * g
        p += momentum * v - lr * g
    state.step_count += 1
    return state
