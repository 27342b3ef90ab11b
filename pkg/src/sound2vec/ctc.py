"""CTC loss via log-space forward-backward.

The label sequence ``l`` is extended with blanks to ``l' = (_, l1, _, l2, ..., _)``.
Both lattices include the emission at their own frame, so the posterior of
lattice cell ``(t, s)`` is ``exp(alpha + beta - log_probs[t, l'_s] - log p(l))``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .errors import EmptyLabelError, InfeasibleAlignmentError

NEG_INF = -np.inf


@dataclass
class CtcLattice:
    extended: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    log_likelihood: float


def extend_labels(labels: Sequence[int], blank: int) -> np.ndarray:
    ext = np.full(2 * len(labels) + 1, blank, dtype=np.int64)
    ext[1::2] = labels
    return ext


def min_frames(labels: Sequence[int]) -> int:
    """Shortest input that can emit ``labels``: one frame per label plus a blank between repeats."""
    labels = list(labels)
    return len(labels) + sum(1 for a, b in zip(labels, labels[1:]) if a == b)


def _skip_mask(ext, blank):
    skip = np.zeros(ext.size, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    return skip


def ctc_lattice(log_probs, labels: Sequence[int], blank: int) -> CtcLattice:
    log_probs = np.asarray(log_probs, dtype=np.float64)
    labels = [int(v) for v in labels]
    if not labels:
        raise EmptyLabelError("CTC needs at least one label")
    if blank in labels:
        raise ValueError("labels must not contain the blank index")
    T = log_probs.shape[0]
    if T < min_frames(labels):
        raise InfeasibleAlignmentError(
            f"{T} frames cannot emit {len(labels)} labels (need {min_frames(labels)})"
        )
    ext = extend_labels(labels, blank)
    S = ext.size
    skip = _skip_mask(ext, blank)
    emit = log_probs[:, ext]

    alpha = np.full((T, S), NEG_INF)
    alpha[0, :2] = emit[0, :2]
    for t in range(1, T):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
        alpha[t] = acc + emit[t]

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 2 :] = emit[T - 1, S - 2 :]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        acc[:-2] = np.where(skip[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
        beta[t] = acc + emit[t]

    log_likelihood = float(np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2]))
    return CtcLattice(ext, alpha, beta, log_likelihood)


def posteriors(lattice: CtcLattice, log_probs) -> np.ndarray:
    """Occupancy ``gamma[t, k]``: expected number of alignment paths emitting ``k`` at ``t``."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    ext = lattice.extended
    T = log_probs.shape[0]
    emit = log_probs[:, ext]
    finite = np.isfinite(lattice.alpha) & np.isfinite(lattice.beta)
    log_occ = np.where(
        finite,
        np.where(finite, lattice.alpha + lattice.beta - emit, 0.0) - lattice.log_likelihood,
        NEG_INF,
    )
    gamma = np.zeros_like(log_probs)
    np.add.at(gamma, (np.arange(T)[:, None], ext[None, :]), np.exp(log_occ))
    return gamma


def ctc_loss(log_probs, labels: Sequence[int], blank: int):
    """Return ``(loss, grad)`` with ``loss = -log p(labels | x)``.

    ``grad`` is the derivative of the loss with respect to ``log_probs`` and
    equals the negated posterior occupancy.
    """
    lattice = ctc_lattice(log_probs, labels, blank)
    if not np.isfinite(lattice.log_likelihood):
        return float("inf"), np.full(np.shape(log_probs), np.nan)
    return -lattice.log_likelihood, -posteriors(lattice, log_probs)


def ctc_batch_loss(log_probs, lengths, labels: List[Sequence[int]], blank: int):
    """Per-item losses and a gradient that is exactly zero on padding frames."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    losses = np.empty(log_probs.shape[0])
    grad = np.zeros_like(log_probs)
    for b, (n, lab) in enumerate(zip(lengths, labels)):
        n = int(n)
        losses[b], grad[b, :n] = ctc_loss(log_probs[b, :n], lab, blank)
    return losses, grad
