"""Run configuration files (YAML or JSON) layered over the desk presets.

Example::

    seed: 0
    corpus:
      synth: {noise: 0.5, count: 300}   # or  manifest: data/train.tsv
      split: [8, 1, 1]
      dropout_split: [1, 1, 1]          # overfit-prone split for compare-dropout
    model: {filters: 100, kernel: 11, gru_layers: 1, gru_hidden: 32}
    dropout_model: {gru_hidden: 64}
    schedule: {lr: 0.03, epochs: 20}
    sweep: {filters: [1, 2, 5, 10, 20, 50, 100, 200], kernels: [5, 11], dropout_rates: [0.0, 0.25]}
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml

from .dataset import SplitSpec, SynthSpec, generate_synthetic, read_manifest
from .errors import ConfigError
from .experiments import DESK_BASE, DESK_DROPOUT_BASE, DESK_DROPOUT_SPLIT, DESK_FILTERS, DESK_KERNELS, DESK_SCHEDULE, DESK_SYNTH
from .model import CrnnConfig
from .optim import TrainSchedule
from .train import Corpus, prepare_corpus


@dataclass
class SweepOptions:
    filters: List[int] = field(default_factory=lambda: list(DESK_FILTERS))
    kernels: List[int] = field(default_factory=lambda: list(DESK_KERNELS))
    padding_modes: List[str] = field(default_factory=lambda: ["valid", "same"])
    dropout_rates: List[float] = field(default_factory=lambda: [0.0, 0.25])


@dataclass
class RunConfig:
    seed: int = 0
    synth: SynthSpec = DESK_SYNTH
    manifest: Optional[str] = None
    split: Tuple[int, int, int] = (8, 1, 1)
    dropout_split: Tuple[int, int, int] = DESK_DROPOUT_SPLIT
    model: CrnnConfig = DESK_BASE
    dropout_model: CrnnConfig = DESK_DROPOUT_BASE
    schedule: TrainSchedule = DESK_SCHEDULE
    sweep: SweepOptions = field(default_factory=SweepOptions)

    def corpus(self, split: Optional[Tuple[int, int, int]] = None) -> Corpus:
        utts = read_manifest(self.manifest) if self.manifest else generate_synthetic(self.synth)
        return prepare_corpus(utts, SplitSpec(tuple(split or self.split), self.seed))

    def with_overrides(self, seed: Optional[int] = None, epochs: Optional[int] = None) -> "RunConfig":
        out = self
        if seed is not None:
            out = replace(out, seed=seed)
        if epochs is not None:
            out = replace(out, schedule=replace(out.schedule, epochs=epochs))
        return out

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "corpus": {"synth": asdict(self.synth), "manifest": self.manifest, "split": list(self.split),
                       "dropout_split": list(self.dropout_split)},
            "model": asdict(self.model),
            "dropout_model": asdict(self.dropout_model),
            "schedule": asdict(self.schedule),
            "sweep": asdict(self.sweep),
        }


def _merge(cls, base, overrides: Dict[str, Any], section: str):
    if not isinstance(overrides, dict):
        raise ConfigError(f"section '{section}' must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(overrides) - known
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {sorted(unknown)}")
    try:
        return replace(base, **overrides) if base is not None else cls(**overrides)
    except TypeError as exc:
        raise ConfigError(f"bad value in '{section}': {exc}") from exc


def config_from_dict(d: Dict[str, Any]) -> RunConfig:
    d = dict(d or {})
    unknown = set(d) - {"seed", "corpus", "model", "dropout_model", "schedule", "sweep"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    cfg = RunConfig()
    if "seed" in d:
        if not isinstance(d["seed"], int):
            raise ConfigError("seed must be an integer")
        cfg.seed = d["seed"]
    corpus = d.get("corpus") or {}
    extra = set(corpus) - {"synth", "manifest", "split", "dropout_split"}
    if extra:
        raise ConfigError(f"unknown keys in 'corpus': {sorted(extra)}")
    if "synth" in corpus:
        cfg.synth = _merge(SynthSpec, DESK_SYNTH, corpus["synth"], "corpus.synth")
    if corpus.get("manifest"):
        cfg.manifest = str(corpus["manifest"])
    for key in ("split", "dropout_split"):
        if key in corpus:
            split = corpus[key]
            if not isinstance(split, (list, tuple)) or len(split) != 3:
                raise ConfigError(f"corpus.{key} must be three ratios")
            setattr(cfg, key, tuple(int(x) for x in split))
            SplitSpec(getattr(cfg, key))
    if "model" in d:
        cfg.model = _merge(CrnnConfig, DESK_BASE, d["model"], "model")
    if "dropout_model" in d:
        cfg.dropout_model = _merge(CrnnConfig, DESK_DROPOUT_BASE, d["dropout_model"], "dropout_model")
    if "schedule" in d:
        cfg.schedule = _merge(TrainSchedule, DESK_SCHEDULE, d["schedule"], "schedule")
    if "sweep" in d:
        cfg.sweep = _merge(SweepOptions, SweepOptions(), d["sweep"], "sweep")
    return cfg


def load_config(path) -> RunConfig:
    """Read a YAML or JSON run configuration; missing sections keep the desk presets."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(data or {})
