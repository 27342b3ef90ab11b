"""Sweep and ablation harness over the CRNN training loop.

Every experiment is a pure function of (configs, corpus, schedule, seed), so
rows and CSVs are reproducible byte for byte. Wall time is deliberately left
out of the CSVs for that reason. A :class:`Harness` memoises trained runs by
their full configuration, so experiments that share a configuration (the
N=100 model of the filter sweep and the CEL ablation, say) train it once.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from scipy.stats import spearmanr

from .alphabet import DEFAULT_ALPHABET, Alphabet
from .dataset import SplitSpec, SynthSpec, generate_synthetic
from .errors import ConfigError, InsufficientDataError
from .model import CrnnConfig, count_params
from .optim import TrainSchedule
from .train import Corpus, DecodeOptions, TrainHistory, evaluate, prepare_corpus, run_training

log = logging.getLogger(__name__)

# Desk-scale presets: a noisy synthetic corpus and a small recurrent stack so
# the whole filter sweep trains in a few minutes on one CPU core.
DESK_SYNTH = SynthSpec(count=300, min_chars=3, max_chars=8, char_ms=60.0, gap_ms=10.0, noise=0.5)
DESK_BASE = CrnnConfig(filters=100, kernel=11, stride=2, padding="valid", gru_layers=1, gru_hidden=32,
                       dropout=0.0)
DESK_SCHEDULE = TrainSchedule(lr=0.03, momentum=0.95, clip_norm=1.0, epochs=20, batch_size=4, lr_decay=0.85)
DESK_FILTERS = (1, 2, 5, 10, 20, 50, 100, 200)
DESK_KERNELS = (5, 11)
# Wider recurrent layer for the dropout comparison, where overfitting has to be possible.
DESK_DROPOUT_BASE = replace(DESK_BASE, gru_hidden=64)
# Overfit-prone split for the dropout comparison: a third of the corpus trains
# the wider model, leaving many unseen strings in dev and test.
DESK_DROPOUT_SPLIT = (1, 1, 1)


def desk_corpus(spec: SynthSpec = DESK_SYNTH, split=(8, 1, 1)) -> Corpus:
    return prepare_corpus(generate_synthetic(spec), SplitSpec(tuple(split)))


@dataclass
class SweepResult:
    """One trained configuration: CFV after the last epoch plus test error rates."""

    label: str
    config: CrnnConfig
    epochs: int
    cfv: float
    wer: float
    cer: float
    params: int
    best_epoch: int
    history: TrainHistory = field(repr=False)

    def row(self) -> Dict[str, object]:
        c = self.config
        return {
            "label": self.label,
            "fingerprint": c.fingerprint(),
            "filters": c.filters if c.use_cel else 0,
            "kernel": c.kernel if c.use_cel else 0,
            "stride": c.stride if c.use_cel else 1,
            "padding": c.padding if c.use_cel else "none",
            "dropout": c.dropout,
            "cel": int(c.use_cel),
            "gru_layers": c.gru_layers,
            "gru_hidden": c.gru_hidden,
            "params": self.params,
            "epochs": self.epochs,
            "cfv": self.cfv,
            "best_epoch": self.best_epoch,
            "wer": self.wer,
            "cer": self.cer,
        }


class Harness:
    """Trains configurations on one corpus with one schedule and seed, memoising results."""

    def __init__(self, corpus: Corpus, schedule: TrainSchedule = DESK_SCHEDULE, seed: int = 0,
                 alphabet: Alphabet = DEFAULT_ALPHABET):
        self.corpus = corpus
        self.schedule = schedule
        self.seed = seed
        self.alphabet = alphabet
        self._runs: Dict[tuple, SweepResult] = {}

    def run(self, config: CrnnConfig, label: str = "") -> SweepResult:
        key = tuple(sorted(asdict(config).items()))
        if key not in self._runs:
            res = run_training(config, self.corpus, self.schedule, self.seed, alphabet=self.alphabet)
            ev = evaluate(res.model, self.corpus.test, DecodeOptions(), self.alphabet)
            self._runs[key] = SweepResult(label or config.fingerprint(), config, self.schedule.epochs,
                                          res.history.cfv[-1], ev.wer, ev.cer,
                                          count_params(res.model)["total"], res.best_epoch, res.history)
        cached = self._runs[key]
        return cached if not label or label == cached.label else replace(cached, label=label)

    def shortest_utterance(self) -> int:
        parts = (self.corpus.train, self.corpus.dev, self.corpus.test)
        return min(ex.features.shape[0] for part in parts for ex in part)


# ---------------------------------------------------------------------------
# Experiments


@dataclass
class FilterSweep:
    rows: List[SweepResult]
    spearman: Optional[float]


def filter_sweep(h: Harness, filter_counts: Sequence[int], base: CrnnConfig = DESK_BASE) -> FilterSweep:
    if not filter_counts:
        raise ConfigError("filter sweep needs at least one filter count")
    rows = [h.run(replace(base, filters=int(n), use_cel=True), f"N{n}") for n in filter_counts]
    rho = None
    if len(rows) >= 2:
        rho = spearman([r.config.filters for r in rows], [r.cfv for r in rows])
    return FilterSweep(rows, rho)


@dataclass
class KernelCompare:
    rows: List[SweepResult]
    spread: float
    skipped: List[int]


def kernel_compare(h: Harness, kernels: Sequence[int], filters: int = 100,
                   base: CrnnConfig = DESK_BASE) -> KernelCompare:
    if len(kernels) < 2:
        raise ConfigError("kernel comparison needs at least two kernels")
    shortest = h.shortest_utterance()
    rows, skipped = [], []
    for k in kernels:
        if k > shortest:
            log.warning("skipping kernel %d: longer than the shortest utterance (%d frames)", k, shortest)
            skipped.append(int(k))
            continue
        rows.append(h.run(replace(base, filters=filters, kernel=int(k), use_cel=True), f"K{k}"))
    cfvs = [r.cfv for r in rows]
    return KernelCompare(rows, max(cfvs) - min(cfvs) if cfvs else 0.0, skipped)


@dataclass
class PaddingCompare:
    rows: List[SweepResult]
    max_gap: Optional[float]
    gap_epoch: Optional[int]


def padding_compare(h: Harness, modes: Sequence[str] = ("valid", "same"),
                    config: CrnnConfig = DESK_BASE) -> PaddingCompare:
    """CFV curves per padding mode and the largest per-epoch gap between any two of them."""
    if not modes:
        raise ConfigError("padding comparison needs at least one mode")
    rows = [h.run(replace(config, padding=m, use_cel=True), m) for m in modes]
    if len(rows) < 2:
        return PaddingCompare(rows, None, None)
    curves = np.array([r.history.cfv for r in rows])
    gaps = curves.max(axis=0) - curves.min(axis=0)
    return PaddingCompare(rows, float(gaps.max()), int(np.argmax(gaps)) + 1)


@dataclass
class CelAblation:
    cel: SweepResult
    baseline: SweepResult

    @property
    def rows(self) -> List[SweepResult]:
        return [self.cel, self.baseline]


def cel_ablation(h: Harness, config: CrnnConfig = DESK_BASE) -> CelAblation:
    """Same data, seed and recurrent stack with and without the conv embedding layer."""
    cel = h.run(replace(config, use_cel=True), f"N{config.filters}")
    base = h.run(no_cel(config), "nocel")
    return CelAblation(cel, base)


def no_cel(config: CrnnConfig) -> CrnnConfig:
    # filters/kernel are unused without the CEL; pin them so the run memoises once.
    return replace(config, use_cel=False, filters=1, kernel=1, stride=1, padding="valid")


def dropout_compare(h: Harness, rates: Sequence[float] = (0.0, 0.25),
                    config: CrnnConfig = DESK_DROPOUT_BASE) -> List[SweepResult]:
    configs = [replace(config, dropout=float(r)) for r in rates]  # validates every rate up front
    return [h.run(c, f"dropout{c.dropout:g}") for c in configs]


@dataclass
class Correlation:
    spearman: Optional[float]
    pairs: List[tuple]
    note: str = ""


def cfv_wer_correlation(rows: Sequence[SweepResult]) -> Correlation:
    pairs = [(r.cfv, r.wer) for r in rows]
    if len(pairs) < 5:
        raise InsufficientDataError(f"need at least 5 (CFV, WER) pairs, got {len(pairs)}")
    cfv, wer = zip(*pairs)
    rho = spearman(cfv, wer)
    return Correlation(rho, pairs, "" if rho is not None else "undefined: a column is constant")


def spearman(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    """Spearman rank correlation, or ``None`` when either input is constant."""
    if len(set(x)) < 2 or len(set(y)) < 2:
        return None
    return float(spearmanr(x, y).statistic)


# ---------------------------------------------------------------------------
# Module-level entry points with fresh harnesses


def _harness(corpus: Optional[Corpus], schedule: Optional[TrainSchedule], epochs: Optional[int], seed: int,
             split=(8, 1, 1)):
    schedule = schedule or DESK_SCHEDULE
    if epochs is not None:
        schedule = replace(schedule, epochs=epochs)
    return Harness(corpus if corpus is not None else desk_corpus(split=split), schedule, seed)


def run_filter_sweep(filter_counts=DESK_FILTERS, epochs: Optional[int] = None, base: CrnnConfig = DESK_BASE,
                     seed: int = 0, corpus: Optional[Corpus] = None,
                     schedule: Optional[TrainSchedule] = None) -> FilterSweep:
    return filter_sweep(_harness(corpus, schedule, epochs, seed), filter_counts, base)


def run_kernel_compare(kernels=DESK_KERNELS, filters: int = 100, epochs: Optional[int] = None,
                       seed: int = 0, base: CrnnConfig = DESK_BASE, corpus: Optional[Corpus] = None,
                       schedule: Optional[TrainSchedule] = None) -> KernelCompare:
    return kernel_compare(_harness(corpus, schedule, epochs, seed), kernels, filters, base)


def run_padding_compare(modes=("valid", "same"), config: CrnnConfig = DESK_BASE, seed: int = 0,
                        epochs: Optional[int] = None, corpus: Optional[Corpus] = None,
                        schedule: Optional[TrainSchedule] = None) -> PaddingCompare:
    return padding_compare(_harness(corpus, schedule, epochs, seed), modes, config)


def run_cel_ablation(config: CrnnConfig = DESK_BASE, epochs: Optional[int] = None, seed: int = 0,
                     corpus: Optional[Corpus] = None, schedule: Optional[TrainSchedule] = None) -> CelAblation:
    return cel_ablation(_harness(corpus, schedule, epochs, seed), config)


def run_dropout_compare(rates=(0.0, 0.25), config: CrnnConfig = DESK_DROPOUT_BASE, seed: int = 0,
                        epochs: Optional[int] = None, corpus: Optional[Corpus] = None,
                        schedule: Optional[TrainSchedule] = None) -> List[SweepResult]:
    for r in rates:
        if not 0.0 <= r < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {r}")
    return dropout_compare(_harness(corpus, schedule, epochs, seed, DESK_DROPOUT_SPLIT), rates, config)


def run_cfv_wer_correlation(rows: Sequence[SweepResult]) -> Correlation:
    return cfv_wer_correlation(rows)


# ---------------------------------------------------------------------------
# Output


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_rows_csv(path, rows: Iterable[SweepResult]) -> Path:
    rows = [r.row() for r in rows]
    if not rows:
        raise InsufficientDataError("no rows to write")
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(rows[0]))
        for r in rows:
            w.writerow([_fmt(v) for v in r.values()])
    return path


def write_curves_csv(path, rows: Sequence[SweepResult]) -> Path:
    """Per-epoch validation CFV, one column per configuration."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch"] + [r.label for r in rows])
        for i in range(max(len(r.history.records) for r in rows)):
            vals = [r.history.records[i].cfv if i < len(r.history.records) else math.nan for r in rows]
            w.writerow([i + 1] + [_fmt(v) for v in vals])
    return path


def write_pairs_csv(path, corr: Correlation) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cfv", "wer"])
        for c, e in corr.pairs:
            w.writerow([_fmt(c), _fmt(e)])
    return path


def write_gnuplot(path, curves_csv, title: str, ylabel: str = "validation CTC cost") -> Path:
    """A gnuplot script drawing every column of ``curves_csv`` against the first."""
    path = Path(path)
    with open(curves_csv, encoding="utf-8") as fh:
        ncols = len(next(csv.reader(fh)))
    name = Path(curves_csv).name
    script = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        f"set title '{title}'",
        "set xlabel 'epoch'",
        f"set ylabel '{ylabel}'",
        "set terminal pngcairo size 800,500",
        f"set output '{Path(name).with_suffix('.png')}'",
        f"plot for [i=2:{ncols}] '{name}' using 1:i with linespoints",
    ]
    path.write_text("\n".join(script) + "\n", encoding="utf-8")
    return path
