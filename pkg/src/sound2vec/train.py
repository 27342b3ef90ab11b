"""Training loop, CTC cost evaluation and transcription accuracy."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .alphabet import DEFAULT_ALPHABET, Alphabet
from .ctc import ctc_batch_loss
from .dataset import Example, SplitSpec, Utterance, batch_examples, featurize, filter_feasible, split_dataset
from .decode import beam_decode, greedy_decode
from .errors import DivergenceError, EmptyDatasetError, NonFiniteGradientError
from .frontend import NormStats, StftConfig, compute_spectrogram, fit_normalization_stats, normalize
from .lm import CharNGramLM
from .metrics import corpus_error_rate
from .model import CrnnConfig, CrnnModel, build_crnn, save_checkpoint
from .optim import NesterovState, TrainSchedule, clip_gradients, nesterov_step

log = logging.getLogger(__name__)


@dataclass
class Corpus:
    train: List[Example]
    dev: List[Example]
    test: List[Example]
    norm_stats: NormStats


def prepare_corpus(utterances: Sequence[Utterance], split: SplitSpec = SplitSpec(),
                   stft: StftConfig = StftConfig(), alphabet: Alphabet = DEFAULT_ALPHABET,
                   norm_stats: Optional[NormStats] = None) -> Corpus:
    """Split, compute spectrograms and normalise.

    Statistics come from the training part unless ``norm_stats`` is given
    (for example, the ones stored in a checkpoint).
    """
    train_u, dev_u, test_u = split_dataset(utterances, split)
    frontend = lambda clip: compute_spectrogram(clip, stft)
    train, dev, test = (featurize(part, frontend, alphabet) for part in (train_u, dev_u, test_u))
    stats = norm_stats if norm_stats is not None else fit_normalization_stats(ex.features for ex in train)
    for part in (train, dev, test):
        for ex in part:
            ex.features = normalize(ex.features, stats)
    return Corpus(train, dev, test, stats)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    cfv: float
    wall_time: float


@dataclass
class TrainHistory:
    records: List[EpochRecord] = field(default_factory=list)

    @property
    def cfv(self) -> List[float]:
        return [r.cfv for r in self.records]

    @property
    def train_loss(self) -> List[float]:
        return [r.train_loss for r in self.records]

    def cfv_at(self, epoch: int) -> float:
        for r in self.records:
            if r.epoch == epoch:
                return r.cfv
        raise KeyError(f"no record for epoch {epoch}")


@dataclass
class TrainResult:
    model: CrnnModel
    history: TrainHistory
    best_epoch: int
    best_cfv: float
    optimizer: NesterovState
    skipped: int = 0


def _epoch_seed(seed: int, epoch: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, stream]))


def mean_ctc_loss(model: CrnnModel, examples: Sequence[Example], batch_size: int = 64,
                  blank: int = DEFAULT_ALPHABET.blank_index) -> float:
    """Mean per-utterance CTC loss at inference (the validation cost value)."""
    if not examples:
        raise EmptyDatasetError("no examples to evaluate")
    total = 0.0
    for batch in batch_examples(examples, batch_size):
        log_probs, out_len, _ = model.forward(batch.features, batch.lengths, training=False)
        losses, _ = ctc_batch_loss(log_probs, out_len, batch.labels, blank)
        total += float(losses.sum())
    return total / len(examples)


def train_step(model: CrnnModel, batch, schedule: TrainSchedule, state: NesterovState,
               rng: np.random.Generator, blank: int, lr: float) -> np.ndarray:
    log_probs, out_len, cache = model.forward(batch.features, batch.lengths, training=True, rng=rng)
    losses, grad = ctc_batch_loss(log_probs, out_len, batch.labels, blank)
    if not np.all(np.isfinite(losses)):
        raise DivergenceError("non-finite CTC loss during training")
    grads = model.backward(cache, grad / len(batch))
    grads = clip_gradients(grads, schedule.clip_norm)
    nesterov_step(model.params(), grads, state, lr, schedule.momentum)
    return losses


def run_training(config: CrnnConfig, corpus: Corpus, schedule: TrainSchedule = TrainSchedule(),
                 seed: int = 0, checkpoint_dir=None, alphabet: Alphabet = DEFAULT_ALPHABET,
                 on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> TrainResult:
    """Train with Nesterov SGD, recording validation CTC cost after every epoch.

    The returned model holds the parameters of the epoch with the lowest
    validation cost. Everything is a deterministic function of ``seed``.
    """
    model = build_crnn(config, seed)
    out_len = lambda n: int(model.output_lengths([n])[0]) if n >= model.min_input_frames() else 0
    train = filter_feasible(corpus.train, out_len)
    dev = filter_feasible(corpus.dev, out_len)
    skipped = len(corpus.train) + len(corpus.dev) - len(train) - len(dev)
    if not train or not dev:
        raise EmptyDatasetError("no feasible training or validation utterances for this model")

    blank = alphabet.blank_index
    state = NesterovState.zeros_like(model.params())
    history = TrainHistory()
    best = (np.inf, 0, None, None)
    for epoch in range(1, schedule.epochs + 1):
        start = time.perf_counter()
        batches = batch_examples(train, schedule.batch_size, seed=int(_epoch_seed(seed, epoch, 0).integers(2**31)))
        drop_rng = _epoch_seed(seed, epoch, 1)
        lr = schedule.lr_at(epoch)
        total = 0.0
        for batch in batches:
            try:
                total += float(train_step(model, batch, schedule, state, drop_rng, blank, lr).sum())
            except NonFiniteGradientError as exc:
                raise DivergenceError(f"epoch {epoch}: {exc}") from exc
        cfv = mean_ctc_loss(model, dev, blank=blank)
        if not np.isfinite(cfv):
            raise DivergenceError(f"validation cost became {cfv} at epoch {epoch}")
        rec = EpochRecord(epoch, total / len(train), cfv, time.perf_counter() - start)
        history.records.append(rec)
        log.info("%s epoch %d train %.4f cfv %.4f (%.1fs)", config.fingerprint(), epoch, rec.train_loss,
                 cfv, rec.wall_time)
        if on_epoch is not None:
            on_epoch(rec)
        if cfv < best[0]:
            best = (cfv, epoch, {k: v.copy() for k, v in model.params().items()},
                    {k: v.copy() for k, v in state.velocity.items()})
            if checkpoint_dir is not None:
                save_checkpoint(Path(checkpoint_dir) / "best.ckpt", model, state, corpus.norm_stats, epoch,
                                extra={"seed": seed, "cfv": cfv})
    if checkpoint_dir is not None:
        save_checkpoint(Path(checkpoint_dir) / "last.ckpt", model, state, corpus.norm_stats,
                        schedule.epochs, extra={"seed": seed})
    for name, p in model.params().items():
        p[...] = best[2][name]
    return TrainResult(model, history, best[1], best[0], state, skipped)


@dataclass
class DecodeOptions:
    method: str = "greedy"
    beam_width: int = 8
    lm: Optional[CharNGramLM] = None
    lm_weight: float = 0.0
    insertion_bonus: float = 0.0


def transcribe_features(model: CrnnModel, features, options: DecodeOptions = DecodeOptions(),
                        alphabet: Alphabet = DEFAULT_ALPHABET) -> str:
    log_probs, _, _ = model.forward(features, training=False)
    return decode_log_probs(log_probs[0], options, alphabet)


def decode_log_probs(log_probs, options: DecodeOptions, alphabet: Alphabet = DEFAULT_ALPHABET) -> str:
    if options.method == "greedy":
        return greedy_decode(log_probs, alphabet)
    return beam_decode(log_probs, options.beam_width, options.lm, options.lm_weight, options.insertion_bonus,
                       alphabet)


@dataclass
class Evaluation:
    wer: float
    cer: float
    hypotheses: List[str]
    references: List[str]


def evaluate(model: CrnnModel, examples: Sequence[Example], options: DecodeOptions = DecodeOptions(),
             alphabet: Alphabet = DEFAULT_ALPHABET, batch_size: int = 64) -> Evaluation:
    """Corpus-level WER and CER over ``examples``."""
    hyps, refs = [], []
    for batch in batch_examples(examples, batch_size):
        log_probs, out_len, _ = model.forward(batch.features, batch.lengths, training=False)
        for b in range(len(batch)):
            hyps.append(decode_log_probs(log_probs[b, : out_len[b]], options, alphabet))
        refs.extend(batch.transcripts)
    return Evaluation(corpus_error_rate(refs, hyps, "word"), corpus_error_rate(refs, hyps, "char"), hyps, refs)
