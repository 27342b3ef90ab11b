"""Corpora, splitting, batching and the synthetic two-tone corpus."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .alphabet import DEFAULT_ALPHABET, Alphabet, encode_transcript
from .ctc import min_frames
from .errors import ConfigError, DataError, TooFewUtterancesError
from .frontend import AudioClip, StftConfig, compute_spectrogram, read_wav, write_wav

log = logging.getLogger(__name__)


@dataclass
class Utterance:
    audio: Union[AudioClip, str, Path]
    transcript: str
    uid: str = ""

    def __post_init__(self):
        if not self.transcript.strip():
            raise DataError(f"utterance {self.uid!r} has an empty transcript")

    def load(self) -> AudioClip:
        if isinstance(self.audio, AudioClip):
            return self.audio
        return read_wav(self.audio)


# ---------------------------------------------------------------------------
# Manifests


def read_manifest(path) -> List[Utterance]:
    """One ``wav-path<TAB>transcript`` record per line; relative paths resolve against the manifest."""
    path = Path(path)
    out = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            wav, text = line.split("\t", 1)
        except ValueError:
            raise DataError(f"{path}:{lineno}: expected 'wav-path<TAB>transcript'") from None
        wav_path = Path(wav)
        if not wav_path.is_absolute():
            wav_path = path.parent / wav_path
        out.append(Utterance(wav_path, text, uid=f"{path.stem}:{lineno}"))
    return out


def write_manifest(path, utterances: Sequence[Utterance], audio_dir=None) -> None:
    """Write a manifest, saving in-memory audio as WAV files under ``audio_dir``."""
    path = Path(path)
    audio_dir = Path(audio_dir) if audio_dir is not None else path.parent / "wav"
    audio_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, utt in enumerate(utterances):
        if isinstance(utt.audio, AudioClip):
            wav = audio_dir / f"{utt.uid or f'utt{i:05d}'}.wav"
            write_wav(wav, utt.audio)
        else:
            wav = Path(utt.audio)
        try:
            rel = wav.resolve().relative_to(path.parent.resolve())
        except ValueError:
            rel = wav.resolve()
        lines.append(f"{rel}\t{utt.transcript}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Splitting


@dataclass(frozen=True)
class SplitSpec:
    ratios: Tuple[int, int, int] = (8, 1, 1)
    seed: int = 0

    def __post_init__(self):
        if len(self.ratios) != 3 or min(self.ratios) < 0 or sum(self.ratios) <= 0:
            raise ConfigError(f"invalid split ratios {self.ratios}")


def split_dataset(utterances: Sequence, spec: SplitSpec = SplitSpec()):
    """Shuffle and cut into (train, dev, test); dev and test sizes are floored."""
    items = list(utterances)
    if len(items) < 10:
        raise TooFewUtterancesError(f"need at least 10 utterances to split, got {len(items)}")
    order = np.random.default_rng(spec.seed).permutation(len(items))
    total = sum(spec.ratios)
    n_dev = len(items) * spec.ratios[1] // total
    n_test = len(items) * spec.ratios[2] // total
    n_train = len(items) - n_dev - n_test
    shuffled = [items[i] for i in order]
    return shuffled[:n_train], shuffled[n_train : n_train + n_dev], shuffled[n_train + n_dev :]


# ---------------------------------------------------------------------------
# Features and batches


@dataclass
class Example:
    """A featurised utterance: spectrogram, encoded labels and the original text."""

    features: np.ndarray
    labels: List[int]
    transcript: str
    uid: str = ""


@dataclass
class Batch:
    features: np.ndarray  # (B, T_max, bins), zero beyond each length
    lengths: np.ndarray
    labels: List[List[int]]
    label_lengths: np.ndarray
    transcripts: List[str]

    def __len__(self):
        return len(self.labels)


def featurize(utterances: Sequence[Utterance], frontend: Callable[[AudioClip], np.ndarray],
              alphabet: Alphabet = DEFAULT_ALPHABET) -> List[Example]:
    return [
        Example(frontend(u.load()), encode_transcript(u.transcript, alphabet), u.transcript, u.uid)
        for u in utterances
    ]


def filter_feasible(examples: Sequence[Example], output_length: Callable[[int], int]) -> List[Example]:
    """Drop (and log) examples whose transcript cannot fit into the model's output frames."""
    kept = []
    for ex in examples:
        frames = output_length(ex.features.shape[0])
        if frames < min_frames(ex.labels):
            log.warning("skipping %s: %d output frames cannot emit %r", ex.uid or "utterance",
                        frames, ex.transcript)
            continue
        kept.append(ex)
    return kept


def collate(examples: Sequence[Example]) -> Batch:
    lengths = np.array([ex.features.shape[0] for ex in examples], dtype=np.int64)
    bins = examples[0].features.shape[1]
    feats = np.zeros((len(examples), int(lengths.max()), bins))
    for i, ex in enumerate(examples):
        feats[i, : lengths[i]] = ex.features
    labels = [list(ex.labels) for ex in examples]
    return Batch(feats, lengths, labels, np.array([len(l) for l in labels], dtype=np.int64),
                 [ex.transcript for ex in examples])


def batch_examples(examples: Sequence[Example], batch_size: int, seed: Optional[int] = None) -> List[Batch]:
    """Collate into batches, shuffling the order first when ``seed`` is given."""
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    order = np.arange(len(examples))
    if seed is not None:
        order = np.random.default_rng(seed).permutation(len(examples))
    return [collate([examples[i] for i in order[k : k + batch_size]])
            for k in range(0, len(order), batch_size)]


def make_batches(utterances: Sequence[Utterance], frontend: Callable[[AudioClip], np.ndarray],
                 batch_size: int, seed: Optional[int] = None,
                 output_length: Optional[Callable[[int], int]] = None,
                 alphabet: Alphabet = DEFAULT_ALPHABET) -> List[Batch]:
    examples = featurize(utterances, frontend, alphabet)
    if output_length is not None:
        examples = filter_feasible(examples, output_length)
    return batch_examples(examples, batch_size, seed)


# ---------------------------------------------------------------------------
# Synthetic corpus

DEFAULT_CHARSET = "abcdefghijklmnopqrstuvwxyz '"


@dataclass
class SynthSpec:
    """Random strings rendered as per-character two-tone bursts.

    Character ``i`` of ``charset`` sounds at frequency bins ``3 + 2i`` and
    ``23 + 2i`` (bin width ``sample_rate / 160``), followed by ``gap_ms`` of
    silence so repeated characters stay separable.
    """

    count: int = 300
    min_chars: int = 3
    max_chars: int = 8
    char_ms: float = 50.0
    gap_ms: float = 10.0
    noise: float = 0.05
    amplitude: float = 0.35
    space_prob: float = 0.15
    charset: str = DEFAULT_CHARSET
    sample_rate_hz: int = 16000
    seed: int = 0

    def __post_init__(self):
        if self.count < 1 or not 1 <= self.min_chars <= self.max_chars:
            raise ConfigError("invalid synthetic corpus size or length range")
        if not 0 <= self.gap_ms < self.char_ms:
            raise ConfigError("gap_ms must be shorter than char_ms")
        if len(set(self.charset)) != len(self.charset) or not self.charset.strip():
            raise ConfigError("charset must be non-empty with distinct characters")
        top = max(self.tone_frequencies().values(), key=lambda p: p[1])[1]
        if top >= self.sample_rate_hz / 2:
            raise ConfigError("tone frequencies exceed the Nyquist limit for this charset")
        if 2 * self.amplitude > 1.0:
            raise ConfigError("two tones at this amplitude would clip the [-1, 1] range")

    @property
    def bin_hz(self) -> float:
        return self.sample_rate_hz / 160.0

    def tone_bins(self):
        return {ch: (3 + 2 * i, 23 + 2 * i) for i, ch in enumerate(self.charset)}

    def tone_frequencies(self):
        return {ch: (lo * self.bin_hz, hi * self.bin_hz) for ch, (lo, hi) in self.tone_bins().items()}

    @property
    def samples_per_char(self) -> int:
        return int(round(self.char_ms * self.sample_rate_hz / 1000.0))


def _random_text(rng, spec: SynthSpec) -> str:
    letters = [c for c in spec.charset if c != " "]
    n = int(rng.integers(spec.min_chars, spec.max_chars + 1))
    out = []
    for i in range(n):
        inner = 0 < i < n - 1 and out[-1] != " "
        if " " in spec.charset and inner and rng.random() < spec.space_prob:
            out.append(" ")
        else:
            out.append(letters[int(rng.integers(len(letters)))])
    return "".join(out)


def render_text(text: str, spec: SynthSpec, rng: Optional[np.random.Generator] = None) -> AudioClip:
    """Audio for ``text``: one tone burst per character plus optional Gaussian noise."""
    per = spec.samples_per_char
    tone_len = per - int(round(spec.gap_ms * spec.sample_rate_hz / 1000.0))
    t = np.arange(tone_len) / spec.sample_rate_hz
    ramp = min(tone_len // 4, int(0.004 * spec.sample_rate_hz))
    envelope = np.ones(tone_len)
    if ramp > 0:
        rise = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        envelope[:ramp] = rise
        envelope[tone_len - ramp :] = rise[::-1]
    freqs = spec.tone_frequencies()
    audio = np.zeros(per * len(text))
    for i, ch in enumerate(text):
        f1, f2 = freqs[ch]
        burst = spec.amplitude * (np.sin(2 * np.pi * f1 * t) + np.sin(2 * np.pi * f2 * t)) * envelope
        audio[i * per : i * per + tone_len] = burst
    if rng is not None and spec.noise > 0:
        audio += spec.noise * rng.standard_normal(audio.size)
    return AudioClip(np.clip(audio, -1.0, 1.0), spec.sample_rate_hz)


def generate_synthetic(spec: SynthSpec) -> List[Utterance]:
    rng = np.random.default_rng(spec.seed)
    out = []
    for i in range(spec.count):
        text = _random_text(rng, spec)
        out.append(Utterance(render_text(text, spec, rng), text, uid=f"synth{i:05d}"))
    return out


def default_frontend(cfg: StftConfig = StftConfig()):
    return lambda clip: compute_spectrogram(clip, cfg)
