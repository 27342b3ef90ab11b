"""Audio ingestion and spectrogram features.

Raw 16-bit PCM audio is framed, windowed and transformed into a time-major
matrix of ``frame_len // 2 + 1`` log-magnitude bins (81 with the default
160-sample frame), then standardised per bin with statistics fitted on the
training set.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import EmptyDatasetError, TooShortError, UnsupportedFormatError, WavParseError

NUM_BINS = 81
STD_FLOOR = 1e-8


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate_hz: int = 16000

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("audio samples must be one-dimensional")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")
        if samples.size and np.max(np.abs(samples)) > 1.0:
            raise ValueError("audio samples must lie in [-1, 1]")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True)
class StftConfig:
    frame_len: int = 160
    hop: int = 80
    window: str = "hann"

    def __post_init__(self):
        if self.frame_len <= 0 or not 0 < self.hop <= self.frame_len:
            raise ValueError(f"need 0 < hop <= frame_len, got {self.hop}, {self.frame_len}")
        if self.window not in _WINDOWS:
            raise ValueError(f"unknown window {self.window!r}; choose from {sorted(_WINDOWS)}")

    @property
    def num_bins(self) -> int:
        return self.frame_len // 2 + 1


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray


def _hann(n):
    # periodic form, the usual choice for STFT analysis
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _hamming(n):
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * np.arange(n) / n)


_WINDOWS = {
    "hann": _hann,
    "hamming": _hamming,
    "rect": np.ones,
}


def read_wav(path) -> AudioClip:
    """Load a 16-bit PCM mono WAV file, scaling samples by 1/32768."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(12)
    if len(head) < 12 or head[:4] != b"RIFF" or head[8:12] != b"WAVE":
        raise WavParseError(f"{path}: not a RIFF/WAVE file")
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        msg = str(exc)
        if "unknown format" in msg:
            raise UnsupportedFormatError(f"{path}: {msg}") from exc
        raise WavParseError(f"{path}: {msg}") from exc
    except EOFError as exc:
        raise WavParseError(f"{path}: truncated header") from exc
    if channels != 1:
        raise UnsupportedFormatError(f"{path}: {channels} channels, only mono is supported")
    if width != 2:
        raise UnsupportedFormatError(f"{path}: {8 * width}-bit samples, only 16-bit is supported")
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioClip(pcm.astype(np.float64) / 32768.0, rate)


def write_wav(path, clip: AudioClip) -> None:
    pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate_hz)
        wf.writeframes(pcm.tobytes())


def frame_count(num_samples: int, frame_len: int, hop: int) -> int:
    return (num_samples - frame_len) // hop + 1


def compute_spectrogram(clip: AudioClip, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Return a ``(T, frame_len // 2 + 1)`` matrix of ``log(1 + |DFT|)`` values.

    Frames that would run past the end of the clip are dropped, so
    ``T = (len - frame_len) // hop + 1``.
    """
    x = clip.samples
    if x.size < cfg.frame_len:
        raise TooShortError(f"clip has {x.size} samples, need at least {cfg.frame_len}")
    n_frames = frame_count(x.size, cfg.frame_len, cfg.hop)
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.frame_len)[:: cfg.hop][:n_frames]
    spectrum = np.fft.rfft(frames * _WINDOWS[cfg.window](cfg.frame_len), axis=1)
    return np.log1p(np.abs(spectrum))


def fit_normalization_stats(specs: Iterable[np.ndarray]) -> NormStats:
    specs = list(specs)
    if not specs:
        raise EmptyDatasetError("no spectrograms to fit normalisation statistics on")
    stacked = np.concatenate([np.asarray(s, dtype=np.float64) for s in specs], axis=0)
    if stacked.shape[0] < 2:
        raise EmptyDatasetError("need at least two frames to estimate a standard deviation")
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), STD_FLOOR)
    return NormStats(mean, std)


def normalize(spec: np.ndarray, stats: NormStats) -> np.ndarray:
    spec = np.asarray(spec, dtype=np.float64)
    if spec.shape[-1] != stats.mean.shape[0]:
        raise ValueError(f"spectrogram has {spec.shape[-1]} bins, stats have {stats.mean.shape[0]}")
    out = (spec - stats.mean) / stats.std
    # a floored std marks a constant bin; rounding in its mean must not be amplified 1e8-fold
    out[..., stats.std <= STD_FLOOR] = 0.0
    return out
