"""CRNN acoustic model, the standalone CSE classifier, and checkpoints.

The CRNN is ``spectrogram -> conv embedding layer -> stacked bidirectional
GRUs -> dense -> log-softmax``. Dropout is applied to each GRU's input by
default (``dropout_placement="output"`` moves it to each GRU's output). Setting
``use_cel=False`` gives the RNN-only baseline, where the GRU stack reads the
81-bin spectrogram at full frame rate.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from . import nn
from .errors import CheckpointError, ConfigError, TooShortError
from .frontend import NUM_BINS, NormStats
from .optim import NesterovState


@dataclass
class CrnnConfig:
    filters: int = 200
    kernel: int = 11
    stride: int = 2
    padding: str = "valid"
    gru_layers: int = 4
    gru_hidden: int = 256
    dropout: float = 0.25
    dropout_placement: str = "input"
    alphabet_size: int = 30
    use_cel: bool = True
    activation: str = "linear"
    in_bins: int = NUM_BINS

    def __post_init__(self):
        for name in ("filters", "kernel", "stride", "gru_hidden", "alphabet_size", "in_bins"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.gru_layers < 0:
            raise ConfigError("gru_layers must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.padding not in nn.PADDING_MODES:
            raise ConfigError(f"padding must be one of {nn.PADDING_MODES}")
        if self.dropout_placement not in ("input", "output"):
            raise ConfigError("dropout_placement must be 'input' or 'output'")
        if self.activation not in nn.ACTIVATIONS:
            raise ConfigError(f"activation must be one of {nn.ACTIVATIONS}")

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "CrnnConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model options: {sorted(unknown)}")
        return cls(**d)

    def fingerprint(self) -> str:
        if not self.use_cel:
            core = "nocel"
        else:
            core = f"N{self.filters}-K{self.kernel}-s{self.stride}-{self.padding}"
        return f"{core}-L{self.gru_layers}-H{self.gru_hidden}-d{self.dropout:g}"


class CrnnModel:
    def __init__(self, config: CrnnConfig, cel: Optional[nn.ConvEmbeddingLayer], grus: List[nn.GruLayer],
                 dense: nn.DenseLayer):
        self.config = config
        self.cel = cel
        self.grus = grus
        self.dense = dense

    def layers(self):
        out = []
        if self.cel is not None:
            out.append(("cel", self.cel))
        out += [(f"gru{i}", g) for i, g in enumerate(self.grus)]
        out.append(("dense", self.dense))
        return out

    def params(self) -> Dict[str, np.ndarray]:
        """Every trainable array, in a fixed order, keyed ``<layer>.<name>``."""
        return {f"{lname}.{k}": v for lname, layer in self.layers() for k, v in layer.params().items()}

    def layer_widths(self) -> List[int]:
        widths = [self.cel.filters] if self.cel is not None else []
        widths += [2 * g.hidden for g in self.grus]
        widths.append(self.dense.weight.shape[1])
        return widths

    @property
    def embedding_matrix(self) -> Optional[np.ndarray]:
        return None if self.cel is None else self.cel.weight

    def output_lengths(self, lengths) -> np.ndarray:
        lengths = np.asarray(lengths, dtype=np.int64)
        return lengths if self.cel is None else self.cel.output_lengths(lengths)

    def min_input_frames(self) -> int:
        return 1 if self.cel is None or self.cel.padding == "same" else self.cel.kernel

    def forward(self, x, lengths=None, training=False, rng=None):
        """Return ``(log_probs (B, T', M), output_lengths, cache)`` for a padded batch."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if lengths is None:
            lengths = np.full(x.shape[0], x.shape[1], dtype=np.int64)
        lengths = np.asarray(lengths, dtype=np.int64)
        cache: Dict[str, Any] = {}
        h = x
        if self.cel is not None:
            h, lengths, cache["cel"] = nn.conv1d_forward(h, self.cel, lengths)
        cache["gru"], cache["drop"] = [], []
        on_input = self.config.dropout_placement == "input"
        for g in self.grus:
            if on_input:
                h, mask = nn.dropout_apply(h, self.config.dropout, rng, training)
            h, c = nn.bigru_forward(h, g, lengths)
            if not on_input:
                h, mask = nn.dropout_apply(h, self.config.dropout, rng, training)
            cache["gru"].append(c)
            cache["drop"].append(mask)
        logits, cache["dense"] = nn.dense_forward(h, self.dense)
        log_probs = nn.log_softmax(logits)
        cache["log_probs"] = log_probs
        return log_probs, lengths, cache

    def backward(self, cache, grad_log_probs) -> Dict[str, np.ndarray]:
        """Gradients of every parameter given the loss gradient over log-probabilities."""
        if np.shape(grad_log_probs) != cache["log_probs"].shape:
            raise ValueError("gradient does not match the cached forward pass")
        grads: Dict[str, np.ndarray] = {}
        g = nn.log_softmax_backward(cache["log_probs"], grad_log_probs)
        g, gd = nn.dense_backward(cache["dense"], g, self.dense)
        grads.update({f"dense.{k}": v for k, v in gd.items()})
        on_input = self.config.dropout_placement == "input"
        for i in range(len(self.grus) - 1, -1, -1):
            mask = cache["drop"][i]
            if mask is not None and not on_input:
                g = g * mask
            g, gg = nn.bigru_backward(cache["gru"][i], g, self.grus[i])
            if mask is not None and on_input:
                g = g * mask
            grads.update({f"gru{i}.{k}": v for k, v in gg.items()})
        if self.cel is not None:
            _, gc = nn.conv1d_backward(cache["cel"], g, self.cel)
            grads.update({f"cel.{k}": v for k, v in gc.items()})
        return {k: grads[k] for k in self.params()}


def build_crnn(cfg: CrnnConfig, seed: int = 0) -> CrnnModel:
    rng = np.random.default_rng(seed)
    width = cfg.in_bins
    cel = None
    if cfg.use_cel:
        cel = nn.ConvEmbeddingLayer.init(rng, width, cfg.filters, cfg.kernel, cfg.stride, cfg.padding,
                                         cfg.activation)
        width = cfg.filters
    grus = []
    for _ in range(cfg.gru_layers):
        grus.append(nn.GruLayer.init(rng, width, cfg.gru_hidden))
        width = 2 * cfg.gru_hidden
    dense = nn.DenseLayer.init(rng, width, cfg.alphabet_size)
    return CrnnModel(cfg, cel, grus, dense)


def crnn_forward(model: CrnnModel, spec, training=False, rng=None) -> np.ndarray:
    """Log-probability rows ``(T', M)`` for one spectrogram."""
    spec = np.asarray(spec, dtype=np.float64)
    if spec.shape[-1] != model.config.in_bins:
        raise ValueError(f"expected {model.config.in_bins} bins, got {spec.shape[-1]}")
    if spec.shape[0] < model.min_input_frames():
        raise TooShortError(f"{spec.shape[0]} frames is shorter than the kernel")
    log_probs, _, _ = model.forward(spec, training=training, rng=rng)
    return log_probs[0]


def crnn_backward(model: CrnnModel, cache, ctc_grad) -> Dict[str, np.ndarray]:
    return model.backward(cache, ctc_grad)


def count_params(model) -> Dict[str, int]:
    """Trainable scalars per layer plus a ``"total"`` entry."""
    counts: Dict[str, int] = {}
    for name, layer in model.layers():
        counts[name] = int(sum(v.size for v in layer.params().values()))
    counts["total"] = sum(counts.values())
    return counts


def closed_form_param_count(cfg: CrnnConfig) -> Dict[str, int]:
    """Parameter count from the configuration alone, without building anything."""
    counts = {}
    width = cfg.in_bins
    if cfg.use_cel:
        counts["cel"] = cfg.filters * cfg.kernel * cfg.in_bins + cfg.filters
        width = cfg.filters
    H = cfg.gru_hidden
    for i in range(cfg.gru_layers):
        counts[f"gru{i}"] = 2 * 3 * (width * H + H * H + H)
        width = 2 * H
    counts["dense"] = width * cfg.alphabet_size + cfg.alphabet_size
    counts["total"] = sum(counts.values())
    return counts


# ---------------------------------------------------------------------------
# Character Set Embedding classifier


@dataclass
class CseConfig:
    study_window: int = 11
    hidden: int = 64
    alphabet_size: int = 30
    in_bins: int = NUM_BINS

    def __post_init__(self):
        if min(self.study_window, self.hidden, self.alphabet_size, self.in_bins) < 1:
            raise ConfigError("CSE dimensions must all be >= 1")


class CseModel:
    """One linear conv layer spanning the whole study window, then softmax.

    The convolution kernel covers all ``S`` frames, so one window yields a
    single hidden vector ``h = E x + b``.
    """

    def __init__(self, config: CseConfig, conv: nn.ConvEmbeddingLayer, dense: nn.DenseLayer):
        self.config = config
        self.conv = conv
        self.dense = dense

    def layers(self):
        return [("cel", self.conv), ("dense", self.dense)]

    def params(self):
        return {f"{lname}.{k}": v for lname, layer in self.layers() for k, v in layer.params().items()}

    @property
    def embedding_matrix(self) -> np.ndarray:
        return self.conv.weight


def build_cse(cfg: CseConfig, seed: int = 0) -> CseModel:
    rng = np.random.default_rng(seed)
    conv = nn.ConvEmbeddingLayer.init(rng, cfg.in_bins, cfg.hidden, cfg.study_window)
    dense = nn.DenseLayer.init(rng, cfg.hidden, cfg.alphabet_size)
    return CseModel(cfg, conv, dense)


def embedding_matrix(model) -> np.ndarray:
    return model.embedding_matrix


def _cse_windows(model: CseModel, windows):
    w = np.asarray(windows, dtype=np.float64)
    if w.ndim == 2:
        w = w[None]
    S = model.config.study_window
    if w.shape[1] < S:
        raise TooShortError(f"window of {w.shape[1]} frames is shorter than the study window {S}")
    start = (w.shape[1] - S) // 2
    return w[:, start : start + S]


def cse_forward(model: CseModel, window):
    """Character probabilities for one ``(S, bins)`` window, or a batch of them.

    Longer windows are cropped to their central ``S`` frames.
    """
    probs, _ = _cse_forward_cached(model, window)
    return probs[0] if np.ndim(window) == 2 else probs


def _cse_forward_cached(model, windows):
    w = _cse_windows(model, windows)
    h, _, conv_cache = nn.conv1d_forward(w, model.conv)
    h = h[:, 0]
    logits, dense_cache = nn.dense_forward(h, model.dense)
    return nn.softmax(logits), (conv_cache, dense_cache)


def cse_loss(model: CseModel, window, label: int):
    probs = cse_forward(model, window)
    target = np.zeros(model.config.alphabet_size)
    target[label] = 1.0
    loss, _ = nn.cross_entropy_loss(probs, target)
    return loss


def cse_loss_and_grads(model: CseModel, windows, labels):
    """Mean cross-entropy over a batch of windows and its parameter gradients."""
    labels = np.asarray(labels)
    probs, (conv_cache, dense_cache) = _cse_forward_cached(model, windows)
    B = probs.shape[0]
    M = model.config.alphabet_size
    losses, dlogits = np.empty(B), np.empty_like(probs)
    for i in range(B):
        target = np.zeros(M)
        target[labels[i]] = 1.0
        losses[i], dlogits[i] = nn.cross_entropy_loss(probs[i], target)
    dlogits /= B
    dh, gd = nn.dense_backward(dense_cache, dlogits, model.dense)
    _, gc = nn.conv1d_backward(conv_cache, dh[:, None, :], model.conv)
    grads = {f"dense.{k}": v for k, v in gd.items()}
    grads.update({f"cel.{k}": v for k, v in gc.items()})
    return float(losses.mean()), {k: grads[k] for k in model.params()}


def cse_accuracy(model: CseModel, windows, labels) -> float:
    probs = cse_forward(model, np.asarray(windows))
    return float(np.mean(np.argmax(probs, axis=-1) == np.asarray(labels)))


# ---------------------------------------------------------------------------
# Checkpoints

MAGIC = b"S2VCKPT"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    model: CrnnModel
    optimizer: Optional[NesterovState] = None
    norm_stats: Optional[NormStats] = None
    epoch: int = 0
    rng_state: Optional[dict] = None
    extra: Dict[str, Any] = field(default_factory=dict)


def save_checkpoint(path, model: CrnnModel, optimizer: Optional[NesterovState] = None,
                    norm_stats: Optional[NormStats] = None, epoch: int = 0,
                    rng_state: Optional[dict] = None, extra: Optional[dict] = None) -> None:
    """Write a self-describing binary checkpoint.

    Layout: magic, version byte, little-endian u32 header length, UTF-8 JSON
    header (config plus array manifest), raw little-endian float64 arrays in
    manifest order, then a u32 CRC-32 of everything before it.
    """
    arrays = [(f"param/{k}", v) for k, v in model.params().items()]
    if optimizer is not None:
        arrays += [(f"velocity/{k}", v) for k, v in optimizer.velocity.items()]
    if norm_stats is not None:
        arrays += [("norm/mean", norm_stats.mean), ("norm/std", norm_stats.std)]
    header = {
        "config": asdict(model.config),
        "arrays": [{"name": n, "shape": list(np.shape(a))} for n, a in arrays],
        "epoch": epoch,
        "step_count": None if optimizer is None else optimizer.step_count,
        "rng_state": rng_state,
        "extra": extra or {},
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = bytearray(MAGIC)
    body.append(FORMAT_VERSION)
    body += struct.pack("<I", len(head))
    body += head
    for _, a in arrays:
        body += np.ascontiguousarray(a, dtype="<f8").tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)))
    Path(path).write_bytes(bytes(body))


def load_checkpoint(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    prefix = len(MAGIC) + 1 + 4
    if len(data) < prefix + 4 or not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    if data[len(MAGIC)] != FORMAT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {data[len(MAGIC)]}, expected {FORMAT_VERSION}")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != crc:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupted)")
    (head_len,) = struct.unpack("<I", data[len(MAGIC) + 1 : prefix])
    header = json.loads(data[prefix : prefix + head_len].decode("utf-8"))
    offset = prefix + head_len
    arrays = {}
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        raw = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        arrays[entry["name"]] = raw.astype(np.float64).reshape(entry["shape"])
        offset += 8 * count
    if offset != len(data) - 4:
        raise CheckpointError(f"{path}: payload size does not match the manifest")

    model = build_crnn(CrnnConfig(**header["config"]), seed=0)
    for name, p in model.params().items():
        key = f"param/{name}"
        if key not in arrays or arrays[key].shape != p.shape:
            raise CheckpointError(f"{path}: missing or misshapen parameter {name}")
        p[...] = arrays[key]
    optimizer = None
    if header["step_count"] is not None:
        velocity = {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("velocity/")}
        optimizer = NesterovState(velocity, header["step_count"])
    norm = None
    if "norm/mean" in arrays:
        norm = NormStats(arrays["norm/mean"], arrays["norm/std"])
    return Checkpoint(model, optimizer, norm, header["epoch"], header["rng_state"], header["extra"])
