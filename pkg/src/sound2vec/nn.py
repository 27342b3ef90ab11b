"""Differentiable layers with hand-written backward passes.

All layers work on zero-padded, time-major batches of shape ``(B, T, D)``
plus a vector of true lengths. A single ``(T, D)`` sequence is accepted
anywhere and treated as a batch of one. Frames past an item's length carry
no meaning; callers must pass zero gradient for them, which is enough to
keep every valid output and every gradient independent of padding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .errors import ConfigError, TooShortError

PADDING_MODES = ("valid", "same")
ACTIVATIONS = ("linear", "relu")


def _as_batch(x, lengths):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if lengths is None:
        lengths = np.full(x.shape[0], x.shape[1], dtype=np.int64)
    return x, np.asarray(lengths, dtype=np.int64), single


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------------------
# Convolutional embedding layer


def conv_output_length(length: int, kernel: int, stride: int, padding: str) -> int:
    if padding == "valid":
        if length < kernel:
            return 0
        return (length - kernel) // stride + 1
    return -(-length // stride)


@dataclass
class ConvEmbeddingLayer:
    """1-D convolution over time whose weight matrix is the embedding matrix.

    ``weight`` has shape ``(filters, kernel * in_dim)``; column ``k * in_dim + d``
    multiplies input bin ``d`` at frame offset ``k`` inside the window.
    """

    weight: np.ndarray
    bias: np.ndarray
    kernel: int
    stride: int = 1
    padding: str = "valid"
    activation: str = "linear"

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1:
            raise ConfigError("kernel and stride must be >= 1")
        if self.padding not in PADDING_MODES:
            raise ConfigError(f"padding must be one of {PADDING_MODES}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}")
        if self.weight.shape[1] % self.kernel:
            raise ConfigError("weight width is not a multiple of the kernel size")

    @classmethod
    def init(cls, rng, in_dim, filters, kernel, stride=1, padding="valid", activation="linear"):
        if filters < 1:
            raise ConfigError("number of filters must be >= 1")
        w = glorot_uniform(rng, (filters, kernel * in_dim), kernel * in_dim, filters)
        return cls(w, np.zeros(filters), kernel, stride, padding, activation)

    @property
    def filters(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1] // self.kernel

    def params(self) -> Dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}

    def output_lengths(self, lengths):
        return np.array(
            [conv_output_length(int(n), self.kernel, self.stride, self.padding) for n in lengths],
            dtype=np.int64,
        )


def _conv_left_pad(length, kernel, stride, padding):
    if padding == "valid":
        return 0
    out = conv_output_length(length, kernel, stride, padding)
    return max((out - 1) * stride + kernel - length, 0) // 2


def conv1d_forward(x, layer: ConvEmbeddingLayer, lengths=None):
    """Return ``(output, output_lengths, cache)``.

    Valid mode keeps ``(T - K) // stride + 1`` frames; same mode keeps
    ``ceil(T / stride)`` and zero-pads each item on its own, floor of the
    padding on the left.
    """
    x, lengths, single = _as_batch(x, lengths)
    B, _, D = x.shape
    K, s = layer.kernel, layer.stride
    if D != layer.in_dim:
        raise ValueError(f"input has {D} bins, layer expects {layer.in_dim}")
    out_len = layer.output_lengths(lengths)
    if np.any(out_len < 1):
        raise TooShortError(f"sequence of {int(lengths.min())} frames is shorter than kernel {K}")
    t_out = int(out_len.max())
    left = [_conv_left_pad(int(n), K, s, layer.padding) for n in lengths]
    width = (t_out - 1) * s + K
    xp = np.zeros((B, max(width, x.shape[1] + max(left)), D))
    for b in range(B):
        n = int(lengths[b])
        xp[b, left[b] : left[b] + n] = x[b, :n]
    windows = np.lib.stride_tricks.sliding_window_view(xp, K, axis=1)[:, ::s][:, :t_out]
    cols = np.ascontiguousarray(windows.transpose(0, 1, 3, 2)).reshape(B, t_out, K * D)
    pre = cols @ layer.weight.T + layer.bias
    valid = np.arange(t_out)[None, :] < out_len[:, None]
    pre *= valid[..., None]
    out = np.maximum(pre, 0.0) if layer.activation == "relu" else pre
    cache = dict(cols=cols, pre=pre, valid=valid, left=left, lengths=lengths,
                 in_shape=x.shape, pad_len=xp.shape[1], single=single)
    if single:
        return out[0], out_len, cache
    return out, out_len, cache


def conv1d_backward(cache, grad_out, layer: ConvEmbeddingLayer):
    """Return ``(grad_input, {"weight": ..., "bias": ...})``."""
    g = np.asarray(grad_out, dtype=np.float64)
    if cache["single"]:
        g = g[None]
    if g.shape != cache["pre"].shape:
        raise ValueError(f"gradient shape {g.shape} does not match output {cache['pre'].shape}")
    g = g * cache["valid"][..., None]
    if layer.activation == "relu":
        g = g * (cache["pre"] > 0)
    B, t_out, N = g.shape
    _, T, D = cache["in_shape"]
    K, s = layer.kernel, layer.stride
    cols = cache["cols"]
    d_weight = g.reshape(-1, N).T @ cols.reshape(-1, K * D)
    d_bias = g.sum(axis=(0, 1))
    d_cols = (g @ layer.weight).reshape(B, t_out, K, D)
    d_xp = np.zeros((B, cache["pad_len"], D))
    stop = s * (t_out - 1) + 1
    for k in range(K):
        d_xp[:, k : k + stop : s] += d_cols[:, :, k]
    dx = np.zeros((B, T, D))
    for b in range(B):
        n, lft = int(cache["lengths"][b]), cache["left"][b]
        dx[b, :n] = d_xp[b, lft : lft + n]
    if cache["single"]:
        dx = dx[0]
    return dx, {"weight": d_weight, "bias": d_bias}


# ---------------------------------------------------------------------------
# Bidirectional GRU


@dataclass
class GruDirection:
    """Gate blocks are packed ``[update | reset | candidate]`` along the last axis."""

    w_in: np.ndarray  # (D, 3H)
    w_hid: np.ndarray  # (H, 3H)
    bias: np.ndarray  # (3H,)

    @classmethod
    def init(cls, rng, in_dim, hidden):
        w_in = np.concatenate([glorot_uniform(rng, (in_dim, hidden), in_dim, hidden) for _ in range(3)], axis=1)
        w_hid = np.concatenate([glorot_uniform(rng, (hidden, hidden), hidden, hidden) for _ in range(3)], axis=1)
        return cls(w_in, w_hid, np.zeros(3 * hidden))

    @property
    def hidden(self) -> int:
        return self.w_hid.shape[0]

    def params(self):
        return {"w_in": self.w_in, "w_hid": self.w_hid, "bias": self.bias}


@dataclass
class GruLayer:
    forward: GruDirection
    backward: GruDirection

    @classmethod
    def init(cls, rng, in_dim, hidden):
        return cls(GruDirection.init(rng, in_dim, hidden), GruDirection.init(rng, in_dim, hidden))

    @property
    def hidden(self) -> int:
        return self.forward.hidden

    @property
    def in_dim(self) -> int:
        return self.forward.w_in.shape[0]

    def params(self):
        out = {}
        for name, d in (("fwd", self.forward), ("bwd", self.backward)):
            for key, value in d.params().items():
                out[f"{name}.{key}"] = value
        return out


def gru_scan(x, d: GruDirection):
    """Run one GRU direction left to right over a ``(B, T, D)`` batch from ``h = 0``."""
    B, T, _ = x.shape
    H = d.hidden
    proj = x @ d.w_in + d.bias
    w_zr, w_n = d.w_hid[:, : 2 * H], d.w_hid[:, 2 * H :]
    hs = np.empty((B, T, H))
    h_prev = np.empty((B, T, H))
    z = np.empty((B, T, H))
    r = np.empty((B, T, H))
    n = np.empty((B, T, H))
    h = np.zeros((B, H))
    for t in range(T):
        a = proj[:, t]
        zr = h @ w_zr
        zt = sigmoid(a[:, :H] + zr[:, :H])
        rt = sigmoid(a[:, H : 2 * H] + zr[:, H:])
        nt = np.tanh(a[:, 2 * H :] + (rt * h) @ w_n)
        h_prev[:, t] = h
        h = h + zt * (nt - h)
        z[:, t], r[:, t], n[:, t], hs[:, t] = zt, rt, nt, h
    return hs, dict(x=x, h_prev=h_prev, z=z, r=r, n=n)


def gru_scan_backward(cache, grad_hs, d: GruDirection):
    x, h_prev, z, r, n = cache["x"], cache["h_prev"], cache["z"], cache["r"], cache["n"]
    B, T, D = x.shape
    H = d.hidden
    w_zr, w_n = d.w_hid[:, : 2 * H], d.w_hid[:, 2 * H :]
    d_pre = np.empty((B, T, 3 * H))
    dh = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        dh = dh + grad_hs[:, t]
        zt, rt, nt, hp = z[:, t], r[:, t], n[:, t], h_prev[:, t]
        da_n = dh * zt * (1.0 - nt * nt)
        d_rh = da_n @ w_n.T
        da_z = dh * (nt - hp) * zt * (1.0 - zt)
        da_r = d_rh * hp * rt * (1.0 - rt)
        d_pre[:, t, :H] = da_z
        d_pre[:, t, H : 2 * H] = da_r
        d_pre[:, t, 2 * H :] = da_n
        dh = dh * (1.0 - zt) + d_rh * rt + d_pre[:, t, : 2 * H] @ w_zr.T
    flat = d_pre.reshape(-1, 3 * H)
    d_w_hid = np.empty_like(d.w_hid)
    d_w_hid[:, : 2 * H] = h_prev.reshape(-1, H).T @ flat[:, : 2 * H]
    d_w_hid[:, 2 * H :] = (r * h_prev).reshape(-1, H).T @ flat[:, 2 * H :]
    grads = {"w_in": x.reshape(-1, D).T @ flat, "w_hid": d_w_hid, "bias": flat.sum(axis=0)}
    return d_pre @ d.w_in.T, grads


def _reverse_index(lengths, T):
    """Per-item time reversal inside the valid prefix; an involution."""
    t = np.arange(T)[None, :]
    L = lengths[:, None]
    return np.where(t < L, L - 1 - t, t)


def _take_time(x, idx):
    return np.take_along_axis(x, idx[..., None], axis=1)


def bigru_forward(x, layer: GruLayer, lengths=None):
    """Return ``(output (B, T, 2H), cache)``; forward states first, then backward."""
    x, lengths, single = _as_batch(x, lengths)
    if x.shape[2] != layer.in_dim:
        raise ValueError(f"input width {x.shape[2]} does not match GRU input size {layer.in_dim}")
    idx = _reverse_index(lengths, x.shape[1])
    h_f, c_f = gru_scan(x, layer.forward)
    h_b, c_b = gru_scan(_take_time(x, idx), layer.backward)
    out = np.concatenate([h_f, _take_time(h_b, idx)], axis=2)
    cache = dict(fwd=c_f, bwd=c_b, idx=idx, single=single)
    return (out[0] if single else out), cache


def bigru_backward(cache, grad_out, layer: GruLayer):
    g = np.asarray(grad_out, dtype=np.float64)
    if cache["single"]:
        g = g[None]
    H = layer.hidden
    if g.shape[2] != 2 * H:
        raise ValueError("gradient width does not match 2 * hidden")
    idx = cache["idx"]
    dx_f, g_f = gru_scan_backward(cache["fwd"], g[..., :H], layer.forward)
    dx_b, g_b = gru_scan_backward(cache["bwd"], _take_time(g[..., H:], idx), layer.backward)
    dx = dx_f + _take_time(dx_b, idx)
    grads = {f"fwd.{k}": v for k, v in g_f.items()}
    grads.update({f"bwd.{k}": v for k, v in g_b.items()})
    return (dx[0] if cache["single"] else dx), grads


# ---------------------------------------------------------------------------
# Output projection, softmax and losses


@dataclass
class DenseLayer:
    weight: np.ndarray  # (D, M)
    bias: np.ndarray  # (M,)

    @classmethod
    def init(cls, rng, in_dim, out_dim):
        return cls(glorot_uniform(rng, (in_dim, out_dim), in_dim, out_dim), np.zeros(out_dim))

    def params(self):
        return {"weight": self.weight, "bias": self.bias}


def dense_forward(x, layer: DenseLayer):
    x = np.asarray(x, dtype=np.float64)
    return x @ layer.weight + layer.bias, {"x": x}


def dense_backward(cache, grad_out, layer: DenseLayer):
    x = cache["x"]
    D, M = layer.weight.shape
    g = np.asarray(grad_out, dtype=np.float64)
    grads = {"weight": x.reshape(-1, D).T @ g.reshape(-1, M), "bias": g.reshape(-1, M).sum(axis=0)}
    return g @ layer.weight.T, grads


def log_softmax(logits, axis=-1):
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax(logits, axis=-1):
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax_backward(log_probs, grad_log_probs):
    """Pull a gradient over log-probabilities back to the logits."""
    return grad_log_probs - np.exp(log_probs) * grad_log_probs.sum(axis=-1, keepdims=True)


def dense_softmax_forward(x, layer: DenseLayer):
    """Per-frame probability rows ``softmax(x @ W' + b)``."""
    logits, cache = dense_forward(x, layer)
    return softmax(logits), cache


def cross_entropy_loss(probs, target):
    """Return ``(-sum(y log p), p - y)``; the gradient is over the softmax logits."""
    probs = np.asarray(probs, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if target.shape != probs.shape or np.count_nonzero(target) != 1 or target.sum() != 1.0:
        raise ValueError("target must be a one-hot vector matching the probabilities")
    k = int(np.argmax(target))
    return float(-np.log(probs[k])), probs - target


def dropout_apply(x, rate: float, rng: Optional[np.random.Generator], training: bool):
    """Inverted dropout. Returns ``(output, mask)``; the mask is None when inactive."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x, None
    mask = (rng.random(np.shape(x)) >= rate) / (1.0 - rate)
    return x * mask, mask


# ---------------------------------------------------------------------------
# Finite-difference checking


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    return np.abs(analytic - numeric) / scale


def numeric_gradient(fn: Callable[[], float], array: np.ndarray, eps=1e-5, indices=None):
    """Central differences of ``fn()`` with respect to entries of ``array`` (perturbed in place)."""
    grad = np.zeros_like(array)
    flat, gflat = array.reshape(-1), grad.reshape(-1)
    for i in range(flat.size) if indices is None else indices:
        old = flat[i]
        flat[i] = old + eps
        plus = fn()
        flat[i] = old - eps
        minus = fn()
        flat[i] = old
        gflat[i] = (plus - minus) / (2.0 * eps)
    return grad


def grad_check(
    fn: Callable[[], float],
    params: Dict[str, np.ndarray],
    analytic: Dict[str, np.ndarray],
    eps: float = 1e-5,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Max relative error between ``analytic`` and central differences of ``fn``.

    ``fn`` must read the arrays in ``params`` each time it is called. With
    ``max_entries`` set, that many entries per array are sampled instead of
    checking all of them.
    """
    worst = 0.0
    for name, array in params.items():
        indices = None
        if max_entries is not None and array.size > max_entries:
            rng = rng or np.random.default_rng(0)
            indices = rng.choice(array.size, size=max_entries, replace=False)
        numeric = numeric_gradient(fn, array, eps, indices)
        a = np.asarray(analytic[name]).reshape(-1)
        nflat = numeric.reshape(-1)
        if indices is not None:
            a, nflat = a[indices], nflat[indices]
        if a.size:
            worst = max(worst, float(relative_error(a, nflat).max()))
    return worst
