"""Forward-only network primitives over plain numpy arrays.

These are the reference semantics for the building blocks: a single LSTM cell
step, a bidirectional pass over a sequence, layer normalization, the learned
two-stream gate, and the softmax cross-entropy loss. The training path in
`autodiff` re-implements them batched with hand-derived backward passes; tests
pin the two against each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError, ShapeError
from ..rng import SplitMix64


def sigmoid(x):
    # evaluated in two branches to avoid overflow in exp
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class LstmCellParams:
    """One LSTM direction; gate order along the 4h axis is (i, f, g, o)."""

    wx: np.ndarray  # (4h, d)
    wh: np.ndarray  # (4h, h)
    b: np.ndarray  # (4h,)

    def __post_init__(self):
        wx, wh, b = (np.asarray(a) for a in (self.wx, self.wh, self.b))
        if wh.ndim != 2 or wh.shape[0] != 4 * wh.shape[1]:
            raise ShapeError(f"recurrent weights must be (4h, h), got {wh.shape}")
        h4 = wh.shape[0]
        if wx.ndim != 2 or wx.shape[0] != h4:
            raise ShapeError(
                f"input weights must be ({h4}, d), got {wx.shape}"
            )
        if b.shape != (h4,):
            raise ShapeError(f"bias must be ({h4},), got {b.shape}")
        object.__setattr__(self, "wx", wx)
        object.__setattr__(self, "wh", wh)
        object.__setattr__(self, "b", b)

    @property
    def hidden(self) -> int:
        return self.wh.shape[1]

    @property
    def width_in(self) -> int:
        return self.wx.shape[1]


def init_lstm_params(d: int, h: int, rng: SplitMix64, dtype=np.float64):
    """Uniform weights in [-1/sqrt(h), 1/sqrt(h)]; forget-gate bias 1, rest 0."""
    bound = 1.0 / np.sqrt(h)
    wx = rng.uniform(size=(4 * h, d), low=-bound, high=bound).astype(dtype)
    wh = rng.uniform(size=(4 * h, h), low=-bound, high=bound).astype(dtype)
    b = np.zeros(4 * h, dtype=dtype)
    b[h : 2 * h] = 1.0
    return LstmCellParams(wx, wh, b)


def lstm_cell_step(p: LstmCellParams, x_t, h_prev, c_prev):
    """One recurrence step; returns (h_t, c_t)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    h = p.hidden
    if x_t.shape != (p.width_in,):
        raise ShapeError(f"input must be ({p.width_in},), got {x_t.shape}")
    if h_prev.shape != (h,) or c_prev.shape != (h,):
        raise ShapeError(f"state must be ({h},), got {h_prev.shape}/{c_prev.shape}")
    a = p.wx @ x_t + p.wh @ h_prev + p.b
    i = sigmoid(a[:h])
    f = sigmoid(a[h : 2 * h])
    g = np.tanh(a[2 * h : 3 * h])
    o = sigmoid(a[3 * h :])
    c_t = f * c_prev + i * g
    h_t = o * np.tanh(c_t)
    return h_t, c_t


def bilstm_forward(fwd: LstmCellParams, bwd: LstmCellParams, seq) -> np.ndarray:
    """Run both directions from zero state; output (T, 2h), time-aligned.

    The backward half consumes the sequence reversed and its outputs are
    re-reversed so row t holds [forward h_t ; backward h_t].
    """
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise DataError(f"sequence must be non-empty (T, d), got shape {seq.shape}")
    if fwd.hidden != bwd.hidden:
        raise ShapeError("direction hidden widths differ")
    t_len = seq.shape[0]
    h = fwd.hidden
    out = np.empty((t_len, 2 * h))
    hs, cs = np.zeros(h), np.zeros(h)
    for t in range(t_len):
        hs, cs = lstm_cell_step(fwd, seq[t], hs, cs)
        out[t, :h] = hs
    hs, cs = np.zeros(h), np.zeros(h)
    for t in range(t_len - 1, -1, -1):
        hs, cs = lstm_cell_step(bwd, seq[t], hs, cs)
        out[t, h:] = hs
    return out


@dataclass(frozen=True)
class LayerNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    epsilon: float = 1e-5

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=np.float64)
        b = np.asarray(self.beta, dtype=np.float64)
        if g.ndim != 1 or g.shape != b.shape:
            raise ShapeError(f"gamma/beta must match 1-D, got {g.shape} vs {b.shape}")
        if not self.epsilon > 0:
            raise ShapeError(f"epsilon must be positive, got {self.epsilon}")
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "beta", b)


def layer_norm(p: LayerNormParams, x) -> np.ndarray:
    """Normalize across the feature axis with population variance."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != p.gamma.shape:
        raise ShapeError(f"input shape {x.shape} != gamma shape {p.gamma.shape}")
    mu = x.mean()
    var = np.mean((x - mu) ** 2)
    return p.gamma * (x - mu) / np.sqrt(var + p.epsilon) + p.beta


def gated_fuse(wg, bg, ua, up):
    """Learned convex per-feature blend of two streams; returns (z, gate)."""
    wg, bg = np.asarray(wg, dtype=np.float64), np.asarray(bg, dtype=np.float64)
    ua, up = np.asarray(ua, dtype=np.float64), np.asarray(up, dtype=np.float64)
    h = ua.shape[0]
    if up.shape != (h,):
        raise ShapeError(f"stream shapes differ: {ua.shape} vs {up.shape}")
    if wg.shape != (h, 2 * h) or bg.shape != (h,):
        raise ShapeError(
            f"gate weights must be ({h}, {2 * h}) with bias ({h},), "
            f"got {wg.shape}/{bg.shape}"
        )
    g = sigmoid(wg @ np.concatenate([ua, up]) + bg)
    z = g * ua + (1.0 - g) * up
    return z, g


def softmax_cross_entropy(logits, y: int):
    """Stable softmax + negative log-likelihood; returns (loss, probabilities)."""
    logits = np.asarray(logits, dtype=np.float64)
    c = logits.shape[0]
    if c < 2:
        raise ShapeError(f"need at least 2 classes, got {c}")
    if not 0 <= y < c:
        raise DataError(f"label {y} out of range for {c} classes")
    z = logits - logits.max()
    ez = np.exp(z)
    p = ez / ez.sum()
    loss = -(z[y] - np.log(ez.sum()))
    return float(loss), p
