"""Minimal reverse-mode differentiation for the sequence models in this package.

A GradTape records a forward computation as coarse-grained array operations
(the whole LSTM pass over a sequence is a single node with a hand-derived
backward), which keeps Python overhead off the per-time-step hot path. Ops
run on Vars; when no tape is supplied (evaluation) they compute values only
and record nothing, so forward code is shared between training and inference.

All ops treat the last axis as features and accept any leading batch/time
axes unless stated otherwise.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit as _expit

from ..errors import DataError, ShapeError, TapeError

try:
    from ._lstm_kernels import lstm_backward_kernel, lstm_forward_kernel

    _HAVE_KERNELS = True
except ImportError:  # numba not installed; pure-numpy path below
    _HAVE_KERNELS = False


class Var:
    """A value in the recorded computation; leaves may carry a watch name."""

    __slots__ = ("value", "tape", "parents", "vjp", "grad", "name")

    def __init__(self, value, tape=None, parents=(), vjp=None, name=None):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.vjp = vjp
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape


class GradTape:
    """Single-use record of a forward pass, sufficient for exact gradients."""

    def __init__(self):
        self._nodes: list[Var] = []
        self._watched: dict[str, Var] = {}
        self._consumed = False

    def watch(self, value: np.ndarray, name: str) -> Var:
        """Register a parameter leaf; its gradient is reported by backward."""
        if name in self._watched:
            raise TapeError(f"parameter '{name}' watched twice")
        v = Var(np.asarray(value), tape=self, name=name)
        self._watched[name] = v
        return v

    def const(self, value) -> Var:
        """A leaf that participates in the forward pass but gets no gradient."""
        return Var(np.asarray(value), tape=self)

    def _record(self, value, parents, vjp) -> Var:
        v = Var(value, tape=self, parents=parents, vjp=vjp)
        self._nodes.append(v)
        return v


def _tape_of(*vars_):
    tape = None
    for v in vars_:
        if v.tape is not None:
            if tape is not None and tape is not v.tape:
                raise TapeError("operands recorded on different tapes")
            tape = v.tape
    return tape


def _op(value, operands, vjp):
    tape = _tape_of(*operands)
    if tape is None:
        return Var(value)
    return tape._record(value, tuple(operands), vjp)


def backward(tape: GradTape, loss: Var) -> dict[str, np.ndarray]:
    """Reverse sweep; returns gradients for every watched leaf.

    Unreached (unused) parameters get zero gradients. The tape is consumed;
    calling backward on it again raises TapeError.
    """
    if tape is None or loss.tape is not tape:
        raise TapeError("loss was not recorded on this tape")
    if tape._consumed:
        raise TapeError("tape already consumed by a previous backward call")
    if np.ndim(loss.value) != 0 and np.size(loss.value) != 1:
        raise ShapeError(f"loss must be scalar, got shape {np.shape(loss.value)}")
    tape._consumed = True

    loss.grad = np.ones_like(loss.value)
    # creation order is topological: every parent precedes its consumers
    for node in reversed(tape._nodes):
        if node.grad is None or node.vjp is None:
            continue
        for parent, g in zip(node.parents, node.vjp(node.grad)):
            if g is None:
                continue
            if parent.grad is None:
                parent.grad = g
            else:
                parent.grad = parent.grad + g

    out = {}
    for name, leaf in tape._watched.items():
        out[name] = (
            leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
        )
    return out


# ---------------------------------------------------------------------------
# elementwise / linear ops


def add(x: Var, y: Var) -> Var:
    return _op(x.value + y.value, (x, y), lambda g: (g, g))


def sub(x: Var, y: Var) -> Var:
    return _op(x.value - y.value, (x, y), lambda g: (g, -g))


def mul(x: Var, y: Var) -> Var:
    return _op(
        x.value * y.value, (x, y), lambda g: (g * y.value, g * x.value)
    )


def scale(x: Var, c) -> Var:
    """Multiply by a constant scalar or array (dropout masks use this)."""
    c = np.asarray(c)
    return _op(x.value * c, (x,), lambda g: (g * c,))


def sum_all(x: Var) -> Var:
    return _op(
        np.asarray(x.value.sum()),
        (x,),
        lambda g: (np.broadcast_to(g, x.value.shape).copy(),),
    )


def sigmoid(x: Var) -> Var:
    out = _expit(x.value)
    return _op(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Var) -> Var:
    out = np.tanh(x.value)
    return _op(out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x: Var) -> Var:
    out = np.maximum(x.value, 0.0)
    return _op(out, (x,), lambda g: (g * (x.value > 0),))


def affine(x: Var, w: Var, b: Var) -> Var:
    """y = x @ w.T + b over the last axis; w is (out, in), b is (out,)."""
    xv = x.value
    if xv.shape[-1] != w.value.shape[1]:
        raise ShapeError(
            f"affine input width {xv.shape[-1]} != weight width {w.value.shape[1]}"
        )
    out = xv @ w.value.T + b.value

    def vjp(g):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = xv.reshape(-1, xv.shape[-1])
        return g @ w.value, g2.T @ x2, g2.sum(axis=0)

    return _op(out, (x, w, b), vjp)


def concat_last(x: Var, y: Var) -> Var:
    nx = x.value.shape[-1]
    out = np.concatenate([x.value, y.value], axis=-1)
    return _op(
        out, (x, y), lambda g: (g[..., :nx], g[..., nx:])
    )


def mean_over_time(x: Var) -> Var:
    """(B, T, F) -> (B, F), equal 1/T weights."""
    t_len = x.value.shape[1]
    out = x.value.mean(axis=1)
    return _op(
        out,
        (x,),
        lambda g: (np.repeat(g[:, None, :], t_len, axis=1) / t_len,),
    )


def reverse_time(x: Var) -> Var:
    out = np.ascontiguousarray(x.value[:, ::-1])
    return _op(out, (x,), lambda g: (np.ascontiguousarray(g[:, ::-1]),))


def layer_norm(x: Var, gamma: Var, beta: Var, eps: float = 1e-5,
               groups: int = 1) -> Var:
    """Normalize the last axis to zero mean / unit population variance.

    With groups > 1 the feature axis is treated as `groups` equal blocks and
    each block gets its own statistics (used to normalize stacked receiver
    channels or modality planes independently); gamma/beta still cover the
    whole feature axis.
    """
    xv = x.value
    width = xv.shape[-1]
    if gamma.value.shape != (width,):
        raise ShapeError(
            f"layer-norm gamma shape {gamma.value.shape} != feature width "
            f"{width}"
        )
    if width % groups != 0:
        raise ShapeError(f"feature width {width} not divisible by {groups} groups")
    gshape = xv.shape[:-1] + (groups, width // groups)
    xg = xv.reshape(gshape)
    mu = xg.mean(axis=-1, keepdims=True)
    xc = xg - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).reshape(xv.shape)
    out = xhat * gamma.value + beta.value

    def vjp(g):
        lead = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=lead)
        dbeta = g.sum(axis=lead)
        dxhat = (g * gamma.value).reshape(gshape)
        xhat_g = xhat.reshape(gshape)
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat_g).mean(axis=-1, keepdims=True)
        dx = (inv * (dxhat - m1 - xhat_g * m2)).reshape(xv.shape)
        return dx, dgamma, dbeta

    return _op(out, (x, gamma, beta), vjp)


def softmax_cross_entropy_mean(logits: Var, labels: np.ndarray):
    """Mean NLL over a batch; returns (loss Var, probabilities array)."""
    z = logits.value
    if z.ndim != 2:
        raise ShapeError(f"logits must be (B, C), got {z.shape}")
    b, c = z.shape
    labels = np.asarray(labels)
    if labels.shape != (b,):
        raise ShapeError(f"labels must be ({b},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise DataError(
            f"label {int(labels.max())} out of range for {c} classes"
        )
    zs = z - z.max(axis=1, keepdims=True)
    ez = np.exp(zs)
    denom = ez.sum(axis=1, keepdims=True)
    p = ez / denom
    rows = np.arange(b)
    loss = float(-(zs[rows, labels] - np.log(denom[:, 0])).mean())

    def vjp(g):
        d = p.copy()
        d[rows, labels] -= 1.0
        d *= z.dtype.type(g / b)  # keep the gradient chain in the model dtype
        return (d,)

    return _op(np.float64(loss), (logits,), vjp), p


# ---------------------------------------------------------------------------
# fused LSTM pass


def lstm(x: Var, wx: Var, wh: Var, b: Var, reverse: bool = False) -> Var:
    """Full unidirectional LSTM pass, (B, T, D) -> (B, T, H), zero initial state.

    One tape node for the whole sequence; backward is hand-rolled BPTT. The
    parameter gate layout along the 4H axis is (i, f, g, o), matching
    LstmCellParams; internally gates are processed as (i, f, o | g) so the
    three sigmoids take a single contiguous ufunc call per step.
    """
    xv = x.value
    if xv.ndim != 3:
        raise ShapeError(f"lstm input must be (B, T, D), got {xv.shape}")
    bsz, t_len, d = xv.shape
    if t_len < 1:
        raise DataError("lstm input has no time steps")
    h4, hid = wh.value.shape
    if h4 != 4 * hid or wx.value.shape != (h4, d) or b.value.shape != (h4,):
        raise ShapeError(
            f"lstm weights inconsistent: wx {wx.value.shape}, wh "
            f"{wh.value.shape}, b {b.value.shape}, input width {d}"
        )
    order = range(t_len - 1, -1, -1) if reverse else range(t_len)
    recording = _tape_of(x, wx, wh, b) is not None

    # (i, f, g, o) -> (i, f, o, g) so sigmoid gates form one contiguous block
    perm = np.concatenate([
        np.arange(2 * hid), np.arange(3 * hid, 4 * hid),
        np.arange(2 * hid, 3 * hid),
    ])
    h3 = 3 * hid
    wxp = wx.value[perm]
    whp = np.ascontiguousarray(wh.value[perm])
    bp = b.value[perm]

    # input contribution for all steps in one BLAS call
    xp = (xv.reshape(-1, d) @ wxp.T + bp).reshape(bsz, t_len, h4)
    dt = xv.dtype

    if _HAVE_KERNELS:
        out, sig_s, g_s, hc_s, cprev_s, hprev_s = lstm_forward_kernel(
            xp, np.ascontiguousarray(whp.T), hid, reverse
        )
    else:
        out = np.empty((bsz, t_len, hid), dtype=dt)
        sig_s = np.empty((bsz, t_len, h3), dtype=dt)  # i, f, o after sigmoid
        g_s = np.empty((bsz, t_len, hid), dtype=dt)
        hc_s = np.empty_like(out)  # tanh(c_t)
        cprev_s = np.empty_like(out)
        hprev_s = np.empty_like(out)
        h_t = np.zeros((bsz, hid), dtype=dt)
        c_t = np.zeros((bsz, hid), dtype=dt)
        whpT = whp.T
        for t in order:
            hprev_s[:, t] = h_t
            cprev_s[:, t] = c_t
            a = xp[:, t]
            a += h_t @ whpT  # xp is consumed once per step; in-place is safe
            sig = sig_s[:, t]
            _expit(a[:, :h3], out=sig)
            g = np.tanh(a[:, h3:], out=g_s[:, t])
            c_t = sig[:, hid : 2 * hid] * c_t
            c_t += sig[:, :hid] * g
            hc = np.tanh(c_t, out=hc_s[:, t])
            h_t = np.multiply(sig[:, 2 * hid :], hc, out=out[:, t])

    if not recording:
        return Var(out)

    def vjp(gout):
        gout = np.ascontiguousarray(gout)
        if _HAVE_KERNELS:
            da_tb = lstm_backward_kernel(
                gout, sig_s, g_s, hc_s, cprev_s, whp, hid, reverse
            )
            da2 = np.ascontiguousarray(da_tb.swapaxes(0, 1)).reshape(-1, h4)
        else:
            da_all = np.empty((bsz, t_len, h4), dtype=dt)
            dc_carry = np.zeros((bsz, hid), dtype=dt)
            dh_carry = None
            for t in reversed(order):  # reverse of the processing order
                sig = sig_s[:, t]
                i, f, o = sig[:, :hid], sig[:, hid : 2 * hid], sig[:, 2 * hid :]
                g, hc = g_s[:, t], hc_s[:, t]
                dh = gout[:, t] if dh_carry is None else gout[:, t] + dh_carry
                dc = dh * o
                dc *= 1.0 - hc * hc
                dc += dc_carry
                da = da_all[:, t]
                da[:, :hid] = (dc * g) * (i - i * i)
                da[:, hid : 2 * hid] = (dc * cprev_s[:, t]) * (f - f * f)
                da[:, 2 * hid : h3] = (dh * hc) * (o - o * o)
                da[:, h3:] = (dc * i) * (1.0 - g * g)
                dc_carry = dc * f
                dh_carry = da @ whp
            da2 = da_all.reshape(-1, h4)
        inv = _inverse_perm(perm)
        dwx = (da2.T @ xv.reshape(-1, d))[inv]
        dwh = (da2.T @ hprev_s.reshape(-1, hid))[inv]
        db = da2.sum(axis=0)[inv]
        dx = (da2 @ wxp).reshape(bsz, t_len, d)
        return dx, dwx, dwh, db

    return _op(out, (x, wx, wh, b), vjp)


def _inverse_perm(perm):
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return inv


def _sigmoid_arr(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def bilstm(x: Var, fwd: tuple, bwd: tuple) -> Var:
    """Both directions concatenated on the feature axis, time-aligned."""
    return concat_last(
        lstm(x, *fwd, reverse=False), lstm(x, *bwd, reverse=True)
    )
