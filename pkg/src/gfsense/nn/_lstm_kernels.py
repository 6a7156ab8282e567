"""Compiled inner loops for the LSTM pass (numba).

Same arithmetic as the numpy path in autodiff.lstm, just without per-step
interpreter overhead. Gate layout on the 4h axis is (i, f, o | g): the three
sigmoid gates first, the candidate last. fastmath stays off so results are
bit-identical run to run.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def lstm_forward_kernel(xp, whp_t, hid, reverse):
    """xp is (B, T, 4h) with the input contribution pre-added; whp_t is (h, 4h).

    Returns (out, sig_s, g_s, hc_s, cprev_s, hprev_s).
    """
    bsz, t_len, h4 = xp.shape
    h3 = 3 * hid
    out = np.empty((bsz, t_len, hid), dtype=xp.dtype)
    sig_s = np.empty((bsz, t_len, h3), dtype=xp.dtype)
    g_s = np.empty((bsz, t_len, hid), dtype=xp.dtype)
    hc_s = np.empty((bsz, t_len, hid), dtype=xp.dtype)
    cprev_s = np.empty((bsz, t_len, hid), dtype=xp.dtype)
    hprev_s = np.empty((bsz, t_len, hid), dtype=xp.dtype)
    h_t = np.zeros((bsz, hid), dtype=xp.dtype)
    c_t = np.zeros((bsz, hid), dtype=xp.dtype)
    for step in range(t_len):
        t = t_len - 1 - step if reverse else step
        rec = np.dot(h_t, whp_t)
        for bi in range(bsz):
            for j in range(hid):
                hprev_s[bi, t, j] = h_t[bi, j]
                cprev_s[bi, t, j] = c_t[bi, j]
            for j in range(h4):
                a = xp[bi, t, j] + rec[bi, j]
                if j < h3:
                    if a >= 0.0:
                        s = 1.0 / (1.0 + np.exp(-a))
                    else:
                        e = np.exp(a)
                        s = e / (1.0 + e)
                    sig_s[bi, t, j] = s
                else:
                    g_s[bi, t, j - h3] = np.tanh(a)
            for j in range(hid):
                c = (
                    sig_s[bi, t, hid + j] * c_t[bi, j]
                    + sig_s[bi, t, j] * g_s[bi, t, j]
                )
                c_t[bi, j] = c
                hc = np.tanh(c)
                hc_s[bi, t, j] = hc
                h = sig_s[bi, t, 2 * hid + j] * hc
                h_t[bi, j] = h
                out[bi, t, j] = h
    return out, sig_s, g_s, hc_s, cprev_s, hprev_s


@njit(cache=True)
def lstm_backward_kernel(gout, sig_s, g_s, hc_s, cprev_s, whp, hid, reverse):
    """Returns da_all laid out (T, B, 4h) so each step's slice is contiguous."""
    bsz, t_len, h3 = sig_s.shape
    h4 = h3 + hid
    da_all = np.empty((t_len, bsz, h4), dtype=gout.dtype)
    dh_carry = np.zeros((bsz, hid), dtype=gout.dtype)
    dc_carry = np.zeros((bsz, hid), dtype=gout.dtype)
    for step in range(t_len):
        t = step if reverse else t_len - 1 - step  # reverse of processing order
        da_t = da_all[t]
        for bi in range(bsz):
            for j in range(hid):
                i = sig_s[bi, t, j]
                f = sig_s[bi, t, hid + j]
                o = sig_s[bi, t, 2 * hid + j]
                g = g_s[bi, t, j]
                hc = hc_s[bi, t, j]
                dh = gout[bi, t, j] + dh_carry[bi, j]
                dc = dh * o * (1.0 - hc * hc) + dc_carry[bi, j]
                da_t[bi, j] = dc * g * i * (1.0 - i)
                da_t[bi, hid + j] = dc * cprev_s[bi, t, j] * f * (1.0 - f)
                da_t[bi, 2 * hid + j] = dh * hc * o * (1.0 - o)
                da_t[bi, h3 + j] = dc * i * (1.0 - g * g)
                dc_carry[bi, j] = dc * f
        dh_carry = np.dot(da_t, whp)
    return da_all
