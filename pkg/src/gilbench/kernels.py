"""Hot inner loops: Elman BPTT, causal attention core, DTW accumulation.

Every kernel exists twice: an ``@njit`` loop version and a vectorised numpy
version with the same signature.  The numba path is used when numba imports
and ``GILBENCH_NO_NUMBA`` is unset (or ``0``).  Both paths are importable
directly (``*_nb`` / ``*_np``) so tests and the benchmark can compare them.
"""
from __future__ import annotations

import logging
import os

import numpy as np

_DISABLED = os.environ.get("GILBENCH_NO_NUMBA", "").strip() not in ("", "0")

try:
    import numba

    logging.getLogger("numba").setLevel(logging.WARNING)
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _DISABLED


def _njit(func):
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True)(func)


def _njit_reassoc(func):
    # reassociation lets LLVM vectorise the reductions; NaN/Inf semantics are kept
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True, fastmath={"reassoc", "contract", "nsz"})(func)


# --------------------------------------------------------------------------
# Elman recurrence: h_t = tanh(x_t W_xh + h_{t-1} W_hh + b)
# --------------------------------------------------------------------------

@_njit
def elman_forward_nb(x, h0, w_xh, w_hh, b):
    n_batch, n_steps, n_in = x.shape
    n_hid = h0.shape[1]
    hs = np.empty((n_batch, n_steps, n_hid))
    prev = np.empty(n_hid)
    acc = np.empty(n_hid)
    for bi in range(n_batch):
        for j in range(n_hid):
            prev[j] = h0[bi, j]
        for t in range(n_steps):
            for j in range(n_hid):
                acc[j] = b[j]
            for i in range(n_in):
                xi = x[bi, t, i]
                for j in range(n_hid):
                    acc[j] += xi * w_xh[i, j]
            for k in range(n_hid):
                pk = prev[k]
                for j in range(n_hid):
                    acc[j] += pk * w_hh[k, j]
            for j in range(n_hid):
                prev[j] = np.tanh(acc[j])
                hs[bi, t, j] = prev[j]
    return hs


@_njit_reassoc
def elman_backward_nb(x, h0, hs, w_xh, w_hh, dhs):
    n_batch, n_steps, n_in = x.shape
    n_hid = h0.shape[1]
    dx = np.zeros_like(x)
    dh0 = np.zeros_like(h0)
    dw_xh = np.zeros_like(w_xh)
    dw_hh = np.zeros_like(w_hh)
    db = np.zeros(n_hid)
    carry = np.empty(n_hid)
    da = np.empty(n_hid)
    for bi in range(n_batch):
        for j in range(n_hid):
            carry[j] = 0.0
        for t in range(n_steps - 1, -1, -1):
            for j in range(n_hid):
                h = hs[bi, t, j]
                da[j] = (dhs[bi, t, j] + carry[j]) * (1.0 - h * h)
                db[j] += da[j]
            for i in range(n_in):
                xi = x[bi, t, i]
                acc = 0.0
                for j in range(n_hid):
                    dw_xh[i, j] += xi * da[j]
                    acc += w_xh[i, j] * da[j]
                dx[bi, t, i] = acc
            for k in range(n_hid):
                pk = hs[bi, t - 1, k] if t > 0 else h0[bi, k]
                acc = 0.0
                for j in range(n_hid):
                    dw_hh[k, j] += pk * da[j]
                    acc += w_hh[k, j] * da[j]
                carry[k] = acc
        for k in range(n_hid):
            dh0[bi, k] = carry[k]
    return dx, dh0, dw_xh, dw_hh, db


def elman_forward_np(x, h0, w_xh, w_hh, b):
    n_batch, n_steps, _ = x.shape
    hs = np.empty((n_batch, n_steps, h0.shape[1]))
    drive = x @ w_xh + b
    prev = h0
    for t in range(n_steps):
        prev = np.tanh(drive[:, t] + prev @ w_hh)
        hs[:, t] = prev
    return hs


def elman_backward_np(x, h0, hs, w_xh, w_hh, dhs):
    n_steps = x.shape[1]
    da = np.empty_like(hs)
    carry = np.zeros_like(h0)
    for t in range(n_steps - 1, -1, -1):
        da[:, t] = (dhs[:, t] + carry) * (1.0 - hs[:, t] ** 2)
        carry = da[:, t] @ w_hh.T
    prev = np.concatenate([h0[:, None, :], hs[:, :-1]], axis=1)
    n_hid = h0.shape[1]
    flat_da = da.reshape(-1, n_hid)
    dw_xh = x.reshape(-1, x.shape[2]).T @ flat_da
    dw_hh = prev.reshape(-1, n_hid).T @ flat_da
    db = flat_da.sum(axis=0)
    dx = da @ w_xh.T
    return dx, carry, dw_xh, dw_hh, db


# --------------------------------------------------------------------------
# Causal attention core over [B, H, T, D] blocks: softmax(QK^T * scale + mask) V
# Only the lower triangle (k <= q) is ever touched.
# --------------------------------------------------------------------------

@_njit_reassoc
def _causal_scores_nb(q, k, scale):
    """Max-shifted scaled scores; masked (k > q) entries hold a finite placeholder."""
    n_b, n_h, n_t, n_d = q.shape
    scores = np.empty((n_b, n_h, n_t, n_t))
    k_t = np.empty((n_d, n_t))
    for b in range(n_b):
        for h in range(n_h):
            for d in range(n_d):
                for j in range(n_t):
                    k_t[d, j] = k[b, h, j, d] * scale
            for i in range(n_t):
                row = scores[b, h, i]
                for j in range(i + 1):
                    row[j] = 0.0
                for d in range(n_d):
                    qd = q[b, h, i, d]
                    for j in range(i + 1):
                        row[j] += qd * k_t[d, j]
                top = row[0]
                for j in range(1, i + 1):
                    top = max(top, row[j])
                for j in range(i + 1):
                    row[j] -= top
                # exp(-inf) takes numpy's slow path; _causal_mix_nb zeroes these
                for j in range(i + 1, n_t):
                    row[j] = 0.0
    return scores


@_njit_reassoc
def _causal_mix_nb(probs, v):
    """Normalise exponentiated rows in place and return probs @ v."""
    n_b, n_h, n_t, n_d = v.shape
    out = np.empty((n_b, n_h, n_t, n_d))
    v_t = np.empty((n_d, n_t))
    for b in range(n_b):
        for h in range(n_h):
            for d in range(n_d):
                for j in range(n_t):
                    v_t[d, j] = v[b, h, j, d]
            for i in range(n_t):
                row = probs[b, h, i]
                total = 0.0
                for j in range(i + 1):
                    total += row[j]
                inv = 1.0 / total
                for j in range(i + 1):
                    row[j] *= inv
                for j in range(i + 1, n_t):
                    row[j] = 0.0
                for d in range(n_d):
                    acc = 0.0
                    for j in range(i + 1):
                        acc += row[j] * v_t[d, j]
                    out[b, h, i, d] = acc
    return out


def causal_attention_forward_nb(q, k, v, scale):
    # exp runs in numpy: its SIMD exp beats numba's scalar libm call
    probs = _causal_scores_nb(q, k, scale)
    np.exp(probs, out=probs)
    return _causal_mix_nb(probs, v), probs


@_njit_reassoc
def causal_attention_backward_nb(q, k, v, probs, scale, dout):
    n_b, n_h, n_t, n_d = q.shape
    dq = np.zeros_like(q)
    dk = np.zeros_like(k)
    dv = np.zeros_like(v)
    k_t = np.empty((n_d, n_t))
    v_t = np.empty((n_d, n_t))
    dk_t = np.empty((n_d, n_t))
    dv_t = np.empty((n_d, n_t))
    ds = np.empty(n_t)
    for b in range(n_b):
        for h in range(n_h):
            for d in range(n_d):
                for j in range(n_t):
                    k_t[d, j] = k[b, h, j, d]
                    v_t[d, j] = v[b, h, j, d]
                    dk_t[d, j] = 0.0
                    dv_t[d, j] = 0.0
            for i in range(n_t):
                row = probs[b, h, i]
                for j in range(i + 1):
                    ds[j] = 0.0
                for d in range(n_d):
                    g = dout[b, h, i, d]
                    for j in range(i + 1):
                        ds[j] += g * v_t[d, j]
                        dv_t[d, j] += row[j] * g
                dot = 0.0
                for j in range(i + 1):
                    dot += row[j] * ds[j]
                for j in range(i + 1):
                    ds[j] = row[j] * (ds[j] - dot) * scale
                for d in range(n_d):
                    qd = q[b, h, i, d]
                    acc = 0.0
                    for j in range(i + 1):
                        acc += ds[j] * k_t[d, j]
                        dk_t[d, j] += ds[j] * qd
                    dq[b, h, i, d] = acc
            for d in range(n_d):
                for j in range(n_t):
                    dk[b, h, j, d] = dk_t[d, j]
                    dv[b, h, j, d] = dv_t[d, j]
    return dq, dk, dv


def causal_attention_forward_np(q, k, v, scale):
    n_t = q.shape[2]
    scores = (q @ np.swapaxes(k, -1, -2)) * scale
    blocked = np.triu(np.ones((n_t, n_t), dtype=bool), 1)
    scores[..., blocked] = -np.inf
    scores -= scores.max(axis=-1, keepdims=True)
    probs = np.exp(scores)
    probs /= probs.sum(axis=-1, keepdims=True)
    return probs @ v, probs


def causal_attention_backward_np(q, k, v, probs, scale, dout):
    dv = np.swapaxes(probs, -1, -2) @ dout
    dp = dout @ np.swapaxes(v, -1, -2)
    ds = probs * (dp - (dp * probs).sum(axis=-1, keepdims=True)) * scale
    dq = ds @ k
    dk = np.swapaxes(ds, -1, -2) @ q
    return dq, dk, dv


# --------------------------------------------------------------------------
# DTW accumulated cost, steps {(1,0),(0,1),(1,1)}
# --------------------------------------------------------------------------

@_njit
def dtw_accumulate_nb(cost):
    n, m = cost.shape
    acc = np.empty((n, m))
    acc[0, 0] = cost[0, 0]
    for j in range(1, m):
        acc[0, j] = acc[0, j - 1] + cost[0, j]
    for i in range(1, n):
        acc[i, 0] = acc[i - 1, 0] + cost[i, 0]
        for j in range(1, m):
            best = acc[i - 1, j - 1]
            if acc[i - 1, j] < best:
                best = acc[i - 1, j]
            if acc[i, j - 1] < best:
                best = acc[i, j - 1]
            acc[i, j] = best + cost[i, j]
    return acc


def dtw_accumulate_np(cost):
    """Anti-diagonal sweep: every cell on diagonal ``i + j = s`` is independent."""
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for s in range(n + m - 1):
        i = np.arange(max(0, s - m + 1), min(n, s + 1))
        j = s - i
        # padded coordinates are (i+1, j+1); the (0,0) origin seeds cell (0,0)
        best = np.minimum(np.minimum(acc[i, j], acc[i, j + 1]), acc[i + 1, j])
        acc[i + 1, j + 1] = best + cost[i, j]
    return acc[1:, 1:]


@_njit
def dtw_backtrack_nb(acc):
    n, m = acc.shape
    path = np.empty((n + m - 1, 2), dtype=np.int64)
    i, j = n - 1, m - 1
    size = 0
    path[size, 0] = i
    path[size, 1] = j
    size += 1
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diag = acc[i - 1, j - 1]
            up = acc[i - 1, j]
            left = acc[i, j - 1]
            if diag <= up and diag <= left:
                i -= 1
                j -= 1
            elif up <= left:
                i -= 1
            else:
                j -= 1
        path[size, 0] = i
        path[size, 1] = j
        size += 1
    return path[:size][::-1].copy()


def dtw_backtrack_np(acc):
    n, m = acc.shape
    i, j = n - 1, m - 1
    path = [(i, j)]
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diag, up, left = acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1]
            if diag <= up and diag <= left:
                i, j = i - 1, j - 1
            elif up <= left:
                i -= 1
            else:
                j -= 1
        path.append((i, j))
    return np.array(path[::-1], dtype=np.int64)


if USE_NUMBA:
    elman_forward = elman_forward_nb
    elman_backward = elman_backward_nb
    causal_attention_forward = causal_attention_forward_nb
    causal_attention_backward = causal_attention_backward_nb
    dtw_accumulate = dtw_accumulate_nb
    dtw_backtrack = dtw_backtrack_nb
else:
    elman_forward = elman_forward_np
    elman_backward = elman_backward_np
    causal_attention_forward = causal_attention_forward_np
    causal_attention_backward = causal_attention_backward_np
    dtw_accumulate = dtw_accumulate_np
    dtw_backtrack = dtw_backtrack_np

BACKEND = "numba" if USE_NUMBA else "numpy"
