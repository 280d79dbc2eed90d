"""Pure-numpy kernels for masked temporal pooling and linear upsampling.

This is the fallback backend; ``tricot.kernels`` picks between this module
and the numba twin at import time.  Both implement identical contracts:

* pooling with stride k produces ceil(T/k) windows, the last window covering
  the remainder, so any T >= k is legal.  Window means are computed as
  ``ref + sum(x - ref)/n`` with ref the first valid frame, which pools
  constant windows exactly (the naive sum/n form rounds).
* a window with no valid frames copies the nearest valid window to its left;
  rows whose leading windows are all empty get zeros there.
* upsampling is endpoint aligned (pooled 0 -> frame 0, pooled L-1 -> frame
  T-1) and interpolates as ``a + f*(b - a)``, exact on constants.
"""

from __future__ import annotations

import numpy as np


def pool_len(t: int, stride: int) -> int:
    """Number of pooled windows for a length-t sequence."""
    return -(-t // stride)


def masked_mean_pool_fwd(x: np.ndarray, mask: np.ndarray, stride: int):
    """Pool (B,T,C) -> (B,L,C) window means over valid frames.

    Returns (out, counts, src) where counts[b,l] is the number of valid
    frames in window l and src[b,l] is the window whose content out[b,l]
    carries (l itself, a left neighbour for empty windows, -1 for zeros).
    """
    B, T, C = x.shape
    L = pool_len(T, stride)
    out = np.zeros((B, L, C), dtype=np.float64)
    counts = np.zeros((B, L), dtype=np.int64)
    src = np.full((B, L), -1, dtype=np.int64)

    for l in range(L):
        lo, hi = l * stride, min((l + 1) * stride, T)
        m = mask[:, lo:hi]
        cnt = m.sum(axis=1)
        counts[:, l] = cnt
        rows = np.nonzero(cnt > 0)[0]
        if rows.size == 0:
            continue
        first = np.argmax(m[rows], axis=1)
        ref = x[rows, lo + first, :]
        diff = (x[rows, lo:hi, :] - ref[:, None, :]) * m[rows, :, None]
        out[rows, l, :] = ref + diff.sum(axis=1) / cnt[rows, None]

    last = np.full(B, -1, dtype=np.int64)
    for l in range(L):
        has = counts[:, l] > 0
        src[has, l] = l
        src[~has, l] = last[~has]
        last[has] = l
    for l in range(L):
        borrow = np.nonzero((src[:, l] >= 0) & (src[:, l] != l))[0]
        if borrow.size:
            out[borrow, l, :] = out[borrow, src[borrow, l], :]
    return out, counts, src


def masked_mean_pool_bwd(grad_out: np.ndarray, mask: np.ndarray, stride: int,
                         counts: np.ndarray, src: np.ndarray, t: int) -> np.ndarray:
    """Route window gradients back onto the valid frames that produced them."""
    B, L, C = grad_out.shape
    routed = np.zeros((B, L, C), dtype=np.float64)
    for l in range(L):
        s = src[:, l]
        rows = np.nonzero(s >= 0)[0]
        if rows.size:
            np.add.at(routed, (rows, s[rows]), grad_out[rows, l])
    grad_x = np.zeros((B, t, C), dtype=np.float64)
    for l in range(L):
        lo, hi = l * stride, min((l + 1) * stride, t)
        cnt = counts[:, l]
        rows = np.nonzero(cnt > 0)[0]
        if rows.size == 0:
            continue
        share = routed[rows, l, :] / cnt[rows, None]
        grad_x[rows, lo:hi, :] += mask[rows, lo:hi, None] * share[:, None, :]
    return grad_x


def linear_upsample_fwd(x: np.ndarray, t_out: int) -> np.ndarray:
    """Endpoint-aligned linear interpolation from (B,L,C) to (B,t_out,C)."""
    B, L, C = x.shape
    if L == 1:
        return np.repeat(x, t_out, axis=1).astype(np.float64)
    if t_out == 1:
        return x[:, :1, :].copy()
    pos = np.arange(t_out, dtype=np.float64) * (L - 1) / (t_out - 1)
    i0 = np.minimum(pos.astype(np.int64), L - 2)
    f = pos - i0
    a = x[:, i0, :]
    b = x[:, i0 + 1, :]
    out = a + f[None, :, None] * (b - a)
    out[:, 0, :] = x[:, 0, :]
    out[:, t_out - 1, :] = x[:, L - 1, :]
    return out


def linear_upsample_bwd(grad_out: np.ndarray, l_in: int) -> np.ndarray:
    """Scatter output gradients back with the interpolation weights."""
    B, T, C = grad_out.shape
    grad_x = np.zeros((B, l_in, C), dtype=np.float64)
    if l_in == 1:
        grad_x[:, 0, :] = grad_out.sum(axis=1)
        return grad_x
    if T == 1:
        grad_x[:, 0, :] = grad_out[:, 0, :]
        return grad_x
    pos = np.arange(T, dtype=np.float64) * (l_in - 1) / (T - 1)
    i0 = np.minimum(pos.astype(np.int64), l_in - 2)
    f = pos - i0
    for t in range(T):
        grad_x[:, i0[t], :] += (1.0 - f[t]) * grad_out[:, t, :]
        grad_x[:, i0[t] + 1, :] += f[t] * grad_out[:, t, :]
    return grad_x
