"""Numba-compiled twins of the pooling/upsampling kernels.

Same contracts as tricot.kernels._numpy (see that module's docstring).
Loops are kept sequential and fastmath stays off so results are
deterministic and match the numpy backend to rounding order.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def masked_mean_pool_fwd(x, mask, stride):
    B, T, C = x.shape
    L = (T + stride - 1) // stride
    out = np.zeros((B, L, C), dtype=np.float64)
    counts = np.zeros((B, L), dtype=np.int64)
    src = np.full((B, L), -1, dtype=np.int64)
    for b in range(B):
        last = -1
        for l in range(L):
            lo = l * stride
            hi = min(lo + stride, T)
            n = 0
            first = -1
            for t in range(lo, hi):
                if mask[b, t]:
                    n += 1
                    if first < 0:
                        first = t
            counts[b, l] = n
            if n > 0:
                for c in range(C):
                    ref = x[b, first, c]
                    acc = 0.0
                    for t in range(lo, hi):
                        if mask[b, t]:
                            acc += x[b, t, c] - ref
                    out[b, l, c] = ref + acc / n
                src[b, l] = l
                last = l
            else:
                src[b, l] = last
                if last >= 0:
                    for c in range(C):
                        out[b, l, c] = out[b, last, c]
    return out, counts, src


@njit(cache=True)
def masked_mean_pool_bwd(grad_out, mask, stride, counts, src, t):
    B, L, C = grad_out.shape
    routed = np.zeros((B, L, C), dtype=np.float64)
    for b in range(B):
        for l in range(L):
            s = src[b, l]
            if s >= 0:
                for c in range(C):
                    routed[b, s, c] += grad_out[b, l, c]
    grad_x = np.zeros((B, t, C), dtype=np.float64)
    for b in range(B):
        for l in range(L):
            n = counts[b, l]
            if n == 0:
                continue
            lo = l * stride
            hi = min(lo + stride, t)
            for tt in range(lo, hi):
                if mask[b, tt]:
                    for c in range(C):
                        grad_x[b, tt, c] += routed[b, l, c] / n
    return grad_x


@njit(cache=True)
def linear_upsample_fwd(x, t_out):
    B, L, C = x.shape
    out = np.empty((B, t_out, C), dtype=np.float64)
    if L == 1:
        for b in range(B):
            for t in range(t_out):
                for c in range(C):
                    out[b, t, c] = x[b, 0, c]
        return out
    if t_out == 1:
        for b in range(B):
            for c in range(C):
                out[b, 0, c] = x[b, 0, c]
        return out
    for t in range(t_out):
        pos = t * (L - 1) / (t_out - 1)
        i0 = int(pos)
        if i0 > L - 2:
            i0 = L - 2
        f = pos - i0
        for b in range(B):
            for c in range(C):
                a = x[b, i0, c]
                out[b, t, c] = a + f * (x[b, i0 + 1, c] - a)
    for b in range(B):
        for c in range(C):
            out[b, 0, c] = x[b, 0, c]
            out[b, t_out - 1, c] = x[b, L - 1, c]
    return out


@njit(cache=True)
def linear_upsample_bwd(grad_out, l_in):
    B, T, C = grad_out.shape
    grad_x = np.zeros((B, l_in, C), dtype=np.float64)
    if l_in == 1:
        for b in range(B):
            for t in range(T):
                for c in range(C):
                    grad_x[b, 0, c] += grad_out[b, t, c]
        return grad_x
    if T == 1:
        for b in range(B):
            for c in range(C):
                grad_x[b, 0, c] = grad_out[b, 0, c]
        return grad_x
    for t in range(T):
        pos = t * (l_in - 1) / (T - 1)
        i0 = int(pos)
        if i0 > l_in - 2:
            i0 = l_in - 2
        f = pos - i0
        for b in range(B):
            for c in range(C):
                grad_x[b, i0, c] += (1.0 - f) * grad_out[b, t, c]
                grad_x[b, i0 + 1, c] += f * grad_out[b, t, c]
    return grad_x
