"""Compiled inner loops for the memory-bound parts of the conv stack.

Plain sequential loops, no fastmath and no parallel reductions, so results
are bit-reproducible. GEMMs stay in numpy/BLAS.
"""

import ctypes
import ctypes.util
import sys

import numpy as np
from numba import njit

_allocator_tuned = False


def tune_allocator():
    """Keep freed numpy buffers in the heap instead of unmapping them (glibc only).

    A training step allocates and frees tens of megabytes of temporaries; with
    default settings glibc hands each one back to the kernel and the next step
    page-faults it in again. Process-wide and idempotent; a no-op elsewhere.
    """
    global _allocator_tuned
    if _allocator_tuned or not sys.platform.startswith("linux"):
        return
    _allocator_tuned = True
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c"))
        mallopt = libc.mallopt
    except (OSError, AttributeError, TypeError):
        return
    m_trim_threshold, m_top_pad, m_mmap_threshold = -1, -2, -3
    mallopt(m_mmap_threshold, 32 << 20)
    mallopt(m_trim_threshold, 256 << 20)
    mallopt(m_top_pad, 64 << 20)


@njit(cache=True)
def im2col(x, k, s, p, ho, wo):
    # rows (n, oy, ox); columns (i, j, c)
    n, c, h, w = x.shape
    hp, wp = h + 2 * p, w + 2 * p
    # zero-padded NHWC copy: one kernel row is then a contiguous run of k*c values
    xp = np.zeros((n, hp, wp, c))
    for b in range(n):
        for ch in range(c):
            for y in range(h):
                for xx in range(w):
                    xp[b, y + p, xx + p, ch] = x[b, ch, y, xx]
    flat = xp.reshape(n, hp, wp * c)
    kc = k * c
    cols = np.empty((n * ho * wo, k * kc))
    for b in range(n):
        for oy in range(ho):
            for ox in range(wo):
                r = (b * ho + oy) * wo + ox
                start = ox * s * c
                for i in range(k):
                    src = flat[b, oy * s + i]
                    for q in range(kc):
                        cols[r, i * kc + q] = src[start + q]
    return cols


@njit(cache=True)
def col2im(gcols, n, c, h, w, k, s, p, ho, wo):
    gx = np.zeros((n, c, h, w))
    for b in range(n):
        for oy in range(ho):
            for ox in range(wo):
                r = (b * ho + oy) * wo + ox
                for i in range(k):
                    iy = oy * s + i - p
                    if iy < 0 or iy >= h:
                        continue
                    for j in range(k):
                        ix = ox * s + j - p
                        if ix < 0 or ix >= w:
                            continue
                        base = (i * k + j) * c
                        for ch in range(c):
                            gx[b, ch, iy, ix] += gcols[r, base + ch]
    return gx


@njit(cache=True)
def rows_to_nchw(rows, bias, n, ho, wo):
    # (n*ho*wo, o) GEMM output plus bias -> (n, o, ho, wo)
    o = rows.shape[1]
    out = np.empty((n, o, ho, wo))
    for b in range(n):
        for oy in range(ho):
            for ox in range(wo):
                r = (b * ho + oy) * wo + ox
                for ch in range(o):
                    out[b, ch, oy, ox] = rows[r, ch] + bias[ch]
    return out


@njit(cache=True)
def nchw_to_rows(g):
    n, o, ho, wo = g.shape
    rows = np.empty((n * ho * wo, o))
    for b in range(n):
        for ch in range(o):
            for oy in range(ho):
                for ox in range(wo):
                    rows[(b * ho + oy) * wo + ox, ch] = g[b, ch, oy, ox]
    return rows


@njit(cache=True)
def maxpool2(x):
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    out = np.empty((n, c, ho, wo))
    arg = np.empty((n, c, ho, wo), np.uint8)
    for b in range(n):
        for ch in range(c):
            for y in range(ho):
                for xx in range(wo):
                    # strict > keeps the first maximum in row-major order
                    m = x[b, ch, 2 * y, 2 * xx]
                    a = 0
                    v = x[b, ch, 2 * y, 2 * xx + 1]
                    if v > m:
                        m = v
                        a = 1
                    v = x[b, ch, 2 * y + 1, 2 * xx]
                    if v > m:
                        m = v
                        a = 2
                    v = x[b, ch, 2 * y + 1, 2 * xx + 1]
                    if v > m:
                        m = v
                        a = 3
                    out[b, ch, y, xx] = m
                    arg[b, ch, y, xx] = a
    return out, arg


@njit(cache=True)
def maxpool2_grad(g, arg, h, w):
    n, c, ho, wo = g.shape
    gx = np.zeros((n, c, h, w))
    for b in range(n):
        for ch in range(c):
            for y in range(ho):
                for xx in range(wo):
                    a = arg[b, ch, y, xx]
                    gx[b, ch, 2 * y + a // 2, 2 * xx + a % 2] = g[b, ch, y, xx]
    return gx


@njit(cache=True)
def relu_grad(g, x):
    out = np.empty_like(g)
    gf = g.ravel()
    xf = x.ravel()
    of = out.ravel()
    for i in range(gf.size):
        of[i] = gf[i] if xf[i] > 0.0 else 0.0
    return out


@njit(cache=True)
def _axpy(acc, xp, kv, off, m):
    for q in range(m):
        acc[q] += kv * xp[q + off]


@njit(cache=True)
def _depthwise_any(x, kernels, active):
    n, c, h, w = x.shape
    k = kernels.shape[1]
    r = (k - 1) // 2
    wp = w + 2 * r
    xp = np.zeros((h + 2 * r) * wp)
    acc = np.empty(h * wp)
    m = (h - 1) * wp + w
    out = np.empty_like(x)
    for b in range(n):
        for ch in range(c):
            if not active[ch]:
                out[b, ch] = x[b, ch]
                continue
            for y in range(h):
                row = (y + r) * wp + r
                for xx in range(w):
                    xp[row + xx] = x[b, ch, y, xx]
            acc[:] = 0.0
            for i in range(k):
                for j in range(k):
                    _axpy(acc, xp, kernels[ch, i, j], i * wp + j, m)
            for y in range(h):
                for xx in range(w):
                    out[b, ch, y, xx] = acc[y * wp + xx]
    return out


@njit(cache=True)
def _depthwise3(x, kernels, active):
    # 3x3 taps unrolled so the loop over output columns vectorizes
    n, c, h, w = x.shape
    out = np.empty_like(x)
    xp = np.zeros((h + 2, w + 2))
    for ch in range(c):
        if not active[ch]:
            for b in range(n):
                out[b, ch] = x[b, ch]
            continue
        k00, k01, k02 = kernels[ch, 0, 0], kernels[ch, 0, 1], kernels[ch, 0, 2]
        k10, k11, k12 = kernels[ch, 1, 0], kernels[ch, 1, 1], kernels[ch, 1, 2]
        k20, k21, k22 = kernels[ch, 2, 0], kernels[ch, 2, 1], kernels[ch, 2, 2]
        for b in range(n):
            src = x[b, ch]
            for y in range(h):
                for xx in range(w):
                    xp[y + 1, xx + 1] = src[y, xx]
            dst = out[b, ch]
            for y in range(h):
                r0, r1, r2 = xp[y], xp[y + 1], xp[y + 2]
                d = dst[y]
                for xx in range(w):
                    d[xx] = (
                        k00 * r0[xx] + k01 * r0[xx + 1] + k02 * r0[xx + 2]
                        + k10 * r1[xx] + k11 * r1[xx + 1] + k12 * r1[xx + 2]
                        + k20 * r2[xx] + k21 * r2[xx + 1] + k22 * r2[xx + 2]
                    )
    return out


def depthwise(x, kernels, active):
    """Zero-padded per-channel correlation; channels with ``active[c]`` False are copied."""
    if kernels.shape[1] == 3:
        return _depthwise3(x, kernels, active)
    return _depthwise_any(x, kernels, active)
