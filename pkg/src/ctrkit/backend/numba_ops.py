"""Numba-compiled twins of the kernels in ``numpy_ops``.

All loops are serial so that results are bit-reproducible run to run; the
inner j-loops are contiguous and SIMD-vectorize well. Compilation results
are cached on disk next to this file.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def conv3x3_forward(x, w, b):
    n, c, h, wd = x.shape
    f = w.shape[0]
    xp = np.zeros((n, c, h + 2, wd + 2), dtype=x.dtype)
    xp[:, :, 1 : h + 1, 1 : wd + 1] = x
    y = np.empty((n, f, h, wd), dtype=x.dtype)
    for ni in range(n):
        for fi in range(f):
            y[ni, fi] = b[fi]
            for ci in range(c):
                for u in range(3):
                    for v in range(3):
                        wv = w[fi, ci, u, v]
                        for i in range(h):
                            for j in range(wd):
                                y[ni, fi, i, j] += wv * xp[ni, ci, i + u, j + v]
    return y


@njit(cache=True)
def conv3x3_backward(x, w, dy):
    n, c, h, wd = x.shape
    f = w.shape[0]
    xp = np.zeros((n, c, h + 2, wd + 2), dtype=x.dtype)
    xp[:, :, 1 : h + 1, 1 : wd + 1] = x

    dw = np.zeros_like(w)
    db = np.zeros(f, dtype=x.dtype)
    dxp = np.zeros((n, c, h + 2, wd + 2), dtype=x.dtype)
    for ni in range(n):
        for fi in range(f):
            s = 0.0
            for i in range(h):
                for j in range(wd):
                    s += dy[ni, fi, i, j]
            db[fi] += s
            for ci in range(c):
                for u in range(3):
                    for v in range(3):
                        acc = 0.0
                        wv = w[fi, ci, u, v]
                        for i in range(h):
                            for j in range(wd):
                                g = dy[ni, fi, i, j]
                                acc += g * xp[ni, ci, i + u, j + v]
                                dxp[ni, ci, i + u, j + v] += g * wv
                        dw[fi, ci, u, v] += acc
    return dxp[:, :, 1 : h + 1, 1 : wd + 1], dw, db


@njit(cache=True)
def maxpool2_forward(x):
    n, c, h, wd = x.shape
    h2, w2 = h // 2, wd // 2
    y = np.empty((n, c, h2, w2), dtype=x.dtype)
    idx = np.empty((n, c, h2, w2), dtype=np.uint8)
    for ni in range(n):
        for ci in range(c):
            for i in range(h2):
                for j in range(w2):
                    best = x[ni, ci, 2 * i, 2 * j]
                    k = 0
                    for di in range(2):
                        for dj in range(2):
                            v = x[ni, ci, 2 * i + di, 2 * j + dj]
                            if v > best:
                                best = v
                                k = 2 * di + dj
                    y[ni, ci, i, j] = best
                    idx[ni, ci, i, j] = k
    return y, idx


@njit(cache=True)
def maxpool2_backward(dy, idx, h, w):
    n, c, h2, w2 = dy.shape
    dx = np.zeros((n, c, h, w), dtype=dy.dtype)
    for ni in range(n):
        for ci in range(c):
            for i in range(h2):
                for j in range(w2):
                    k = idx[ni, ci, i, j]
                    dx[ni, ci, 2 * i + k // 2, 2 * j + k % 2] = dy[ni, ci, i, j]
    return dx


@njit(cache=True)
def _padded(mask, pad):
    h, w = mask.shape
    mp = np.zeros((h + 2 * pad, w + 2 * pad), dtype=mask.dtype)
    mp[pad : pad + h, pad : pad + w] = mask
    return mp


@njit(cache=True)
def binary_erode(mask, offsets):
    h, w = mask.shape
    pad = 0
    for k in range(offsets.shape[0]):
        pad = max(pad, abs(offsets[k, 0]), abs(offsets[k, 1]))
    mp = _padded(mask, pad)
    out = np.ones((h, w), dtype=mask.dtype)
    for k in range(offsets.shape[0]):
        du, dv = offsets[k, 0], offsets[k, 1]
        for i in range(h):
            row = mp[pad + du + i]
            col0 = pad + dv
            for j in range(w):
                out[i, j] &= row[col0 + j]
    return out


@njit(cache=True)
def binary_dilate(mask, offsets):
    h, w = mask.shape
    pad = 0
    for k in range(offsets.shape[0]):
        pad = max(pad, abs(offsets[k, 0]), abs(offsets[k, 1]))
    mp = _padded(mask, pad)
    out = np.zeros((h, w), dtype=mask.dtype)
    for k in range(offsets.shape[0]):
        du, dv = offsets[k, 0], offsets[k, 1]
        for i in range(h):
            row = mp[pad - du + i]
            col0 = pad - dv
            for j in range(w):
                out[i, j] |= row[col0 + j]
    return out


@njit(cache=True)
def label_components(mask):
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    stack = np.empty(h * w, dtype=np.int64)
    next_label = 0
    for i0 in range(h):
        for j0 in range(w):
            if mask[i0, j0] == 0 or labels[i0, j0] != 0:
                continue
            next_label += 1
            labels[i0, j0] = next_label
            top = 0
            stack[top] = i0 * w + j0
            top += 1
            while top > 0:
                top -= 1
                p = stack[top]
                pi = p // w
                pj = p % w
                for di in range(-1, 2):
                    ni = pi + di
                    if ni < 0 or ni >= h:
                        continue
                    for dj in range(-1, 2):
                        nj = pj + dj
                        if nj < 0 or nj >= w:
                            continue
                        if mask[ni, nj] != 0 and labels[ni, nj] == 0:
                            labels[ni, nj] = next_label
                            stack[top] = ni * w + nj
                            top += 1
    return labels
