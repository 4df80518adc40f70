"""Pure-NumPy implementations of the hot kernels.

Fallback path used when numba is unavailable or when CTRKIT_BACKEND=numpy.
Every function here must match its numba twin in ``numba_ops`` (exactly for
integer outputs, to rounding for float sums).
"""

from __future__ import annotations

import numpy as np


def conv3x3_forward(x, w, b):
    """Same-padded 3x3 convolution; x (N,C,H,W), w (F,C,3,3), b (F,)."""
    n, c, h, wd = x.shape
    f = w.shape[0]
    xp = np.zeros((n, c, h + 2, wd + 2), dtype=x.dtype)
    xp[:, :, 1 : h + 1, 1 : wd + 1] = x
    patches = np.empty((n, c, 3, 3, h, wd), dtype=x.dtype)
    for u in range(3):
        for v in range(3):
            patches[:, :, u, v] = xp[:, :, u : u + h, v : v + wd]
    cols = patches.reshape(n, c * 9, h * wd)
    y = np.matmul(w.reshape(f, c * 9), cols)
    y += b[None, :, None]
    return y.reshape(n, f, h, wd)


def conv3x3_backward(x, w, dy):
    """Gradients of ``conv3x3_forward``: returns (dx, dw, db)."""
    n, c, h, wd = x.shape
    f = w.shape[0]
    xp = np.zeros((n, c, h + 2, wd + 2), dtype=x.dtype)
    xp[:, :, 1 : h + 1, 1 : wd + 1] = x
    patches = np.empty((n, c, 3, 3, h, wd), dtype=x.dtype)
    for u in range(3):
        for v in range(3):
            patches[:, :, u, v] = xp[:, :, u : u + h, v : v + wd]
    cols = patches.reshape(n, c * 9, h * wd)
    dy2 = dy.reshape(n, f, h * wd)

    dw = np.einsum("nfp,ncp->fc", dy2, cols).reshape(f, c, 3, 3)
    db = dy2.sum(axis=(0, 2))

    dcols = np.matmul(w.reshape(f, c * 9).T, dy2)  # (n, c*9, h*wd)
    dpatches = dcols.reshape(n, c, 3, 3, h, wd)
    dxp = np.zeros((n, c, h + 2, wd + 2), dtype=x.dtype)
    for u in range(3):
        for v in range(3):
            dxp[:, :, u : u + h, v : v + wd] += dpatches[:, :, u, v]
    return dxp[:, :, 1 : h + 1, 1 : wd + 1], dw, db


def maxpool2_forward(x):
    """2x2 stride-2 max pooling; returns (y, argmax) with argmax in 0..3.

    Ties resolve to the first window position in (0,0),(0,1),(1,0),(1,1)
    scan order, matching the numba twin.
    """
    n, c, h, wd = x.shape
    h2, w2 = h // 2, wd // 2
    windows = (
        x.reshape(n, c, h2, 2, w2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h2, w2, 4)
    )
    idx = windows.argmax(axis=-1).astype(np.uint8)
    y = np.take_along_axis(windows, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return y, idx


def maxpool2_backward(dy, idx, h, w):
    """Route pooled gradients back to the argmax positions."""
    n, c, h2, w2 = dy.shape
    dwin = np.zeros((n, c, h2, w2, 4), dtype=dy.dtype)
    np.put_along_axis(dwin, idx[..., None].astype(np.intp), dy[..., None], axis=-1)
    dx = (
        dwin.reshape(n, c, h2, w2, 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h, w)
    )
    return dx


def binary_erode(mask, offsets):
    """Binary erosion; pixels outside the image count as background."""
    h, w = mask.shape
    out = np.ones((h, w), dtype=mask.dtype)
    pad = int(np.abs(offsets).max()) if len(offsets) else 0
    mp = np.zeros((h + 2 * pad, w + 2 * pad), dtype=mask.dtype)
    mp[pad : pad + h, pad : pad + w] = mask
    for du, dv in offsets:
        out &= mp[pad + du : pad + du + h, pad + dv : pad + dv + w]
    return out


def binary_dilate(mask, offsets):
    """Binary dilation by the reflected footprint; no wrap-around."""
    h, w = mask.shape
    pad = int(np.abs(offsets).max()) if len(offsets) else 0
    mp = np.zeros((h + 2 * pad, w + 2 * pad), dtype=mask.dtype)
    mp[pad : pad + h, pad : pad + w] = mask
    out = np.zeros((h, w), dtype=mask.dtype)
    for du, dv in offsets:
        out |= mp[pad - du : pad - du + h, pad - dv : pad - dv + w]
    return out


def label_components(mask):
    """8-connected component labels, numbered 1..K in row-major discovery
    order; background stays 0."""
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    stack = []
    next_label = 0
    for seed in np.flatnonzero(mask):
        i0, j0 = divmod(int(seed), w)
        if labels[i0, j0]:
            continue
        next_label += 1
        labels[i0, j0] = next_label
        stack.append((i0, j0))
        while stack:
            i, j = stack.pop()
            for di in (-1, 0, 1):
                ni = i + di
                if ni < 0 or ni >= h:
                    continue
                for dj in (-1, 0, 1):
                    nj = j + dj
                    if nj < 0 or nj >= w:
                        continue
                    if mask[ni, nj] and not labels[ni, nj]:
                        labels[ni, nj] = next_label
                        stack.append((ni, nj))
    return labels
