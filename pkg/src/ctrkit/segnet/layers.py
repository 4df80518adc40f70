"""Network layers as paired forward/backward functions on float64 NCHW
tensors. Every backward here is validated against central finite
differences in the test suite, so keep forward and backward in lockstep.
"""

from __future__ import annotations

import numpy as np

from .. import backend
from ..core import CtrError

BCE_CLAMP = 1e-7


class ShapeMismatch(CtrError):
    """Tensor shapes do not satisfy the layer contract."""


def conv3x3(x, w, b):
    """Same-padded 3x3 convolution, stride 1."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"conv3x3: input {x.shape} does not match weight {w.shape}")
    return backend.conv3x3_forward(x, w, b)


def conv3x3_grad(dy, x, w):
    """Returns (dx, dw, db) for conv3x3."""
    return backend.conv3x3_backward(x, w, dy)


def conv1x1(x, w, b=None):
    """Pointwise channel mix; w is (out, in)."""
    if x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"conv1x1: input {x.shape} does not match weight {w.shape}")
    y = np.einsum("fc,nchw->nfhw", w, x, optimize=True)
    if b is not None:
        y += b[None, :, None, None]
    return y


def conv1x1_grad(dy, x, w):
    dw = np.einsum("nfhw,nchw->fc", dy, x, optimize=True)
    db = dy.sum(axis=(0, 2, 3))
    dx = np.einsum("fc,nfhw->nchw", w, dy, optimize=True)
    return dx, dw, db


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(dy, x):
    return dy * (x > 0)


def sigmoid(x):
    # Split by sign to avoid overflow in exp.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_grad(dy, y):
    return dy * y * (1.0 - y)


def maxpool2(x):
    """2x2 stride-2 max pool; returns (y, argmax-cache)."""
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeMismatch(f"maxpool2 needs even spatial dims, got {x.shape}")
    return backend.maxpool2_forward(x)


def maxpool2_grad(dy, idx, h, w):
    return backend.maxpool2_backward(dy, idx, h, w)


def upsample2(x):
    """2x nearest-neighbor upsampling."""
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def upsample2_grad(dy):
    n, c, h, w = dy.shape
    return dy.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def concat_channels(a, b):
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeMismatch(f"concat: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=1)


def concat_channels_grad(dy, c_first):
    return dy[:, :c_first], dy[:, c_first:]


def bce_loss(pred, target):
    """Mean binary cross-entropy and its gradient w.r.t. pred.

    Predictions are clamped to [1e-7, 1 - 1e-7] before the logs; the
    gradient is zero where the clamp is active (the clamped loss is locally
    constant there).
    """
    if pred.shape != target.shape:
        raise ShapeMismatch(f"bce: pred {pred.shape} vs target {target.shape}")
    p = np.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    loss = -(target * np.log(p) + (1.0 - target) * np.log1p(-p)).mean()
    grad = (-(target / p) + (1.0 - target) / (1.0 - p)) / pred.size
    inside = (pred >= BCE_CLAMP) & (pred <= 1.0 - BCE_CLAMP)
    return float(loss), np.where(inside, grad, 0.0)


def attention_gate(x, g, wx, wg, b, wpsi, bpsi):
    """Additive spatial attention over a skip connection.

    The skip ``x`` and gating signal ``g`` are projected with 1x1 convs,
    summed, passed through ReLU and a final 1x1 projection + sigmoid to a
    single-channel coefficient map alpha in (0,1); the output is alpha * x.
    ``g`` may arrive at the same spatial size as ``x`` or at exactly half,
    in which case it is upsampled (nearest) internally.

    Returns (out, cache) for the matching backward.
    """
    if g.shape[2:] == x.shape[2:]:
        g_up, upsampled = g, False
    elif (g.shape[2] * 2, g.shape[3] * 2) == x.shape[2:]:
        g_up, upsampled = upsample2(g), True
    else:
        raise ShapeMismatch(f"gate: skip {x.shape} and gating {g.shape} are incompatible")
    s = conv1x1(x, wx) + conv1x1(g_up, wg) + b[None, :, None, None]
    r = relu(s)
    alpha = sigmoid(conv1x1(r, wpsi, bpsi))
    out = alpha * x
    cache = (x, g_up, upsampled, s, r, alpha, wx, wg, wpsi)
    return out, cache


def attention_gate_grad(dout, cache):
    """Returns (dx, dg, param_grads) for attention_gate."""
    x, g_up, upsampled, s, r, alpha, wx, wg, wpsi = cache
    dalpha = (dout * x).sum(axis=1, keepdims=True)
    dx = dout * alpha
    dz = sigmoid_grad(dalpha, alpha)
    dr, dwpsi, dbpsi = conv1x1_grad(dz, r, wpsi)
    ds = relu_grad(dr, s)
    db = ds.sum(axis=(0, 2, 3))
    dx_proj, dwx, _ = conv1x1_grad(ds, x, wx)
    dg_up, dwg, _ = conv1x1_grad(ds, g_up, wg)
    dx += dx_proj
    dg = upsample2_grad(dg_up) if upsampled else dg_up
    return dx, dg, {"wx": dwx, "wg": dwg, "b": db, "wpsi": dwpsi, "bpsi": dbpsi}
