"""Encoder-decoder segmentation network assembled from the layer
primitives, with optional attention-gated skip connections.

The decoder upsamples with 2x nearest-neighbor followed by a 1x1 channel
projection (no transposed convolutions), concatenates the (optionally
gated) skip, and applies one 3x3 convolution per level. The head is a 1x1
convolution with a sigmoid, producing a dual-channel probability map
(heart, thorax).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers as L
from .layers import ShapeMismatch


@dataclass(frozen=True)
class NetConfig:
    input_size: int = 64
    base_channels: int = 8
    depth: int = 3
    attention_gate: bool = True
    in_channels: int = 1
    out_channels: int = 2

    def __post_init__(self):
        if self.base_channels < 4:
            raise ValueError(f"base_channels must be >= 4, got {self.base_channels}")
        if self.input_size % (2**self.depth) != 0:
            raise ValueError(
                f"input_size {self.input_size} must be divisible by 2^depth = {2**self.depth}"
            )
        if self.out_channels != 2:
            raise ValueError("output is fixed to 2 channels (heart, thorax)")


class AttentionUNet:
    def __init__(self, config: NetConfig):
        self.config = config
        self.enc_channels = [config.base_channels * 2**l for l in range(config.depth)]
        self.bott_channels = config.base_channels * 2**config.depth

    # ------------------------------------------------------------ params

    def param_shapes(self) -> dict[str, tuple]:
        cfg = self.config
        shapes: dict[str, tuple] = {}
        prev = cfg.in_channels
        for l, c in enumerate(self.enc_channels):
            shapes[f"enc{l}.conv1.w"] = (c, prev, 3, 3)
            shapes[f"enc{l}.conv1.b"] = (c,)
            shapes[f"enc{l}.conv2.w"] = (c, c, 3, 3)
            shapes[f"enc{l}.conv2.b"] = (c,)
            prev = c
        cb = self.bott_channels
        shapes["bott.conv1.w"] = (cb, prev, 3, 3)
        shapes["bott.conv1.b"] = (cb,)
        shapes["bott.conv2.w"] = (cb, cb, 3, 3)
        shapes["bott.conv2.b"] = (cb,)
        coarse = cb
        for l in reversed(range(cfg.depth)):
            c = self.enc_channels[l]
            shapes[f"dec{l}.up.w"] = (c, coarse)
            shapes[f"dec{l}.up.b"] = (c,)
            if cfg.attention_gate:
                ci = max(c // 2, 1)
                shapes[f"dec{l}.gate.wx"] = (ci, c)
                shapes[f"dec{l}.gate.wg"] = (ci, coarse)
                shapes[f"dec{l}.gate.b"] = (ci,)
                shapes[f"dec{l}.gate.wpsi"] = (1, ci)
                shapes[f"dec{l}.gate.bpsi"] = (1,)
            shapes[f"dec{l}.conv.w"] = (c, 2 * c, 3, 3)
            shapes[f"dec{l}.conv.b"] = (c,)
            coarse = c
        shapes["head.w"] = (cfg.out_channels, self.enc_channels[0])
        shapes["head.b"] = (cfg.out_channels,)
        return shapes

    def init_params(self, seed: int = 0) -> dict[str, np.ndarray]:
        """He-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in self.param_shapes().items():
            if name.endswith((".b", ".bpsi")):
                params[name] = np.zeros(shape)
            else:
                fan_in = shape[1] * (9 if len(shape) == 4 else 1)
                limit = np.sqrt(6.0 / fan_in)
                params[name] = rng.uniform(-limit, limit, size=shape)
        return params

    # ----------------------------------------------------------- forward

    def _check_input(self, x):
        cfg = self.config
        if (
            x.ndim != 4
            or x.shape[1] != cfg.in_channels
            or x.shape[2] != cfg.input_size
            or x.shape[3] != cfg.input_size
        ):
            raise ShapeMismatch(
                f"expected (N, {cfg.in_channels}, {cfg.input_size}, {cfg.input_size}), got {x.shape}"
            )

    def forward(self, params, x) -> np.ndarray:
        """Probability maps (N, 2, H, W), every value in (0, 1)."""
        y, _ = self._forward(params, x)
        return y

    def _forward(self, params, x):
        cfg = self.config
        self._check_input(x)
        x = np.ascontiguousarray(x, dtype=np.float64)

        enc_caches = []
        skips = []
        h = x
        for l in range(cfg.depth):
            x_in = h
            z1 = L.conv3x3(x_in, params[f"enc{l}.conv1.w"], params[f"enc{l}.conv1.b"])
            a1 = L.relu(z1)
            z2 = L.conv3x3(a1, params[f"enc{l}.conv2.w"], params[f"enc{l}.conv2.b"])
            a2 = L.relu(z2)
            h, idx = L.maxpool2(a2)
            skips.append(a2)
            enc_caches.append((x_in, z1, a1, z2, a2, idx))

        bott_in = h
        zb1 = L.conv3x3(bott_in, params["bott.conv1.w"], params["bott.conv1.b"])
        ab1 = L.relu(zb1)
        zb2 = L.conv3x3(ab1, params["bott.conv2.w"], params["bott.conv2.b"])
        h = L.relu(zb2)

        dec_caches = []
        for l in reversed(range(cfg.depth)):
            g = h
            skip = skips[l]
            if cfg.attention_gate:
                xg, gate_cache = L.attention_gate(
                    skip,
                    g,
                    params[f"dec{l}.gate.wx"],
                    params[f"dec{l}.gate.wg"],
                    params[f"dec{l}.gate.b"],
                    params[f"dec{l}.gate.wpsi"],
                    params[f"dec{l}.gate.bpsi"],
                )
            else:
                xg, gate_cache = skip, None
            u0 = L.upsample2(g)
            zu = L.conv1x1(u0, params[f"dec{l}.up.w"], params[f"dec{l}.up.b"])
            au = L.relu(zu)
            cat = L.concat_channels(au, xg)
            zd = L.conv3x3(cat, params[f"dec{l}.conv.w"], params[f"dec{l}.conv.b"])
            h = L.relu(zd)
            dec_caches.append((l, gate_cache, u0, zu, cat, zd))

        zh = L.conv1x1(h, params["head.w"], params["head.b"])
        y = L.sigmoid(zh)
        cache = (x, enc_caches, (bott_in, zb1, ab1, zb2), dec_caches, h, y)
        return y, cache

    # ---------------------------------------------------------- backward

    def loss_and_grads(self, params, x, target):
        """Mean BCE loss and gradients for every parameter tensor."""
        y, cache = self._forward(params, x)
        _, enc_caches, bott_cache, dec_caches, head_in, _ = cache
        loss, dy = L.bce_loss(y, target)
        grads: dict[str, np.ndarray] = {}

        dzh = L.sigmoid_grad(dy, y)
        dh, grads["head.w"], grads["head.b"] = L.conv1x1_grad(dzh, head_in, params["head.w"])

        cfg = self.config
        dskips: dict[int, np.ndarray] = {}
        for l, gate_cache, u0, zu, cat, zd in reversed(dec_caches):
            dzd = L.relu_grad(dh, zd)
            dcat, grads[f"dec{l}.conv.w"], grads[f"dec{l}.conv.b"] = L.conv3x3_grad(
                dzd, cat, params[f"dec{l}.conv.w"]
            )
            c = self.enc_channels[l]
            dau, dxg = L.concat_channels_grad(dcat, c)
            dzu = L.relu_grad(dau, zu)
            du0, grads[f"dec{l}.up.w"], grads[f"dec{l}.up.b"] = L.conv1x1_grad(
                dzu, u0, params[f"dec{l}.up.w"]
            )
            dg = L.upsample2_grad(du0)
            if cfg.attention_gate:
                dskip, dg_gate, ggrads = L.attention_gate_grad(dxg, gate_cache)
                dg = dg + dg_gate
                for k, v in ggrads.items():
                    grads[f"dec{l}.gate.{k}"] = v
            else:
                dskip = dxg
            dskips[l] = dskip
            dh = dg

        bott_in, zb1, ab1, zb2 = bott_cache
        dzb2 = L.relu_grad(dh, zb2)
        dab1, grads["bott.conv2.w"], grads["bott.conv2.b"] = L.conv3x3_grad(
            dzb2, ab1, params["bott.conv2.w"]
        )
        dzb1 = L.relu_grad(dab1, zb1)
        dh, grads["bott.conv1.w"], grads["bott.conv1.b"] = L.conv3x3_grad(
            dzb1, bott_in, params["bott.conv1.w"]
        )

        for l in reversed(range(cfg.depth)):
            x_in, z1, a1, z2, a2, idx = enc_caches[l]
            da2 = L.maxpool2_grad(dh, idx, a2.shape[2], a2.shape[3]) + dskips[l]
            dz2 = L.relu_grad(da2, z2)
            da1, grads[f"enc{l}.conv2.w"], grads[f"enc{l}.conv2.b"] = L.conv3x3_grad(
                dz2, a1, params[f"enc{l}.conv2.w"]
            )
            dz1 = L.relu_grad(da1, z1)
            dh, grads[f"enc{l}.conv1.w"], grads[f"enc{l}.conv1.b"] = L.conv3x3_grad(
                dz1, x_in, params[f"enc{l}.conv1.w"]
            )

        return loss, grads
