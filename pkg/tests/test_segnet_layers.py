import numpy as np
import pytest

from ctrkit.segnet import AttentionUNet, NetConfig
from ctrkit.segnet import layers as L
from ctrkit.segnet.layers import ShapeMismatch

rng = np.random.default_rng(0)


def test_forward_shape_and_range():
    cfg = NetConfig(input_size=64, base_channels=8, depth=3)
    model = AttentionUNet(cfg)
    params = model.init_params(0)
    x = rng.random((1, 1, 64, 64))
    y = model.forward(params, x)
    assert y.shape == (1, 2, 64, 64)
    assert 0.0 < y.min() and y.max() < 1.0


def test_forward_deterministic():
    cfg = NetConfig(input_size=16, base_channels=4, depth=2)
    model = AttentionUNet(cfg)
    params = model.init_params(3)
    x = rng.random((2, 1, 16, 16))
    assert np.array_equal(model.forward(params, x), model.forward(params, x))


def test_zero_weight_head_outputs_sigmoid_bias():
    cfg = NetConfig(input_size=16, base_channels=4, depth=2)
    model = AttentionUNet(cfg)
    params = model.init_params(1)
    params["head.w"] = np.zeros_like(params["head.w"])
    params["head.b"] = np.array([0.3, -0.7])
    y = model.forward(params, rng.random((1, 1, 16, 16)))
    expected = 1 / (1 + np.exp(-params["head.b"]))
    assert np.allclose(y[0, 0], expected[0])
    assert np.allclose(y[0, 1], expected[1])


def test_forward_rejects_wrong_shape():
    cfg = NetConfig(input_size=16, base_channels=4, depth=2)
    model = AttentionUNet(cfg)
    params = model.init_params(0)
    with pytest.raises(ShapeMismatch):
        model.forward(params, rng.random((1, 1, 8, 8)))
    with pytest.raises(ShapeMismatch):
        model.forward(params, rng.random((1, 2, 16, 16)))


def test_net_config_validation():
    with pytest.raises(ValueError):
        NetConfig(input_size=20, depth=3)  # not divisible by 8
    with pytest.raises(ValueError):
        NetConfig(base_channels=2)
    with pytest.raises(ValueError):
        NetConfig(out_channels=3)


def test_gate_alpha_one_is_passthrough():
    x = rng.random((2, 4, 8, 8))
    g = rng.random((2, 6, 4, 4))
    wx = np.zeros((2, 4))
    wg = np.zeros((2, 6))
    b = np.zeros(2)
    wpsi = np.zeros((1, 2))
    bpsi = np.array([1000.0])  # sigmoid saturates to exactly 1.0 in float64
    out, _ = L.attention_gate(x, g, wx, wg, b, wpsi, bpsi)
    assert np.array_equal(out, x)


def test_gate_alpha_zero_blocks_skip():
    x = rng.random((2, 4, 8, 8))
    g = rng.random((2, 6, 4, 4))
    out, _ = L.attention_gate(
        x, g, np.zeros((2, 4)), np.zeros((2, 6)), np.zeros(2), np.zeros((1, 2)), np.array([-1000.0])
    )
    assert np.array_equal(out, np.zeros_like(x))


def test_gate_coefficients_shapewise():
    x = rng.random((1, 4, 8, 8))
    g_same = rng.random((1, 6, 8, 8))
    out, cache = L.attention_gate(
        x, g_same, rng.random((3, 4)), rng.random((3, 6)), rng.random(3), rng.random((1, 3)), rng.random(1)
    )
    assert out.shape == x.shape
    alpha = cache[5]
    assert alpha.shape == (1, 1, 8, 8)
    assert 0.0 < alpha.min() and alpha.max() < 1.0


def test_gate_rejects_incompatible_sizes():
    x = rng.random((1, 4, 8, 8))
    g = rng.random((1, 6, 3, 3))
    with pytest.raises(ShapeMismatch):
        L.attention_gate(x, g, np.zeros((2, 4)), np.zeros((2, 6)), np.zeros(2), np.zeros((1, 2)), np.zeros(1))


def test_plain_variant_equals_gated_with_alpha_one():
    cfg_gated = NetConfig(input_size=16, base_channels=4, depth=2, attention_gate=True)
    cfg_plain = NetConfig(input_size=16, base_channels=4, depth=2, attention_gate=False)
    gated = AttentionUNet(cfg_gated)
    plain = AttentionUNet(cfg_plain)
    params = gated.init_params(5)
    for name in params:
        if name.endswith("gate.bpsi"):
            params[name] = params[name] + 1000.0
    plain_params = {k: params[k] for k in plain.param_shapes()}
    x = rng.random((2, 1, 16, 16))
    assert np.array_equal(gated.forward(params, x), plain.forward(plain_params, x))


def test_bce_value_for_half_probability():
    p = np.full((1, 1, 2, 2), 0.5)
    t = np.ones((1, 1, 2, 2))
    loss, _ = L.bce_loss(p, t)
    assert loss == pytest.approx(np.log(2), rel=1e-12)


def test_bce_zero_when_correct():
    t = (rng.random((1, 2, 4, 4)) > 0.5).astype(float)
    loss, _ = L.bce_loss(t.copy(), t)
    assert 0.0 <= loss <= 1e-6


def test_bce_nonnegative_and_finite_under_clamp():
    t = (rng.random((1, 1, 4, 4)) > 0.5).astype(float)
    p = 1.0 - t  # maximally wrong
    loss, grad = L.bce_loss(p, t)
    assert np.isfinite(loss) and loss > 0
    assert np.isfinite(grad).all()


def test_bce_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        L.bce_loss(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)))


def test_maxpool_requires_even_dims():
    with pytest.raises(ShapeMismatch):
        L.maxpool2(rng.random((1, 1, 5, 4)))


def test_upsample_then_pool_identity_shapes():
    x = rng.random((2, 3, 4, 4))
    up = L.upsample2(x)
    assert up.shape == (2, 3, 8, 8)
    assert np.array_equal(up[:, :, ::2, ::2], x)


def test_concat_split_roundtrip():
    a = rng.random((2, 3, 4, 4))
    b = rng.random((2, 5, 4, 4))
    cat = L.concat_channels(a, b)
    da, db = L.concat_channels_grad(cat, 3)
    assert np.array_equal(da, a) and np.array_equal(db, b)


def test_conv_rejects_channel_mismatch():
    with pytest.raises(ShapeMismatch):
        L.conv3x3(rng.random((1, 3, 4, 4)), rng.random((2, 4, 3, 3)), np.zeros(2))
    with pytest.raises(ShapeMismatch):
        L.conv1x1(rng.random((1, 3, 4, 4)), rng.random((2, 4)))


def test_init_is_seeded_and_biases_zero():
    cfg = NetConfig(input_size=16, base_channels=4, depth=2)
    model = AttentionUNet(cfg)
    p1, p2 = model.init_params(8), model.init_params(8)
    assert all(np.array_equal(p1[k], p2[k]) for k in p1)
    assert not np.array_equal(p1["enc0.conv1.w"], model.init_params(9)["enc0.conv1.w"])
    for name, v in p1.items():
        if name.endswith((".b", ".bpsi")):
            assert not v.any()
