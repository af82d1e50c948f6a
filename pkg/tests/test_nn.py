import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfnet import autodiff as ad
from mfnet import nn
from mfnet.autodiff import Tensor
from mfnet.checks import REGISTRY
from mfnet.errors import ShapeError


def params(w, b=None, stride=1, padding=0, groups=1):
    w = np.asarray(w, dtype=np.float64)
    b = np.zeros(w.shape[0]) if b is None else np.asarray(b, dtype=np.float64)
    return nn.Conv2dParams(Tensor(w), Tensor(b), stride, padding, groups)


def naive_conv2d(x, w, b, stride, pad, groups):
    """Loop-nest cross-correlation used as an independent reference."""
    B, C, H, W = x.shape
    O, cg, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    Ho, Wo = (H + 2 * pad - kh) // stride + 1, (W + 2 * pad - kw) // stride + 1
    og = O // groups
    out = np.zeros((B, O, Ho, Wo))
    for bb in range(B):
        for o in range(O):
            g = o // og
            for i in range(Ho):
                for j in range(Wo):
                    patch = xp[bb, g * cg : (g + 1) * cg, i * stride : i * stride + kh, j * stride : j * stride + kw]
                    out[bb, o, i, j] = np.sum(patch * w[o]) + b[o]
    return out


def test_conv_sum_kernel():
    out = nn.conv2d(Tensor(np.ones((1, 1, 3, 3))), params(np.ones((1, 1, 3, 3))))
    assert out.shape == (1, 1, 1, 1) and out.data.item() == 9


def test_conv_identity_1x1_is_exact():
    x = np.random.default_rng(0).standard_normal((2, 3, 4, 5))
    out = nn.conv2d(Tensor(x), params(np.eye(3)[:, :, None, None]))
    np.testing.assert_array_equal(out.data, x)


@pytest.mark.parametrize(
    "C,O,k,stride,pad,groups",
    [(3, 2, 3, 1, 1, 1), (4, 6, 2, 2, 0, 2), (4, 4, 3, 1, 1, 4), (2, 5, 1, 1, 0, 1), (2, 2, 4, 2, 1, 1)],
)
def test_conv_matches_loop_reference(C, O, k, stride, pad, groups):
    rng = np.random.default_rng(C * 10 + O)
    x = rng.standard_normal((2, C, 6, 8))
    w = rng.standard_normal((O, C // groups, k, k))
    b = rng.standard_normal(O)
    out = nn.conv2d(Tensor(x), params(w, b, stride, pad, groups))
    np.testing.assert_allclose(out.data, naive_conv2d(x, w, b, stride, pad, groups), atol=1e-12)


def test_conv_errors():
    with pytest.raises(ShapeError):
        nn.conv2d(Tensor(np.ones((1, 2, 4, 4))), params(np.ones((1, 3, 1, 1))))
    with pytest.raises(ShapeError):
        nn.conv2d(Tensor(np.ones((1, 1, 5, 5))), params(np.ones((1, 1, 2, 2)), stride=2))
    with pytest.raises(ShapeError):
        nn.Conv2dParams.create(3, 4, groups=2)


def test_downsample_shapes_and_mean():
    x = Tensor(np.zeros((1, 16, 64, 320), dtype=np.float32))
    p = nn.Conv2dParams.create(16, 32, 2, 2, 0, rng=np.random.default_rng(0))
    assert nn.downsample(x, p).shape == (1, 32, 32, 160)
    vals = np.array([[1.0, 2.0], [3.0, 5.0]])[None, None]
    out = nn.downsample(Tensor(vals), params(np.full((1, 1, 2, 2), 0.25), stride=2))
    assert out.data.item() == pytest.approx(2.75)
    with pytest.raises(ShapeError):
        nn.downsample(Tensor(np.zeros((1, 1, 3, 4))), params(np.ones((1, 1, 2, 2)), stride=2))


def test_pixel_shuffle_index_map():
    x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1, 1)
    out = nn.pixel_shuffle(Tensor(x)).data
    np.testing.assert_array_equal(out, [[[[1, 2], [3, 4]]]])


def test_pixel_shuffle_general_rule():
    x = np.random.default_rng(1).standard_normal((2, 8, 3, 5))
    out = nn.pixel_shuffle(Tensor(x)).data
    for c in range(2):
        for i in range(2):
            for j in range(2):
                np.testing.assert_array_equal(out[:, c, i::2, j::2], x[:, c * 4 + 2 * i + j])


def test_pixel_shuffle_bijection_and_inverse():
    x = np.random.default_rng(2).standard_normal((1, 8, 4, 6))
    out = nn.pixel_shuffle(Tensor(x))
    np.testing.assert_array_equal(np.sort(out.data.ravel()), np.sort(x.ravel()))
    np.testing.assert_array_equal(nn.pixel_unshuffle(out).data, x)
    with pytest.raises(ShapeError):
        nn.pixel_shuffle(Tensor(np.zeros((1, 6, 2, 2))))


def test_pixel_shuffle_gradient_is_inverse_permutation():
    x = Tensor(np.zeros((1, 8, 2, 3)), requires_grad=True)
    up = np.random.default_rng(3).standard_normal((1, 2, 4, 6))
    nn.pixel_shuffle(x).backward(up)
    np.testing.assert_array_equal(x.grad, nn.pixel_unshuffle(Tensor(up)).data)


def test_upsample_channel_algebra():
    p = nn.Conv2dParams.create(8, 16, 1, rng=np.random.default_rng(0))
    assert nn.upsample(Tensor(np.zeros((1, 8, 4, 20))), p).shape == (1, 4, 8, 40)


@settings(max_examples=20, deadline=None)
@given(c_exp=st.integers(0, 3), t_exp=st.integers(1, 4), f_exp=st.integers(1, 4))
def test_sampling_channel_algebra(c_exp, t_exp, f_exp):
    C, T, F = 2**c_exp, 2**t_exp, 2**f_exp
    rng = np.random.default_rng(0)
    x = Tensor(np.zeros((1, C, T, F)))
    down = nn.downsample(x, nn.Conv2dParams.create(C, 2 * C, 2, 2, 0, rng=rng))
    assert down.shape == (1, 2 * C, T // 2, F // 2)
    up = nn.upsample(down, nn.Conv2dParams.create(2 * C, 4 * C, 1, rng=rng))
    assert up.shape == (1, C, T, F)


def test_layer_norm_constant_input():
    out = nn.layer_norm_channel(Tensor(np.full((1, 4, 2, 2), 3.0)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
    np.testing.assert_array_equal(out.data, 0)


def test_layer_norm_statistics():
    x = np.random.default_rng(4).standard_normal((2, 8, 3, 5)) * 4 + 1
    out = nn.layer_norm_channel(Tensor(x), Tensor(np.ones(8)), Tensor(np.zeros(8))).data
    assert np.max(np.abs(out.mean(axis=1))) < 1e-6
    assert np.max(np.abs(out.var(axis=1) - 1)) < 1e-3


def test_simple_gate_cases():
    x = np.array([2.0, 3.0]).reshape(1, 2, 1, 1)
    assert nn.simple_gate(Tensor(x)).data.item() == 6
    y = np.random.default_rng(5).standard_normal((1, 6, 2, 2))
    y[:, 3:] = 0
    assert not np.any(nn.simple_gate(Tensor(y)).data)
    with pytest.raises(ShapeError):
        nn.simple_gate(Tensor(np.zeros((1, 3, 1, 1))))


def test_simple_gate_with_ones_is_identity():
    x = np.random.default_rng(6).standard_normal((2, 3, 4, 4))
    out = nn.simple_gate(Tensor(np.concatenate([x, np.ones_like(x)], axis=1)))
    np.testing.assert_array_equal(out.data, x)


def test_simple_gate_adjoints():
    x = Tensor(np.array([2.0, 3.0]).reshape(1, 2, 1, 1), requires_grad=True)
    ad.sum_(nn.simple_gate(x)).backward()
    np.testing.assert_array_equal(x.grad.ravel(), [3.0, 2.0])


def test_channel_attention_identity_weights():
    x = np.ones((1, 3, 2, 2))
    out = nn.simple_channel_attention(Tensor(x), params(np.eye(3)[:, :, None, None]))
    np.testing.assert_array_equal(out.data, x)


def test_pooling_is_linear():
    x = np.random.default_rng(7).standard_normal((1, 3, 4, 4))
    s1 = nn.global_avg_pool(Tensor(x)).data
    s2 = nn.global_avg_pool(Tensor(2.5 * x)).data
    np.testing.assert_allclose(s2, 2.5 * s1, rtol=1e-14)


def test_channel_attention_shape_error():
    with pytest.raises(ShapeError):
        nn.simple_channel_attention(Tensor(np.ones((1, 3, 2, 2))), params(np.eye(2)[:, :, None, None]))


def test_pad_crop_round_trip():
    x = np.random.default_rng(8).standard_normal((1, 2, 5, 4))
    out = nn.crop_time(nn.pad_time(Tensor(x), 11), 5)
    np.testing.assert_array_equal(out.data, x)


@pytest.mark.parametrize(
    "name",
    ["conv2d", "dwconv", "downsample", "pixel_shuffle", "upsample", "layer_norm_channel",
     "simple_gate", "global_avg_pool", "simple_channel_attention", "pad_crop_time"],
)
def test_layer_gradients(name):
    assert max(REGISTRY[name](seed) for seed in range(10)) < 1e-5
