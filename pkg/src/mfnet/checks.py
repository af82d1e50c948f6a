"""Registry of finite-difference gradient checks run by ``mfnet gradcheck`` and the tests.

Each check builds random float64 inputs for a seed, reduces the op output to
a scalar with a fixed random projection, and returns the worst relative
error over every differentiable input.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor, grad_check
from .model import Glfb, HeadMode, MFNet, ModelConfig, glfb_forward
from .objectives import LossWeights, loss_abs, loss_mfnet, loss_polar

N_SEEDS = 10
TOLERANCE = 1e-4

REGISTRY: dict[str, Callable[[int], float]] = {}


def register(name: str):
    def deco(fn):
        REGISTRY[name] = fn
        return fn

    return deco


def check_inputs(fn: Callable[..., Tensor], inputs: list[np.ndarray], seed: int, coords: int | None = None,
                 eps: float = 1e-5) -> float:
    """grad_check ``fn`` with respect to each entry of ``inputs`` in turn."""
    proj = np.random.default_rng(seed + 10_000)
    probe = fn(*[Tensor(a) for a in inputs])
    r = Tensor(proj.standard_normal(probe.shape)) if probe.data.size != 1 else None
    worst = 0.0
    for i, arr in enumerate(inputs):

        def f(t, i=i):
            args = [Tensor(a) for a in inputs]
            args[i] = t
            out = fn(*args)
            return out if r is None else ad.sum_(ad.mul(out, r))

        idx = None
        if coords is not None and arr.size > coords:
            idx = np.random.default_rng(seed + i).choice(arr.size, coords, replace=False)
        worst = max(worst, grad_check(f, arr, eps=eps, coords=idx))
    return worst


def check_parameters(loss_fn: Callable[[], Tensor], params: list[Tensor], seed: int,
                     coords_per_tensor: int = 2, eps: float = 1e-5) -> float:
    """Finite-difference check of d loss / d params, perturbing a few coordinates per tensor in place."""
    for p in params:
        p.grad = None
    loss_fn().backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        analytic = np.zeros(flat.size) if p.grad is None else p.grad.reshape(-1)
        for i in rng.choice(flat.size, min(coords_per_tensor, flat.size), replace=False):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(loss_fn().data)
            flat[i] = orig - eps
            fm = float(loss_fn().data)
            flat[i] = orig
            numeric = (fp - fm) / (2 * eps)
            worst = max(worst, abs(analytic[i] - numeric) / max(1.0, abs(analytic[i])))
    return worst


def _rng(seed):
    return np.random.default_rng(seed)


@register("add")
def _(seed):
    r = _rng(seed)
    return check_inputs(ad.add, [r.standard_normal((3, 4)), r.standard_normal((3, 4))], seed)


@register("sub")
def _(seed):
    r = _rng(seed)
    return check_inputs(ad.sub, [r.standard_normal((3, 4)), r.standard_normal((3, 4))], seed)


@register("mul")
def _(seed):
    r = _rng(seed)
    return check_inputs(ad.mul, [r.standard_normal((3, 4)), r.standard_normal((3, 4))], seed)


@register("scale")
def _(seed):
    r = _rng(seed)
    s = float(r.standard_normal())
    return check_inputs(lambda a: ad.scale(a, s), [r.standard_normal(6)], seed)


@register("sigmoid")
def _(seed):
    return check_inputs(ad.sigmoid, [3 * _rng(seed).standard_normal(8)], seed)


@register("abs")
def _(seed):
    return check_inputs(ad.absolute, [_rng(seed).standard_normal(8)], seed)


@register("square")
def _(seed):
    return check_inputs(ad.square, [_rng(seed).standard_normal(8)], seed)


@register("matmul")
def _(seed):
    r = _rng(seed)
    return check_inputs(ad.matmul, [r.standard_normal((3, 3)), r.standard_normal((3, 3))], seed)


@register("sum")
def _(seed):
    return check_inputs(ad.sum_, [_rng(seed).standard_normal((2, 5))], seed)


@register("mean")
def _(seed):
    return check_inputs(ad.mean, [_rng(seed).standard_normal((2, 5))], seed)


@register("reshape")
def _(seed):
    return check_inputs(lambda a: ad.reshape(a, (5, 2)), [_rng(seed).standard_normal((2, 5))], seed)


def _conv_case(seed, B, C, O, H, W, k, stride, pad, groups):
    r = _rng(seed)
    x = r.standard_normal((B, C, H, W))
    w = r.standard_normal((O, C // groups, k, k))
    b = r.standard_normal(O)
    return check_inputs(lambda xt, wt, bt: nn.conv2d(xt, nn.Conv2dParams(wt, bt, stride, pad, groups)), [x, w, b], seed)


@register("conv2d")
def _(seed):
    return max(
        _conv_case(seed, 2, 3, 2, 5, 4, 3, 1, 1, 1),
        _conv_case(seed, 1, 4, 6, 6, 6, 2, 2, 0, 2),
        _conv_case(seed, 1, 2, 3, 4, 4, 1, 1, 0, 1),
    )


@register("dwconv")
def _(seed):
    return _conv_case(seed, 1, 4, 4, 4, 5, 3, 1, 1, 4)


@register("downsample")
def _(seed):
    r = _rng(seed)
    x = r.standard_normal((1, 2, 4, 4))
    w = r.standard_normal((4, 2, 2, 2))
    b = r.standard_normal(4)
    return check_inputs(lambda xt, wt, bt: nn.downsample(xt, nn.Conv2dParams(wt, bt, 2, 0)), [x, w, b], seed)


@register("pixel_shuffle")
def _(seed):
    return check_inputs(nn.pixel_shuffle, [_rng(seed).standard_normal((1, 8, 2, 3))], seed)


@register("upsample")
def _(seed):
    r = _rng(seed)
    x = r.standard_normal((1, 4, 2, 2))
    w = r.standard_normal((8, 4, 1, 1))
    b = r.standard_normal(8)
    return check_inputs(lambda xt, wt, bt: nn.upsample(xt, nn.Conv2dParams(wt, bt)), [x, w, b], seed)


@register("layer_norm_channel")
def _(seed):
    r = _rng(seed)
    return check_inputs(nn.layer_norm_channel,
                        [r.standard_normal((1, 4, 2, 2)), 1 + r.standard_normal(4), r.standard_normal(4)], seed)


@register("simple_gate")
def _(seed):
    return check_inputs(nn.simple_gate, [_rng(seed).standard_normal((1, 4, 2, 3))], seed)


@register("global_avg_pool")
def _(seed):
    return check_inputs(nn.global_avg_pool, [_rng(seed).standard_normal((2, 3, 2, 4))], seed)


@register("simple_channel_attention")
def _(seed):
    r = _rng(seed)
    x = r.standard_normal((1, 2, 2, 2))
    w = r.standard_normal((2, 2, 1, 1))
    b = r.standard_normal(2)
    return check_inputs(lambda xt, wt, bt: nn.simple_channel_attention(xt, nn.Conv2dParams(wt, bt)), [x, w, b], seed)


@register("pad_crop_time")
def _(seed):
    x = _rng(seed).standard_normal((1, 2, 3, 4))
    return check_inputs(lambda t: nn.crop_time(nn.pad_time(t, 5), 2), [x], seed)


def _spec_pair(seed):
    r = _rng(seed)
    return r.standard_normal((2, 4)), r.standard_normal((2, 4))


@register("loss_abs")
def _(seed):
    return check_inputs(loss_abs, list(_spec_pair(seed)), seed)


@register("loss_polar")
def _(seed):
    return check_inputs(loss_polar, list(_spec_pair(seed)), seed)


@register("loss_mfnet")
def _(seed):
    g = float(_rng(seed + 1).uniform())
    return check_inputs(lambda t, p: loss_mfnet(t, p, LossWeights(g)), list(_spec_pair(seed)), seed)


# Two-channel layer norm is close to a sign function where channels nearly
# agree; the deep-network checks use a smaller step to keep the central
# difference truncation error below the tolerance.
DEEP_EPS = 1e-6

def _perturb(named, rng, scale=0.1):
    """Move zero/one-initialized tensors (biases, norms, output projection) off their init values."""
    for name, p in named:
        if name.endswith("gain"):
            p.data = 1.0 + scale * rng.standard_normal(p.shape)
        elif name.endswith("bias") or name.startswith("ending"):
            p.data = scale * rng.standard_normal(p.shape)


@register("glfb")
def _(seed):
    r = _rng(seed)
    blk = Glfb.create(2, r, dtype=np.float64)
    named = list(blk.named_parameters("b"))
    _perturb(named, r)
    params = [t for _, t in named]
    x = r.standard_normal((1, 2, 2, 4))
    err = check_inputs(lambda t: glfb_forward(t, blk), [x], seed, eps=DEEP_EPS)
    proj = Tensor(r.standard_normal(x.shape))
    return max(err, check_parameters(lambda: ad.sum_(ad.mul(glfb_forward(Tensor(x), blk), proj)), params, seed, 4, DEEP_EPS))


MINI_GRAD_CONFIG = dict(base_channels=2, encoder_depths=(1, 1, 1, 1), bottleneck_depth=1, decoder_depths=(1, 1, 1, 1))


@register("mfnet_mini")
def _(seed):
    r = _rng(seed)
    head = list(HeadMode)[seed % 3]
    model = MFNet(ModelConfig(head=head, **MINI_GRAD_CONFIG), seed=seed, dtype=np.float64)
    _perturb(list(model.named_parameters()), r)
    x = r.standard_normal((1, 1, 16, 32))
    target = r.standard_normal(x.shape)
    err = check_inputs(lambda t: loss_mfnet(Tensor(target), model(t)), [x], seed, coords=24, eps=DEEP_EPS)
    loss = lambda: loss_mfnet(Tensor(target), model(Tensor(x)))  # noqa: E731
    return max(err, check_parameters(loss, model.parameters(), seed, 1, DEEP_EPS))


def run_checks(names=None, seeds: int = N_SEEDS) -> dict[str, float]:
    names = list(REGISTRY) if names is None else names
    return {name: max(REGISTRY[name](s) for s in range(seeds)) for name in names}
