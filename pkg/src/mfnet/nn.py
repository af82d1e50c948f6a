"""Differentiable layers over NCHW tensors (here: batch, channel, time, frequency)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, make_op
from .errors import ShapeError

LN_EPS = 1e-6


def _pair(v) -> tuple[int, int]:
    if isinstance(v, int):
        return (v, v)
    return (int(v[0]), int(v[1]))


@dataclass
class Conv2dParams:
    weight: Tensor  # (out, in // groups, kh, kw)
    bias: Tensor  # (out,)
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    groups: int = 1

    def __post_init__(self):
        self.stride = _pair(self.stride)
        self.padding = _pair(self.padding)
        out_ch, in_per_group = self.weight.shape[:2]
        if out_ch % self.groups:
            raise ShapeError(f"out_channels {out_ch} not divisible by groups {self.groups}")
        if self.bias.shape != (out_ch,):
            raise ShapeError(f"bias shape {self.bias.shape} != ({out_ch},)")

    @classmethod
    def create(cls, in_channels, out_channels, kernel=1, stride=1, padding=0, groups=1,
               rng=None, dtype=np.float32, zero=False):
        if in_channels % groups or out_channels % groups:
            raise ShapeError(f"channels {in_channels}->{out_channels} not divisible by groups {groups}")
        kh, kw = _pair(kernel)
        shape = (out_channels, in_channels // groups, kh, kw)
        if zero:
            w = np.zeros(shape, dtype=dtype)
        else:
            rng = rng if rng is not None else np.random.default_rng()
            bound = 1.0 / np.sqrt(shape[1] * kh * kw)
            w = rng.uniform(-bound, bound, size=shape).astype(dtype)
        return cls(Tensor(w, requires_grad=True), Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True),
                   stride, padding, groups)

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1] * self.groups

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def kernel(self) -> tuple[int, int]:
        return self.weight.shape[2], self.weight.shape[3]

    @property
    def depthwise(self) -> bool:
        return self.groups == self.in_channels == self.out_channels

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        (kh, kw), (sh, sw), (ph, pw) = self.kernel, self.stride, self.padding
        num_h, num_w = h + 2 * ph - kh, w + 2 * pw - kw
        if num_h < 0 or num_w < 0 or num_h % sh or num_w % sw:
            raise ShapeError(
                f"conv {kh}x{kw}/stride {sh}x{sw}/pad {ph}x{pw} does not tile input {h}x{w} exactly"
            )
        return num_h // sh + 1, num_w // sw + 1

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]

    def macs(self, h_out: float, w_out: float) -> float:
        kh, kw = self.kernel
        return self.in_channels // self.groups * self.out_channels * kh * kw * h_out * w_out


def conv2d(x: Tensor, p: Conv2dParams) -> Tensor:
    """Grouped 2-D cross-correlation with bias."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects (B, C, T, F), got {x.shape}")
    B, C, H, W = x.shape
    if C != p.in_channels:
        raise ShapeError(f"conv2d: input has {C} channels, layer expects {p.in_channels}")
    Ho, Wo = p.output_size(H, W)
    (kh, kw), (sh, sw), (ph, pw), g = p.kernel, p.stride, p.padding, p.groups
    O = p.out_channels
    c, o = C // g, O // g
    xd, wd = x.data, p.weight.data

    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else xd
    depthwise = p.depthwise

    def window(arr, i, j):
        return arr[:, :, i : i + sh * (Ho - 1) + 1 : sh, j : j + sw * (Wo - 1) + 1 : sw]

    if depthwise:
        out = np.zeros((B, O, Ho, Wo), dtype=xd.dtype)
        for i in range(kh):
            for j in range(kw):
                out += window(xp, i, j) * wd[None, :, 0, i, j, None, None]
    else:
        wg = wd.reshape(g, o, c, kh, kw)
        out = np.zeros((B, g, o, Ho * Wo), dtype=xd.dtype)
        for i in range(kh):
            for j in range(kw):
                xs = window(xp, i, j).reshape(B, g, c, Ho * Wo)
                out += np.matmul(wg[None, :, :, :, i, j], xs)
        out = out.reshape(B, O, Ho, Wo)
    out += p.bias.data[None, :, None, None]

    def backward(gy):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(wd)
        if depthwise:
            for i in range(kh):
                for j in range(kw):
                    gw[:, 0, i, j] = np.einsum("bchw,bchw->c", gy, window(xp, i, j))
                    window(gxp, i, j)[...] += gy * wd[None, :, 0, i, j, None, None]
        else:
            gyg = gy.reshape(B, g, o, Ho * Wo)
            gwg = gw.reshape(g, o, c, kh, kw)
            for i in range(kh):
                for j in range(kw):
                    xs = window(xp, i, j).reshape(B, g, c, Ho * Wo)
                    gwg[:, :, :, i, j] = np.matmul(gyg, xs.transpose(0, 1, 3, 2)).sum(axis=0)
                    gxs = np.matmul(wg[None, :, :, :, i, j].transpose(0, 1, 3, 2), gyg)
                    window(gxp, i, j)[...] += gxs.reshape(B, C, Ho, Wo)
        gx = gxp[:, :, ph : ph + H, pw : pw + W] if ph or pw else gxp
        return gx, gw, gy.sum(axis=(0, 2, 3))

    return make_op(out, (x, p.weight, p.bias), backward, "conv2d")


def downsample(x: Tensor, p: Conv2dParams) -> Tensor:
    """Learned 2x2 stride-2 conv; halves T and F."""
    B, C, T, F = x.shape
    if T % 2 or F % 2:
        raise ShapeError(f"downsample needs even T and F, got {T}x{F}")
    if p.kernel != (2, 2) or p.stride != (2, 2) or p.padding != (0, 0):
        raise ShapeError("downsample layer must be a 2x2 stride-2 conv without padding")
    return conv2d(x, p)


def pixel_shuffle(x: Tensor, r: int = 2) -> Tensor:
    """out[b, c, r*t+i, r*f+j] = in[b, c*r*r + r*i + j, t, f]."""
    B, C, T, F = x.shape
    if C % (r * r):
        raise ShapeError(f"pixel_shuffle: {C} channels not divisible by {r * r}")
    Co = C // (r * r)
    out = x.data.reshape(B, Co, r, r, T, F).transpose(0, 1, 4, 2, 5, 3).reshape(B, Co, T * r, F * r)

    def backward(g):
        return (g.reshape(B, Co, T, r, F, r).transpose(0, 1, 3, 5, 2, 4).reshape(B, C, T, F),)

    return make_op(out, (x,), backward, "pixel_shuffle")


def pixel_unshuffle(x: Tensor, r: int = 2) -> Tensor:
    """Inverse rearrangement of :func:`pixel_shuffle`."""
    B, C, T, F = x.shape
    if T % r or F % r:
        raise ShapeError(f"pixel_unshuffle: {T}x{F} not divisible by {r}")
    t, f = T // r, F // r
    out = x.data.reshape(B, C, t, r, f, r).transpose(0, 1, 3, 5, 2, 4).reshape(B, C * r * r, t, f)

    def backward(g):
        return (g.reshape(B, C, r, r, t, f).transpose(0, 1, 4, 2, 5, 3).reshape(B, C, T, F),)

    return make_op(out, (x,), backward, "pixel_unshuffle")


def upsample(x: Tensor, p: Conv2dParams) -> Tensor:
    """Point conv C -> 2C, then pixel-shuffle to C/2 channels at twice the resolution."""
    if p.kernel != (1, 1) or p.out_channels != 2 * p.in_channels:
        raise ShapeError("upsample layer must be a 1x1 conv doubling the channels")
    return pixel_shuffle(conv2d(x, p), 2)


def layer_norm_channel(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalize across channels independently at every (b, t, f)."""
    C = x.shape[1]
    if gain.shape != (C,) or bias.shape != (C,):
        raise ShapeError(f"layer_norm_channel: gain/bias {gain.shape}/{bias.shape} vs {C} channels")
    xd = x.data
    mu = xd.mean(axis=1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gv, bv = gain.data[None, :, None, None], bias.data[None, :, None, None]
    out = xhat * gv + bv

    def backward(g):
        gxhat = g * gv
        gx = inv * (gxhat - gxhat.mean(axis=1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=1, keepdims=True))
        return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return make_op(out, (x, gain, bias), backward, "layer_norm_channel")


def simple_gate(x: Tensor) -> Tensor:
    """Split channels in half and multiply the halves."""
    C = x.shape[1]
    if C % 2:
        raise ShapeError(f"simple_gate needs an even channel count, got {C}")
    h = C // 2
    a, b = x.data[:, :h], x.data[:, h:]

    def backward(g):
        return (np.concatenate([g * b, g * a], axis=1),)

    return make_op(a * b, (x,), backward, "simple_gate")


def global_avg_pool(x: Tensor) -> Tensor:
    B, C, T, F = x.shape
    n = T * F

    def backward(g):
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return make_op(x.data.mean(axis=(2, 3), keepdims=True), (x,), backward, "global_avg_pool")


def channel_scale(x: Tensor, a: Tensor) -> Tensor:
    """Multiply each channel map of ``x`` by the matching entry of ``a`` (B, C, 1, 1)."""
    B, C = x.shape[:2]
    if a.shape != (B, C, 1, 1):
        raise ShapeError(f"channel_scale: scales {a.shape} do not match input {x.shape}")

    def backward(g):
        return g * a.data, (g * x.data).sum(axis=(2, 3), keepdims=True)

    return make_op(x.data * a.data, (x, a), backward, "channel_scale")


def simple_channel_attention(x: Tensor, w: Conv2dParams) -> Tensor:
    if w.kernel != (1, 1) or w.in_channels != x.shape[1] or w.out_channels != x.shape[1]:
        raise ShapeError(f"channel attention needs a 1x1 {x.shape[1]}->{x.shape[1]} conv")
    return channel_scale(x, conv2d(global_avg_pool(x), w))


def pad_time(x: Tensor, amount: int) -> Tensor:
    """Zero-pad ``amount`` frames at the end of the time axis."""
    if amount == 0:
        return x
    T = x.shape[2]
    out = np.pad(x.data, ((0, 0), (0, 0), (0, amount), (0, 0)))
    return make_op(out, (x,), lambda g: (g[:, :, :T],), "pad_time")


def crop_time(x: Tensor, length: int) -> Tensor:
    T = x.shape[2]
    if length == T:
        return x

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, :, :length] = g
        return (gx,)

    return make_op(x.data[:, :, :length], (x,), backward, "crop_time")
