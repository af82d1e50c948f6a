"""The mask-free UNet over STDCT spectrograms: GLFB stacks, heads, accounting, checkpoints."""
from __future__ import annotations

import enum
import json
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dsp import DEFAULT_WINDOW_LEN, Spectrogram
from .errors import (
    CheckpointFormatError,
    CheckpointShapeError,
    ConfigMismatchError,
    CorruptCheckpointError,
    InvalidArgumentError,
    ShapeError,
)
from .nn import (
    Conv2dParams,
    conv2d,
    crop_time,
    downsample,
    layer_norm_channel,
    pad_time,
    simple_channel_attention,
    simple_gate,
    upsample,
)

N_LEVELS = 4
STRIDE = 2**N_LEVELS
REFERENCE_MACS_PER_SECOND = 6.09e9
MACS_BAND = (3e9, 1.2e10)


class HeadMode(str, enum.Enum):
    MASKING = "masking"
    MAP_SPEECH = "map_speech"
    MAP_REVERSE_NOISE = "map_reverse_noise"


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = 16
    encoder_depths: tuple[int, ...] = (1, 1, 8, 4)
    bottleneck_depth: int = 6
    decoder_depths: tuple[int, ...] = (1, 1, 1, 1)
    head: HeadMode = HeadMode.MAP_REVERSE_NOISE

    def __post_init__(self):
        object.__setattr__(self, "encoder_depths", tuple(int(d) for d in self.encoder_depths))
        object.__setattr__(self, "decoder_depths", tuple(int(d) for d in self.decoder_depths))
        object.__setattr__(self, "head", HeadMode(self.head))
        if self.base_channels < 1:
            raise InvalidArgumentError(f"base_channels must be >= 1, got {self.base_channels}")
        if len(self.encoder_depths) != N_LEVELS or len(self.decoder_depths) != N_LEVELS:
            raise InvalidArgumentError(f"encoder/decoder depths need {N_LEVELS} entries each")
        if min(self.encoder_depths + self.decoder_depths + (self.bottleneck_depth,)) < 1:
            raise InvalidArgumentError("all block depths must be >= 1")

    @property
    def channel_plan(self) -> list[int]:
        n = self.base_channels
        down = [n * 2**i for i in range(N_LEVELS + 1)]
        return down + down[-2::-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_depths"] = list(self.encoder_depths)
        d["decoder_depths"] = list(self.decoder_depths)
        d["head"] = self.head.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise InvalidArgumentError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Glfb:
    norm1_gain: Tensor
    norm1_bias: Tensor
    pc1: Conv2dParams
    dwconv: Conv2dParams
    sca: Conv2dParams
    pc2: Conv2dParams
    norm2_gain: Tensor
    norm2_bias: Tensor
    pc3: Conv2dParams
    pc4: Conv2dParams

    @classmethod
    def create(cls, channels: int, rng, dtype=np.float32) -> "Glfb":
        c = channels

        def conv(i, o, k=1, pad=0, groups=1):
            return Conv2dParams.create(i, o, k, 1, pad, groups, rng=rng, dtype=dtype)

        return cls(
            norm1_gain=Tensor(np.ones(c, dtype=dtype), requires_grad=True),
            norm1_bias=Tensor(np.zeros(c, dtype=dtype), requires_grad=True),
            pc1=conv(c, 2 * c),
            dwconv=conv(2 * c, 2 * c, 3, 1, groups=2 * c),
            sca=conv(c, c),
            pc2=conv(c, c),
            norm2_gain=Tensor(np.ones(c, dtype=dtype), requires_grad=True),
            norm2_bias=Tensor(np.zeros(c, dtype=dtype), requires_grad=True),
            pc3=conv(c, 2 * c),
            pc4=conv(c, c),
        )

    @property
    def channels(self) -> int:
        return self.norm1_gain.shape[0]

    def named_parameters(self, prefix: str):
        for name in ("norm1_gain", "norm1_bias", "norm2_gain", "norm2_bias"):
            yield f"{prefix}.{name}", getattr(self, name)
        for name in ("pc1", "dwconv", "sca", "pc2", "pc3", "pc4"):
            conv_p = getattr(self, name)
            yield f"{prefix}.{name}.weight", conv_p.weight
            yield f"{prefix}.{name}.bias", conv_p.bias

    def convs(self):
        return [self.pc1, self.dwconv, self.sca, self.pc2, self.pc3, self.pc4]


def glfb_forward(x: Tensor, g: Glfb) -> Tensor:
    if x.ndim != 4 or x.shape[1] != g.channels:
        raise ShapeError(f"GLFB with {g.channels} channels got input {x.shape}")
    h = layer_norm_channel(x, g.norm1_gain, g.norm1_bias)
    h = simple_gate(conv2d(conv2d(h, g.pc1), g.dwconv))
    h = conv2d(simple_channel_attention(h, g.sca), g.pc2)
    y = x + h
    h = simple_gate(conv2d(layer_norm_channel(y, g.norm2_gain, g.norm2_bias), g.pc3))
    return y + conv2d(h, g.pc4)


def apply_head(raw: Tensor, noisy: Tensor, head: HeadMode) -> Tensor:
    if head is HeadMode.MASKING:
        return ad.sigmoid(raw) * noisy
    if head is HeadMode.MAP_SPEECH:
        return raw
    return raw + noisy


class MFNet:
    def __init__(self, cfg: ModelConfig | None = None, seed: int = 0, dtype=np.float32):
        self.cfg = cfg or ModelConfig()
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        n = self.cfg.base_channels

        def conv(i, o, k, s=1, pad=0, zero=False):
            return Conv2dParams.create(i, o, k, s, pad, rng=rng, dtype=self.dtype, zero=zero)

        self.intro = conv(1, n, 3, pad=1)
        self.encoders, self.downs = [], []
        for level, depth in enumerate(self.cfg.encoder_depths):
            c = n * 2**level
            self.encoders.append([Glfb.create(c, rng, self.dtype) for _ in range(depth)])
            self.downs.append(conv(c, 2 * c, 2, s=2))
        c = n * 2**N_LEVELS
        self.middle = [Glfb.create(c, rng, self.dtype) for _ in range(self.cfg.bottleneck_depth)]
        self.ups, self.decoders = [], []
        for depth in self.cfg.decoder_depths:
            self.ups.append(conv(c, 2 * c, 1))
            c //= 2
            self.decoders.append([Glfb.create(c, rng, self.dtype) for _ in range(depth)])
        self.ending = conv(n, 1, 3, pad=1, zero=True)

    # parameter bookkeeping
    def named_parameters(self):
        def conv_params(prefix, p):
            yield f"{prefix}.weight", p.weight
            yield f"{prefix}.bias", p.bias

        yield from conv_params("intro", self.intro)
        for level, (blocks, down) in enumerate(zip(self.encoders, self.downs)):
            for b, blk in enumerate(blocks):
                yield from blk.named_parameters(f"encoders.{level}.{b}")
            yield from conv_params(f"downs.{level}", down)
        for b, blk in enumerate(self.middle):
            yield from blk.named_parameters(f"middle.{b}")
        for level, (up, blocks) in enumerate(zip(self.ups, self.decoders)):
            yield from conv_params(f"ups.{level}", up)
            for b, blk in enumerate(blocks):
                yield from blk.named_parameters(f"decoders.{level}.{b}")
        yield from conv_params("ending", self.ending)

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise CheckpointShapeError(f"parameter names differ: missing {sorted(missing)[:3]}, extra {sorted(extra)[:3]}")
        for name, t in params.items():
            arr = np.asarray(state[name])
            if arr.shape != t.shape:
                raise CheckpointShapeError(f"{name}: checkpoint shape {arr.shape} != model shape {t.shape}")
            t.data = arr.astype(self.dtype, copy=True)

    def zero_grad(self):
        for t in self.parameters():
            t.grad = None

    def blocks(self):
        for blocks in self.encoders:
            yield from blocks
        yield from self.middle
        for blocks in self.decoders:
            yield from blocks

    def zero_branches(self):
        """Zero every GLFB conv so each block is the identity."""
        for blk in self.blocks():
            for p in blk.convs():
                p.weight.data[...] = 0
                p.bias.data[...] = 0

    # forward
    def forward(self, x: Tensor, trace: list | None = None) -> Tensor:
        """Map a (B, 1, T, F) noisy spectrum to the head output of the same shape.

        T is zero-padded to a multiple of 16 and cropped back; F must already
        be a multiple of 16.  The body runs in the model dtype; the head
        combines its output with ``x`` at the precision ``x`` arrived in.
        """
        if x.ndim != 4 or x.shape[1] != 1:
            raise ShapeError(f"expected input (B, 1, T, F), got {x.shape}")
        B, _, T, F = x.shape
        if T < 1 or F % STRIDE:
            raise ShapeError(f"need T >= 1 and F divisible by {STRIDE}, got T={T}, F={F}")
        noisy = x
        if x.data.dtype != self.dtype:
            x = Tensor(x.data.astype(self.dtype))
        h = conv2d(pad_time(x, (-T) % STRIDE), self.intro)
        skips = []
        for blocks, down in zip(self.encoders, self.downs):
            for blk in blocks:
                h = glfb_forward(h, blk)
            if trace is not None:
                trace.append(h.shape[1])
            skips.append(h)
            h = downsample(h, down)
        for blk in self.middle:
            h = glfb_forward(h, blk)
        if trace is not None:
            trace.append(h.shape[1])
        for up, blocks in zip(self.ups, self.decoders):
            h = upsample(h, up)
            skip = skips.pop()
            if h.shape != skip.shape:
                raise ShapeError(f"skip shape {skip.shape} != upsampled {h.shape}")
            h = h + skip
            for blk in blocks:
                h = glfb_forward(h, blk)
            if trace is not None:
                trace.append(h.shape[1])
        raw = crop_time(conv2d(h, self.ending), T)
        return apply_head(raw, noisy, self.cfg.head)

    __call__ = forward

    def enhance_spectrogram(self, noisy: Spectrogram) -> Spectrogram:
        """Single-utterance inference; network runs in the model dtype."""
        return mfnet_forward(noisy, self)


def mfnet_forward(noisy: Spectrogram, model: MFNet) -> Spectrogram:
    T, F = noisy.shape
    if F != DEFAULT_WINDOW_LEN:
        raise ShapeError(f"model expects {DEFAULT_WINDOW_LEN} bins, got {F}")
    if T < 1:
        raise ShapeError("spectrogram has no frames")
    out = model.forward(Tensor(noisy.data[None, None]))
    return noisy.with_data(out.data[0, 0].astype(np.float64))


# accounting
def count_params_and_macs(cfg: ModelConfig, frames_per_second: float = 100.0,
                          bins: int = DEFAULT_WINDOW_LEN) -> tuple[int, float]:
    """Parameter count and conv multiply-accumulates per second of audio.

    Element-wise ops, norms and pooling are not counted.  Spatial sizes are
    taken as frames_per_second x bins halved per level, without time padding.
    """
    model = MFNet(cfg, dtype=np.float32)
    params = sum(t.data.size for t in model.parameters())
    T, F = float(frames_per_second), float(bins)

    def block_macs(blk: Glfb, t, f):
        total = 0.0
        for p in blk.convs():
            total += p.macs(1, 1) if p is blk.sca else p.macs(t, f)
        return total

    macs = model.intro.macs(T, F)
    t, f = T, F
    for blocks, down in zip(model.encoders, model.downs):
        macs += sum(block_macs(b, t, f) for b in blocks)
        t, f = t / 2, f / 2
        macs += down.macs(t, f)
    macs += sum(block_macs(b, t, f) for b in model.middle)
    for up, blocks in zip(model.ups, model.decoders):
        macs += up.macs(t, f)
        t, f = t * 2, f * 2
        macs += sum(block_macs(b, t, f) for b in blocks)
    macs += model.ending.macs(T, F)
    return params, macs


def model_info(cfg: ModelConfig) -> dict:
    params, macs = count_params_and_macs(cfg)
    lo, hi = MACS_BAND
    return {
        "params": params,
        "macs_per_second": macs,
        "channel_plan": cfg.channel_plan,
        "depths": {"enc": list(cfg.encoder_depths), "mid": cfg.bottleneck_depth, "dec": list(cfg.decoder_depths)},
        "head": cfg.head.value,
        "reference_macs_per_second": REFERENCE_MACS_PER_SECOND,
        "macs_band": [lo, hi],
        "macs_in_band": bool(lo <= macs <= hi),
    }


# checkpoints
MAGIC = b"MFN1"
FORMAT_VERSION = 1


def save_checkpoint(model: MFNet, path, extra: dict | None = None) -> None:
    """Write weights as little-endian f32 with a JSON config header.

    Layout: magic, u32 version, u32 json length, json, u32 tensor count,
    per tensor (u32 name length, name, u32 rank, u32 dims...), then payloads.
    """
    cfg_blob = json.dumps({"model": model.cfg.to_dict(), **(extra or {})}, sort_keys=True).encode()
    named = list(model.named_parameters())
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(cfg_blob)), cfg_blob, struct.pack("<I", len(named))]
    for name, t in named:
        raw = name.encode()
        parts.append(struct.pack("<I", len(raw)) + raw + struct.pack("<I", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape))
    for _, t in named:
        parts.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptCheckpointError(f"checkpoint truncated at byte {self.pos} (wanted {n} more)")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse a checkpoint into (header dict, name -> float32 array)."""
    buf = Path(path).read_bytes()
    r = _Reader(buf)
    if len(buf) < 4 or r.take(4) != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic, not an MFN1 checkpoint")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(r.take(r.u32()).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable config blob") from exc
    manifest = []
    for _ in range(r.u32()):
        try:
            name = r.take(r.u32()).decode()
        except UnicodeDecodeError as exc:
            raise CorruptCheckpointError(f"{path}: bad tensor name") from exc
        rank = r.u32()
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
        manifest.append((name, dims))
    state = {}
    for name, dims in manifest:
        count = int(np.prod(dims, dtype=np.int64))
        state[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(buf):
        raise CorruptCheckpointError(f"{path}: {len(buf) - r.pos} trailing bytes")
    return header, state


def load_checkpoint(path, expected: ModelConfig | None = None, dtype=np.float32) -> MFNet:
    header, state = read_checkpoint(path)
    try:
        cfg = ModelConfig.from_dict(header["model"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpointError(f"{path}: invalid model config in header") from exc
    if expected is not None and expected != cfg:
        raise ConfigMismatchError(f"{path}: checkpoint config {cfg.to_dict()} != expected {expected.to_dict()}")
    model = MFNet(cfg, dtype=dtype)
    model.load_state_dict(state)
    return model
