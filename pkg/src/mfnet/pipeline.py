"""Mixture synthesis, AdamW training with warmup-cosine schedule, and inference."""
from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dsp import DEFAULT_SAMPLE_RATE, FrameSpec, Waveform, istdct, stdct
from .errors import InvalidArgumentError, NumericAbort, ShapeError, UnsupportedFormatError
from .model import HeadMode, MFNet, ModelConfig, load_checkpoint, mfnet_forward, save_checkpoint
from .objectives import LossWeights, loss_mfnet

log = logging.getLogger(__name__)

PEAK_LIMIT = 0.99


@dataclass(frozen=True)
class MixSpec:
    clean_id: str
    noise_id: str
    snr_db: float
    seed: int = 0


@dataclass(frozen=True)
class TrainConfig:
    lr_max: float = 0.0034
    warmup_epochs: int = 5
    total_epochs: int = 100
    batch_size: int = 1
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    gamma: float = 0.5
    seed: int = 0
    segment_seconds: float = 2.0
    checkpoint_every: int = 0  # epochs; 0 writes only the final checkpoint

    def __post_init__(self):
        if self.lr_max < 0:
            raise InvalidArgumentError(f"lr_max must be >= 0, got {self.lr_max}")
        if not 0 <= self.warmup_epochs <= self.total_epochs:
            raise InvalidArgumentError("need 0 <= warmup_epochs <= total_epochs")
        if self.total_epochs < 1 or self.batch_size < 1:
            raise InvalidArgumentError("total_epochs and batch_size must be >= 1")
        if self.segment_seconds <= 0:
            raise InvalidArgumentError("segment_seconds must be positive")
        LossWeights(self.gamma)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidArgumentError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


# data
def _energy(x: np.ndarray) -> float:
    return float(np.dot(x, x))


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float, seed: int = 0) -> tuple[Waveform, Waveform]:
    """Add noise to clean speech at ``snr_db``; returns (noisy, clean_aligned).

    The noise is looped or cropped to the clean length from a seed-derived
    offset.  If the mixture peaks above 0.99 both outputs are scaled by the
    same factor, which leaves the SNR unchanged.
    """
    if clean.sample_rate != noise.sample_rate:
        raise InvalidArgumentError(f"sample rates differ: {clean.sample_rate} vs {noise.sample_rate}")
    if not math.isfinite(snr_db):
        raise InvalidArgumentError("snr_db must be finite")
    s = clean.samples
    if _energy(s) == 0.0:
        raise InvalidArgumentError("clean signal is silent")
    if _energy(noise.samples) == 0.0:
        raise InvalidArgumentError("noise signal is silent")
    rng = np.random.default_rng(seed)
    offset = int(rng.integers(0, len(noise)))
    n = noise.samples[(offset + np.arange(len(s))) % len(noise)]
    if _energy(n) == 0.0:
        raise InvalidArgumentError("noise segment is silent")
    alpha = math.sqrt(_energy(s) / (_energy(n) * 10.0 ** (snr_db / 10.0)))
    noisy = s + alpha * n
    peak = float(np.max(np.abs(noisy)))
    if peak > PEAK_LIMIT:
        g = PEAK_LIMIT / peak
        noisy, s = noisy * g, s * g
    return Waveform(noisy, clean.sample_rate), Waveform(s, clean.sample_rate)


def harmonic_signal(seconds: float = 1.0, sample_rate: int = DEFAULT_SAMPLE_RATE, f0: float = 200.0,
                    n_harmonics: int = 12, seed: int = 0) -> Waveform:
    """Speech-like test tone: a vibrato harmonic series under a syllabic envelope."""
    rng = np.random.default_rng(seed)
    t = np.arange(int(round(seconds * sample_rate))) / sample_rate
    pitch = f0 * (1.0 + 0.03 * np.sin(2 * np.pi * 3.0 * t))
    phase = 2 * np.pi * np.cumsum(pitch) / sample_rate
    x = np.zeros_like(t)
    for k in range(1, n_harmonics + 1):
        x += np.sin(k * phase + rng.uniform(0, 2 * np.pi)) / k
    envelope = 0.55 + 0.45 * np.sin(2 * np.pi * 4.0 * t - np.pi / 2)
    x *= envelope
    return Waveform(0.5 * x / np.max(np.abs(x)), sample_rate)


def toy_pair(seconds: float = 1.0, snr_db: float = 0.0, seed: int = 0) -> tuple[Waveform, Waveform]:
    """(noisy, clean) pair: harmonic signal plus white noise."""
    clean = harmonic_signal(seconds, seed=seed)
    noise = Waveform(np.random.default_rng(seed + 1).standard_normal(len(clean)), clean.sample_rate)
    return mix_at_snr(clean, noise, snr_db, seed=seed)


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("MFNET_THREADS", "1")))
    except ValueError:
        return 1


def materialize(mixes: Sequence[MixSpec], load: Callable[[str], Waveform]) -> list[tuple[Waveform, Waveform]]:
    """Build (noisy, clean) pairs; order follows ``mixes`` whatever the thread count."""

    def one(m: MixSpec):
        return mix_at_snr(load(m.clean_id), load(m.noise_id), m.snr_db, m.seed)

    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        return list(pool.map(one, mixes))


# optimization
def lr_schedule(step: int, steps_per_epoch: int, cfg: TrainConfig) -> float:
    """Linear warmup to lr_max, then cosine decay to lr_max / 100 at the last step."""
    if step < 0:
        raise InvalidArgumentError("step must be >= 0")
    warm = cfg.warmup_epochs * steps_per_epoch
    total = cfg.total_epochs * steps_per_epoch
    if step < warm:
        return cfg.lr_max * step / warm
    lr_min = cfg.lr_max / 100.0
    span = total - 1 - warm
    if span <= 0:
        return cfg.lr_max
    t = min(step - warm, span)
    return lr_min + 0.5 * (cfg.lr_max - lr_min) * (1.0 + math.cos(math.pi * t / span))


def adamw_step(w: np.ndarray, g: np.ndarray, state: dict, lr: float, cfg: TrainConfig) -> None:
    """In-place AdamW update of ``w``; ``state`` holds m, v and the step count t."""
    if w.shape != g.shape:
        raise ShapeError(f"adamw: weight shape {w.shape} != grad shape {g.shape}")
    if "m" not in state:
        state["m"] = np.zeros_like(w)
        state["v"] = np.zeros_like(w)
        state["t"] = 0
    elif state["m"].shape != w.shape:
        raise ShapeError(f"adamw: state shape {state['m'].shape} != weight shape {w.shape}")
    state["t"] += 1
    t = state["t"]
    m, v = state["m"], state["v"]
    m *= cfg.beta1
    m += (1.0 - cfg.beta1) * g
    v *= cfg.beta2
    v += (1.0 - cfg.beta2) * g * g
    m_hat = m / (1.0 - cfg.beta1**t)
    v_hat = v / (1.0 - cfg.beta2**t)
    if cfg.weight_decay:
        w *= 1.0 - lr * cfg.weight_decay
    w -= (lr * m_hat / (np.sqrt(v_hat) + cfg.eps)).astype(w.dtype, copy=False)


class AdamW:
    def __init__(self, params: Sequence[Tensor], cfg: TrainConfig):
        self.params = list(params)
        self.cfg = cfg
        self.states = [dict() for _ in self.params]

    def step(self, lr: float):
        for p, st in zip(self.params, self.states):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            adamw_step(p.data, g, st, lr, self.cfg)


# training
@dataclass
class TrainResult:
    model: MFNet
    curve: list[dict] = field(default_factory=list)
    checkpoint: Path | None = None

    @property
    def initial_loss(self) -> float:
        return self.curve[0]["loss"]

    @property
    def final_loss(self) -> float:
        return self.curve[-1]["loss"]


def _spectra(wave: Waveform, spec: FrameSpec) -> np.ndarray:
    return stdct(wave, spec).data


def _crop(pairs, length, rng):
    out = []
    for noisy, clean in pairs:
        start = int(rng.integers(0, len(noisy) - length + 1)) if len(noisy) > length else 0
        out.append((noisy.samples[start : start + length], clean.samples[start : start + length]))
    return out


def train_step(model: MFNet, optimizer: AdamW, noisy: np.ndarray, clean: np.ndarray,
               lr: float, weights: LossWeights) -> float:
    """One forward/backward/update on a (B, T, F) batch of spectra; returns the pre-update loss."""
    x = Tensor(noisy[:, None].astype(model.dtype))
    target = Tensor(clean[:, None].astype(model.dtype))
    model.zero_grad()
    loss = loss_mfnet(target, model(x), weights)
    value = float(loss.data)
    if not math.isfinite(value):
        raise NumericAbort(None, lr, value)
    loss.backward()
    optimizer.step(lr)
    return value


def train(pairs: Sequence[tuple[Waveform, Waveform]], cfg: TrainConfig, model_cfg: ModelConfig,
          out_dir=None, spec: FrameSpec | None = None) -> TrainResult:
    """Train on (noisy, clean) pairs; writes checkpoint and loss curve to ``out_dir`` if given."""
    if not pairs:
        raise InvalidArgumentError("training needs at least one (noisy, clean) pair")
    spec = spec or FrameSpec()
    for noisy, clean in pairs:
        if len(noisy) != len(clean):
            raise ShapeError("noisy and clean waveforms differ in length")
        if len(noisy) < spec.window_len:
            raise InvalidArgumentError("training waveform shorter than one window")
    rng = np.random.default_rng(cfg.seed)
    model = MFNet(model_cfg, seed=cfg.seed)
    optimizer = AdamW(model.parameters(), cfg)
    weights = LossWeights(cfg.gamma)
    steps_per_epoch = math.ceil(len(pairs) / cfg.batch_size)
    segment = int(round(cfg.segment_seconds * pairs[0][0].sample_rate))
    out_dir = Path(out_dir) if out_dir is not None else None
    ckpt = out_dir / "checkpoint.mfn" if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    result = TrainResult(model)

    step = 0
    for epoch in range(cfg.total_epochs):
        order = rng.permutation(len(pairs))
        losses = []
        lr = 0.0
        for b in range(steps_per_epoch):
            batch = [pairs[i] for i in order[b * cfg.batch_size : (b + 1) * cfg.batch_size]]
            length = min(segment, min(len(p[0]) for p in batch))
            cropped = _crop(batch, length, rng)
            noisy = np.stack([_spectra(Waveform(n), spec) for n, _ in cropped])
            clean = np.stack([_spectra(Waveform(c), spec) for _, c in cropped])
            lr = lr_schedule(step, steps_per_epoch, cfg)
            try:
                losses.append(train_step(model, optimizer, noisy, clean, lr, weights))
            except NumericAbort as exc:
                log.error("aborting: non-finite loss at step %d (lr=%g, loss=%r); last checkpoint kept",
                          step, lr, exc.loss)
                raise NumericAbort(step, lr, exc.loss) from None
            step += 1
        result.curve.append({"epoch": epoch, "step": step - 1, "lr": lr, "loss": float(np.mean(losses))})
        log.info("epoch %d loss %.6g lr %.3g", epoch, result.curve[-1]["loss"], lr)
        if ckpt is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(model, ckpt, {"train": cfg.to_dict(), "epoch": epoch})

    if out_dir is not None:
        save_checkpoint(model, ckpt, {"train": cfg.to_dict(), "epoch": cfg.total_epochs - 1})
        (out_dir / "loss_curve.json").write_text(json.dumps(result.curve, indent=1))
        result.checkpoint = ckpt
    return result


# inference
@dataclass
class Enhanced:
    waveform: Waveform
    frames: int
    clipped_samples: int


def enhance(noisy: Waveform, checkpoint, spec: FrameSpec | None = None) -> Enhanced:
    """Run the network on a waveform; ``checkpoint`` is a path or an MFNet."""
    if noisy.sample_rate != DEFAULT_SAMPLE_RATE:
        raise UnsupportedFormatError(f"expected {DEFAULT_SAMPLE_RATE} Hz input, got {noisy.sample_rate} Hz")
    model = checkpoint if isinstance(checkpoint, MFNet) else load_checkpoint(checkpoint)
    spec = spec or FrameSpec()
    noisy_spec = stdct(noisy, spec)
    out_spec = mfnet_forward(noisy_spec, model)
    wave = istdct(out_spec, len(noisy)).samples
    clipped = int(np.count_nonzero(np.abs(wave) > 1.0))
    if clipped:
        log.warning("clipped %d samples to [-1, 1]", clipped)
    return Enhanced(Waveform(np.clip(wave, -1.0, 1.0), noisy.sample_rate), noisy_spec.n_frames, clipped)


# toy overfitting setup shared by the convergence script and the test-suite
MINI_MODEL = dict(base_channels=4, encoder_depths=(1, 1, 2, 1), bottleneck_depth=2, decoder_depths=(1, 1, 1, 1))


def overfit_toy(head: HeadMode, steps: int = 500, seed: int = 0, out_dir=None, **train_overrides):
    """Overfit the miniature model on one 1 s harmonic+white-noise pair at 0 dB.

    Returns (TrainResult, noisy, clean).
    """
    noisy, clean = toy_pair(seconds=1.0, snr_db=0.0, seed=seed)
    cfg = TrainConfig(**{"total_epochs": steps, "warmup_epochs": 5, "seed": seed, **train_overrides})
    res = train([(noisy, clean)], cfg, ModelConfig(head=head, **MINI_MODEL), out_dir=out_dir)
    return res, noisy, clean
