"""Spectral training loss and waveform-domain quality metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dsp import Waveform
from .errors import InvalidArgumentError, ShapeError

DB_CAP = 99.99


@dataclass(frozen=True)
class LossWeights:
    gamma: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise InvalidArgumentError(f"gamma must lie in [0, 1], got {self.gamma}")


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(getattr(x, "data", x))


def _check(target: Tensor, pred: Tensor):
    if target.shape != pred.shape:
        raise ShapeError(f"loss: target shape {target.shape} != prediction shape {pred.shape}")


def loss_abs(target, pred) -> Tensor:
    """Mean squared difference of magnitudes; blind to sign flips."""
    t, p = _as_tensor(target), _as_tensor(pred)
    _check(t, p)
    return ad.mean(ad.square(ad.absolute(t) - ad.absolute(p)))


def loss_polar(target, pred) -> Tensor:
    t, p = _as_tensor(target), _as_tensor(pred)
    _check(t, p)
    return ad.mean(ad.square(t - p))


def loss_mfnet(target, pred, w: LossWeights | float = LossWeights()) -> Tensor:
    if not isinstance(w, LossWeights):
        w = LossWeights(float(w))
    g = w.gamma
    return ad.scale(loss_abs(target, pred), g) + ad.scale(loss_polar(target, pred), 1.0 - g)


def _samples(x) -> np.ndarray:
    return np.asarray(x.samples if isinstance(x, Waveform) else x, dtype=np.float64)


def _ratio_db(num: float, den: float) -> float:
    if den == 0.0:
        return DB_CAP
    if num == 0.0:
        return -DB_CAP
    return float(np.clip(10.0 * np.log10(num / den), -DB_CAP, DB_CAP))


def snr_db(reference, estimate) -> float:
    s, e = _samples(reference), _samples(estimate)
    if s.shape != e.shape:
        raise ShapeError(f"snr: length mismatch {s.shape} vs {e.shape}")
    energy = float(np.dot(s, s))
    if energy == 0.0:
        raise InvalidArgumentError("snr: reference signal is all zeros")
    err = s - e
    return _ratio_db(energy, float(np.dot(err, err)))


def si_sdr_db(reference, estimate) -> float:
    s, e = _samples(reference), _samples(estimate)
    if s.shape != e.shape:
        raise ShapeError(f"si-sdr: length mismatch {s.shape} vs {e.shape}")
    s = s - s.mean()
    e = e - e.mean()
    ref_energy = float(np.dot(s, s))
    if ref_energy == 0.0 or not np.any(e):
        raise InvalidArgumentError("si-sdr: reference and estimate must both be nonzero")
    target = (np.dot(e, s) / ref_energy) * s
    residual = e - target
    return _ratio_db(float(np.dot(target, target)), float(np.dot(residual, residual)))


def metric_record(reference, estimate, file: str | None = None, frames: int | None = None) -> dict:
    return {
        "file": file,
        "snr_db": snr_db(reference, estimate),
        "si_sdr_db": si_sdr_db(reference, estimate),
        "frames": frames,
    }
