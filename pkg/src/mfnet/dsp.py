"""Short-time DCT analysis/synthesis on real waveforms.

Frames are windowed with a square-root periodic Hann window at 50% overlap,
so analysis and synthesis windows multiply to a Hann window whose
overlap-add is exactly one.  All arithmetic is float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from .errors import InvalidArgumentError, ShapeError

DEFAULT_SAMPLE_RATE = 16000
DEFAULT_WINDOW_LEN = 320
DEFAULT_HOP = 160


def _as_vector(x, name):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise InvalidArgumentError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ShapeError(f"waveform must be mono (1-D), got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise InvalidArgumentError("waveform contains non-finite samples")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise InvalidArgumentError(f"sample_rate must be a positive integer, got {self.sample_rate!r}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def sqrt_hann(window_len: int) -> np.ndarray:
    """Square root of the periodic (DFT-even) Hann window."""
    n = np.arange(window_len)
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / window_len)
    return np.sqrt(np.clip(hann, 0.0, 1.0))


@dataclass(frozen=True)
class FrameSpec:
    window_len: int = DEFAULT_WINDOW_LEN
    hop: int = DEFAULT_HOP
    window: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.window_len < 1 or self.hop < 1:
            raise InvalidArgumentError("window_len and hop must be positive")
        if self.hop > self.window_len:
            raise InvalidArgumentError("hop larger than window leaves gaps between frames")
        if self.window is None:
            window = sqrt_hann(self.window_len)
        else:
            window = np.asarray(self.window, dtype=np.float64)
            if window.shape != (self.window_len,):
                raise ShapeError(f"window shape {window.shape} != ({self.window_len},)")
        window.setflags(write=False)
        object.__setattr__(self, "window", window)

    def ola_envelope(self, n_frames: int) -> np.ndarray:
        """Overlap-added squared window over ``n_frames`` frames."""
        out = np.zeros((n_frames - 1) * self.hop + self.window_len)
        w2 = self.window**2
        for k in range(n_frames):
            out[k * self.hop : k * self.hop + self.window_len] += w2
        return out

    def padding(self, n_samples: int) -> tuple[int, int]:
        # one hop on each side, plus enough at the end to complete the last hop
        return self.hop, self.hop + (-n_samples) % self.hop

    def n_frames(self, n_samples: int) -> int:
        left, right = self.padding(n_samples)
        return (n_samples + left + right - self.window_len) // self.hop + 1


@dataclass(frozen=True)
class Spectrogram:
    data: np.ndarray  # (frames, bins)
    spec: FrameSpec = field(default_factory=FrameSpec)
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ShapeError(f"spectrogram data must be 2-D (frames, bins), got {data.shape}")
        if data.shape[1] != self.spec.window_len:
            raise ShapeError(f"bins {data.shape[1]} != window_len {self.spec.window_len}")
        if not np.all(np.isfinite(data)):
            raise InvalidArgumentError("spectrogram contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def shape(self):
        return self.data.shape

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    def with_data(self, data) -> "Spectrogram":
        return Spectrogram(data, self.spec, self.sample_rate)


def dct2(frame) -> np.ndarray:
    """Orthonormal DCT-II along the last axis."""
    x = np.asarray(frame, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise InvalidArgumentError("dct2 needs at least one sample")
    return scipy.fft.dct(x, type=2, norm="ortho", axis=-1)


def idct2(coeffs) -> np.ndarray:
    """Inverse of :func:`dct2` (orthonormal DCT-III) along the last axis."""
    x = np.asarray(coeffs, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise InvalidArgumentError("idct2 needs at least one coefficient")
    return scipy.fft.idct(x, type=2, norm="ortho", axis=-1)


def frame_signal(samples: np.ndarray, spec: FrameSpec) -> np.ndarray:
    left, right = spec.padding(samples.shape[0])
    padded = np.concatenate([np.zeros(left), samples, np.zeros(right)])
    frames = np.lib.stride_tricks.sliding_window_view(padded, spec.window_len)[:: spec.hop]
    return frames


def stdct(wave: Waveform, spec: FrameSpec | None = None) -> Spectrogram:
    spec = spec or FrameSpec()
    if len(wave) < spec.window_len:
        raise InvalidArgumentError(
            f"waveform has {len(wave)} samples, shorter than window_len {spec.window_len}"
        )
    frames = frame_signal(wave.samples, spec) * spec.window
    return Spectrogram(dct2(frames), spec, wave.sample_rate)


def overlap_add(frames: np.ndarray, hop: int) -> np.ndarray:
    n_frames, width = frames.shape
    out = np.zeros((n_frames - 1) * hop + width)
    for k in range(n_frames):
        out[k * hop : k * hop + width] += frames[k]
    return out


def istdct(spec_out: Spectrogram, out_len: int) -> Waveform:
    spec = spec_out.spec
    n_frames = spec_out.n_frames
    if out_len < 1 or spec.n_frames(out_len) != n_frames:
        raise InvalidArgumentError(
            f"out_len {out_len} inconsistent with {n_frames} frames at hop {spec.hop}"
        )
    frames = idct2(np.asarray(spec_out.data, dtype=np.float64)) * spec.window
    signal = overlap_add(frames, spec.hop)
    left, _ = spec.padding(out_len)
    return Waveform(signal[left : left + out_len], spec_out.sample_rate)
