"""Mono 16 kHz WAV reading and writing (PCM16 or IEEE float32)."""
from __future__ import annotations

import numpy as np
import scipy.io.wavfile

from .dsp import DEFAULT_SAMPLE_RATE, Waveform
from .errors import UnsupportedFormatError


def read_wav(path, expected_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    try:
        rate, data = scipy.io.wavfile.read(path)
    except ValueError as exc:
        raise UnsupportedFormatError(f"{path}: {exc}") from exc
    if data.ndim != 1:
        raise UnsupportedFormatError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if rate != expected_rate:
        raise UnsupportedFormatError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise UnsupportedFormatError(f"{path}: unsupported sample type {data.dtype}")
    return Waveform(samples, rate)


def write_wav(path, wave: Waveform, pcm16: bool = False) -> None:
    if pcm16:
        data = np.clip(np.round(wave.samples * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = wave.samples.astype(np.float32)
    scipy.io.wavfile.write(path, wave.sample_rate, data)
