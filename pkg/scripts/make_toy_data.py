"""Write a toy training set (harmonic "speech" + white noise WAVs), its manifest and a run config.

    python scripts/make_toy_data.py runs/toy
    mfnet train --config runs/toy/config.json
"""
import argparse
import json
from pathlib import Path

import numpy as np

from mfnet.dsp import Waveform
from mfnet.pipeline import MINI_MODEL, harmonic_signal
from mfnet.wavio import write_wav


def make(out: Path, seconds=1.0, snr_db=0.0, seed=0, epochs=500, head="map_reverse_noise") -> Path:
    out.mkdir(parents=True, exist_ok=True)
    clean = harmonic_signal(seconds, seed=seed)
    noise = np.random.default_rng(seed + 1).standard_normal(len(clean))
    write_wav(out / "clean.wav", clean)
    write_wav(out / "noise.wav", Waveform(0.25 * noise / np.max(np.abs(noise))))
    manifest = [{"clean_path": "clean.wav", "noise_path": "noise.wav", "snr_db": snr_db, "seed": seed}]
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    config = {
        "manifest": "manifest.json",
        "out_dir": "run",
        "train": {"total_epochs": epochs, "warmup_epochs": min(5, epochs), "seed": seed},
        "model": {**MINI_MODEL, "head": head},
    }
    path = out / "config.json"
    path.write_text(json.dumps(config, indent=1))
    return path


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("out", type=Path)
    ap.add_argument("--seconds", type=float, default=1.0)
    ap.add_argument("--snr-db", type=float, default=0.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=500)
    ap.add_argument("--head", default="map_reverse_noise")
    a = ap.parse_args()
    print(make(a.out, a.seconds, a.snr_db, a.seed, a.epochs, a.head))
