"""Overfit one synthetic noisy/clean pair with each output head; print loss and SNR gain as JSON lines.

    python scripts/toy_convergence.py --steps 500
"""
import argparse
import json
import time

from mfnet.model import HeadMode
from mfnet.objectives import snr_db
from mfnet.pipeline import enhance, overfit_toy


def run(head, steps, seed=0, lr=0.0034):
    res, noisy, clean = overfit_toy(head, steps, seed, lr_max=lr)
    out = enhance(noisy, res.model).waveform
    before, after = snr_db(clean, noisy), snr_db(clean, out)
    return {
        "head": head.value,
        "initial_loss": res.initial_loss,
        "final_loss": res.final_loss,
        "loss_ratio": res.final_loss / res.initial_loss,
        "snr_before": before,
        "snr_after": after,
        "snr_gain": after - before,
    }


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--lr", type=float, default=0.0034)
    ap.add_argument("--head", choices=[h.value for h in HeadMode], action="append")
    args = ap.parse_args()
    for h in args.head or [h.value for h in HeadMode]:
        t0 = time.time()
        rep = run(HeadMode(h), args.steps, args.seed, args.lr)
        rep["seconds"] = round(time.time() - t0, 1)
        print(json.dumps(rep))
