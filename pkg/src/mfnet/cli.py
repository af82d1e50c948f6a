"""Command-line entry point: train, enhance, evaluate, gradcheck, info.

Exit codes: 0 success, 1 check failure, 2 usage/config error, 3 numeric abort.
Machine-readable results go to stdout as one JSON document; logs go to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import checks
from .errors import CheckpointError, InvalidArgumentError, MFNetError, NumericAbort, ShapeError, UnsupportedFormatError
from .model import ModelConfig, load_checkpoint, model_info
from .objectives import metric_record
from .pipeline import MixSpec, TrainConfig, enhance, materialize, train
from .wavio import read_wav, write_wav

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("mfnet")

CONFIG_KEYS = {"manifest", "out_dir", "train", "model"}


class UsageError(Exception):
    pass


def _emit(obj):
    json.dump(obj, sys.stdout, sort_keys=True)
    sys.stdout.write("\n")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    """Apply dotted ``key=value`` overrides; values are parsed as JSON when possible."""
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"override '{item}' is not key=value")
        key, value = item.split("=", 1)
        parts = key.split(".")
        node = cfg
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise UsageError(f"override '{key}' descends into a non-section")
        node[parts[-1]] = _parse_value(value)
    return cfg


def load_config(path: str | None, overrides: list[str]) -> tuple[dict, Path]:
    base = Path(".")
    cfg: dict = {}
    if path is not None:
        p = Path(path)
        try:
            cfg = json.loads(p.read_text())
        except FileNotFoundError:
            raise UsageError(f"config file not found: {p}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"{p}: invalid JSON ({exc})") from None
        base = p.parent
    cfg = apply_overrides(cfg, overrides)
    unknown = set(cfg) - CONFIG_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return cfg, base


def _model_config(section: dict | None) -> ModelConfig:
    try:
        return ModelConfig.from_dict(section or {})
    except (InvalidArgumentError, TypeError, ValueError) as exc:
        raise UsageError(f"model config: {exc}") from None


def _train_config(section: dict | None) -> TrainConfig:
    try:
        return TrainConfig.from_dict(section or {})
    except (InvalidArgumentError, TypeError) as exc:
        raise UsageError(f"train config: {exc}") from None


def load_manifest(path: Path) -> list[MixSpec]:
    try:
        entries = json.loads(path.read_text())
    except FileNotFoundError:
        raise UsageError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(entries, list) or not entries:
        raise UsageError(f"{path}: manifest must be a non-empty JSON list")
    mixes = []
    for i, e in enumerate(entries):
        if not isinstance(e, dict) or set(e) != {"clean_path", "noise_path", "snr_db", "seed"}:
            raise UsageError(f"{path}: entry {i} must have exactly clean_path, noise_path, snr_db, seed")
        clean, noise = (path.parent / e["clean_path"], path.parent / e["noise_path"])
        for f in (clean, noise):
            if not f.is_file():
                raise UsageError(f"manifest entry {i}: missing file {f}")
        mixes.append(MixSpec(str(clean), str(noise), float(e["snr_db"]), int(e["seed"])))
    return mixes


def cmd_train(args) -> int:
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    cfg, base = load_config(args.config, overrides)
    if "manifest" not in cfg:
        raise UsageError("config needs a 'manifest' path")
    train_cfg = _train_config(cfg.get("train"))
    model_cfg = _model_config(cfg.get("model"))
    mixes = load_manifest(base / cfg["manifest"])
    out_dir = base / cfg.get("out_dir", "run")
    try:
        pairs = materialize(mixes, read_wav)
    except (UnsupportedFormatError, InvalidArgumentError) as exc:
        raise UsageError(str(exc)) from None
    res = train(pairs, train_cfg, model_cfg, out_dir=out_dir)
    _emit({
        "checkpoint": str(res.checkpoint),
        "loss_curve": str(out_dir / "loss_curve.json"),
        "initial_loss": res.initial_loss,
        "final_loss": res.final_loss,
        "epochs": len(res.curve),
    })
    return EXIT_OK


def cmd_enhance(args) -> int:
    noisy = read_wav(args.inp)
    model = load_checkpoint(args.ckpt)
    t0 = time.perf_counter()
    out = enhance(noisy, model)
    wall = time.perf_counter() - t0
    write_wav(args.out, out.waveform)
    _emit({"rtf": wall / noisy.duration, "frames": out.frames, "clipped_samples": out.clipped_samples})
    return EXIT_OK


def cmd_evaluate(args) -> int:
    ref, est = read_wav(args.ref), read_wav(args.est)
    if len(ref) != len(est):
        raise UsageError(f"length mismatch: {args.ref} has {len(ref)} samples, {args.est} has {len(est)}")
    _emit(metric_record(ref, est, file=str(args.est), frames=None))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.op is not None and args.op != "all" and args.op not in checks.REGISTRY:
        raise UsageError(f"unknown op '{args.op}'; known: {', '.join(checks.REGISTRY)}")
    names = None if args.op in (None, "all") else [args.op]
    results = checks.run_checks(names, seeds=args.seeds)
    failed = [name for name, err in results.items() if not err < checks.TOLERANCE]
    for name, err in results.items():
        log.info("%-26s max rel err %.3e %s", name, err, "FAIL" if name in failed else "ok")
    _emit({"results": results, "tolerance": checks.TOLERANCE, "failed": failed})
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_info(args) -> int:
    if args.ckpt is not None:
        cfg = load_checkpoint(args.ckpt).cfg
    else:
        raw = _read_json(args.config)
        # a run config has a "model" section; anything else is a bare model config
        if set(raw) & CONFIG_KEYS:
            unknown = set(raw) - CONFIG_KEYS
            if unknown:
                raise UsageError(f"unknown config keys: {sorted(unknown)}")
            raw = raw.get("model", {})
        cfg = _model_config(raw)
    _emit(model_info(cfg))
    return EXIT_OK


def _read_json(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise UsageError(f"{path}: expected a JSON object")
    return data


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mfnet", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a manifest of clean/noise mixtures")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance a mono 16 kHz WAV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("evaluate", help="SNR and SI-SDR of an estimate against a reference")
    p.add_argument("--ref", required=True)
    p.add_argument("--est", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--op", default="all")
    p.add_argument("--seeds", type=int, default=checks.N_SEEDS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("info", help="parameter count, MACs and channel plan")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--ckpt")
    g.add_argument("--config")
    p.set_defaults(func=cmd_info)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, UnsupportedFormatError, CheckpointError, ShapeError, InvalidArgumentError,
            FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MFNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
