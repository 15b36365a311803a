"""``vbident`` command line.

Exit codes: 0 ok, 2 configuration error, 3 data error (missing or malformed
input), 4 training divergence, 5 identification failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import config as config_mod
from . import pipeline
from .errors import ConfigError, DataError, VbError

log = logging.getLogger("vbident")

STAGES = ("simulate", "train-sae", "transfer", "train-forecaster", "identify", "report")


def _signals_arg(text: str):
    """An integer count of synthetic signals, or comma-separated CSV paths."""
    try:
        count = int(text)
    except ValueError:
        return [p for p in text.split(",") if p]
    if count < 1:
        raise argparse.ArgumentTypeError("signal count must be positive")
    return count


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vbident", description="Virtual battery identification for TCL ensembles.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="JSON run configuration (default: the run's stored config)")
        p.add_argument("--out", type=Path, default=Path("run"), help="run directory (default: ./run)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--workers", type=int, help="parallel simulation workers (default: available cores)")
        return p

    p = add("simulate", "simulate the ensemble tracking regulation signals")
    p.add_argument("--signals", type=_signals_arg, help="synthetic signal count or comma-separated CSV files")
    p = add("train-sae", "train the stacked autoencoder")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p = add("transfer", "grow the ensemble and transfer the autoencoder")
    p.add_argument("--source-model", type=Path)
    p.add_argument("--new-device-count", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p = add("train-forecaster", "two-step training of the VB state forecaster")
    p.add_argument("--source-model", type=Path)
    p.add_argument("--window", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p = add("identify", "extract the virtual battery parameters")
    p.add_argument("--source-model", type=Path)
    p = add("report", "write plot-ready CSV/JSON summaries")
    p.add_argument("--source-model", type=Path)
    return parser


def _resolve_config(args) -> dict:
    if args.config is not None:
        cfg = config_mod.load_config(args.config)
    elif args.command == "simulate":
        stored = args.out / "config.json"
        cfg = pipeline.load_run_config(args.out, None) if stored.is_file() else config_mod.load_config(None)
    else:
        cfg = pipeline.load_run_config(args.out, None)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg = config_mod.validate(dict(cfg, seed=args.seed))
    return cfg


def _workers(args, cfg) -> int:
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        return args.workers
    return cfg["workers"] or os.cpu_count() or 1


def dispatch(args) -> dict:
    out = args.out
    if args.command != "simulate" and not out.is_dir():
        raise DataError(f"run directory {out} does not exist; run `vbident simulate --out {out}` first")
    cfg = _resolve_config(args)
    if args.command == "simulate":
        return pipeline.stage_simulate(cfg, out, workers=_workers(args, cfg), signals=args.signals)
    if args.command == "train-sae":
        return pipeline.stage_train_sae(cfg, out, epochs=args.epochs, lr=args.lr)
    if args.command == "transfer":
        return pipeline.stage_transfer(cfg, out, source_model=args.source_model,
                                       new_device_count=args.new_device_count, epochs=args.epochs, lr=args.lr,
                                       workers=_workers(args, cfg))
    if args.command == "train-forecaster":
        return pipeline.stage_train_forecaster(cfg, out, source_model=args.source_model, window=args.window,
                                               epochs=args.epochs, lr=args.lr)
    if args.command == "identify":
        return pipeline.stage_identify(cfg, out, source_model=args.source_model, workers=_workers(args, cfg))
    return pipeline.stage_report(cfg, out, source_model=args.source_model)


def main(argv=None) -> int:
    level = os.environ.get("VBIDENT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        result = dispatch(args)
    except VbError as exc:
        print(f"vbident {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    print(json.dumps(result, indent=2, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
