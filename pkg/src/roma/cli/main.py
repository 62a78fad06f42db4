"""``roma`` command line entry point."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from contextlib import nullcontext
from dataclasses import fields

from threadpoolctl import threadpool_limits

from roma.bench import DEFAULT_LENGTHS, KINDS
from roma.cli import commands
from roma.cli.config import RunConfig, parse_config
from roma.errors import ConfigError, RomaError

log = logging.getLogger("roma")

_RUN_KEYS = [f.name for f in fields(RunConfig)]


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("config", nargs="?", help="key = value config file")
    group = parser.add_argument_group("config overrides")
    for key in _RUN_KEYS:
        flags = [f"--{key}"] + ([f"--{key.replace('_', '-')}"] if "_" in key else [])
        group.add_argument(*flags, dest=f"set_{key}", metavar="VALUE", default=None)
    parser.add_argument("--force", action="store_true", help="overwrite a non-empty run directory")


def _csv_list(text: str, kind=str) -> list:
    try:
        return [kind(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roma", description="Rotation-aware autoregressive pretraining toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="train a model and write checkpoints")
    _add_run_options(p)
    p.add_argument("--resume", help="continue from this checkpoint")

    p = sub.add_parser("evaluate", help="probe, capture-rate and causality results for a checkpoint")
    _add_run_options(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("ares-preview", help="render the rotation augmentation on a few images")
    _add_run_options(p)
    p.add_argument("--count", type=int, default=8)

    p = sub.add_parser("bench", help="encoder time/memory versus sequence length")
    p.add_argument("--kinds", type=_csv_list, default=list(KINDS))
    p.add_argument("--lengths", type=lambda s: _csv_list(s, int), default=list(DEFAULT_LENGTHS))
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--out-dir", "--out_dir", dest="out_dir", default="runs/bench")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("synth-data", help="write a planted-shape dataset")
    _add_run_options(p)

    p = sub.add_parser("scaling-grid", help="model preset x data fraction sweep")
    _add_run_options(p)
    p.add_argument("--presets", type=_csv_list, default=["micro", "desk"])
    p.add_argument("--fractions", type=lambda s: _csv_list(s, float), default=list(commands.DEFAULT_FRACTIONS))
    return parser


def _run_config(args) -> RunConfig:
    overrides = {k: getattr(args, f"set_{k}") for k in _RUN_KEYS if getattr(args, f"set_{k}") is not None}
    return parse_config(args.config, overrides)


def _thread_cap():
    raw = os.environ.get("ROMA_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"ROMA_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"ROMA_THREADS must be >= 1, got {n}")
    return threadpool_limits(n)


def dispatch(args) -> str:
    cmd = args.command
    if cmd == "bench":
        if args.reps < 1:
            raise ConfigError("--reps must be >= 1")
        out = commands.run_bench(args.kinds, args.lengths, args.reps, args.out_dir, args.force)
    else:
        cfg = _run_config(args)
        if cmd == "pretrain":
            out = commands.run_pretrain(cfg, args.force, args.resume)
        elif cmd == "evaluate":
            out = commands.run_evaluate(cfg, args.checkpoint, args.force)
        elif cmd == "ares-preview":
            out = commands.run_ares_preview(cfg, args.count, args.force)
        elif cmd == "synth-data":
            out = commands.run_synth_data(cfg, args.force)
        else:
            out = commands.run_scaling_grid(cfg, args.presets, args.fractions, args.force)
    return str(out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        with _thread_cap():
            out = dispatch(args)
    except (RomaError, OSError) as exc:
        where = type(exc).__module__.removeprefix("roma.")
        print(f"roma {args.command}: {type(exc).__name__} ({where}): {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
