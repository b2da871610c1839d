"""Command line entry point: ``fellerlab run|validate|schema``."""
from __future__ import annotations

import argparse
import json
import sys

from .config import OUT_ENV, parse_config
from .errors import ConfigError
from .report import load_schema


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fellerlab", description=(
        "Stability diagnostics for Markov-Feller semigroups. "
        f"Default output directory: ${OUT_ENV}, else ./fellerlab_out."))
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment config")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=_u64, help="override master_seed")
    run.add_argument("--out", help="output directory")
    run.add_argument("--threads", type=_positive, help="worker threads for grid cells")
    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("--config", required=True)
    sch = sub.add_parser("schema", help="show the JSON schemas of emitted files")
    sch.add_argument("--print", action="store_true", dest="print_", required=True)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "schema":
        out = {"criterion_report": load_schema("criterion_report"),
               "artifact": load_schema("artifact")}
        print(json.dumps(out, indent=2, sort_keys=True))
        return 0
    try:
        cfg = parse_config(args.config)
        if args.command == "run":
            cfg = cfg.with_overrides(args.seed, args.out, args.threads)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    if args.command == "validate":
        print(cfg.canonical(), end="")
        return 0

    from .runner import run_experiment

    manifest = run_experiment(cfg)
    for o in manifest.outputs:
        print(o["file"])
    if not manifest.ok:
        print("\n".join(manifest.errors), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
