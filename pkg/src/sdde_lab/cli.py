"""Command line entry point.

Usage:
    sdde-lab <kind> --config <file> [--out <dir>] [--seed <u64>]
             [--workers <n>] [--assert]

Exit codes: 0 success, 2 config error, 3 numerical failure,
4 inconclusive verdict or failed check when --assert was requested.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .harness import KINDS, ConfigError, run_experiment, validate_config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdde-lab",
        description=(
            "Simulate delay equations with singular drift, reweight the "
            "driftless process, and run the statistical verification probes."
        ),
    )
    parser.add_argument("kind", choices=KINDS, help="experiment kind to run")
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override mc.seed from the config")
    parser.add_argument("--workers", type=int, default=None,
                        help="worker count (default: available cores)")
    parser.add_argument("--assert", dest="assert_verdicts", action="store_true",
                        help="exit 4 on inconclusive verdicts or failed checks")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    if not isinstance(cfg, dict):
        print("config error: top level must be a JSON object", file=sys.stderr)
        return 2
    cfg.setdefault("kind", args.kind)
    if cfg["kind"] != args.kind:
        print(
            f"config error: config kind {cfg['kind']!r} does not match "
            f"requested kind {args.kind!r}",
            file=sys.stderr,
        )
        return 2
    if args.seed is not None:
        cfg.setdefault("mc", {})["seed"] = args.seed
    out_dir = args.out or cfg.get("output", {}).get("dir") or "out"
    workers = args.workers if args.workers is not None else (os.cpu_count() or 1)

    diags = validate_config(cfg)
    if diags:
        for d in diags:
            print(f"config error: {d}", file=sys.stderr)
        return 2

    try:
        result = run_experiment(cfg, out_dir, workers=workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3

    for v in result.verdicts:
        print(f"verdict: {v}")
    for c in result.failed_checks:
        print(f"failed check: {c}")
    print(f"wrote {len(result.manifest.files)} files to {out_dir}")
    if args.assert_verdicts and (
        "inconclusive" in result.verdicts or result.failed_checks
    ):
        return 4
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
