"""``normkit`` command line: run, sweep, render, gradcheck."""

from __future__ import annotations

import argparse
import logging
import sys
import time

from .errors import ConfigError, MissingColumnError
from .normalizers import PRESETS


def _values(text: str) -> list[float]:
    parts = [p for p in text.split(",") if p.strip()]
    if not parts:
        raise argparse.ArgumentTypeError("expected a comma-separated list of numbers")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number list: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="normkit", description="Unified normalizer experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train one configuration and write metrics.csv, summary.json, curves.svg")
    p.add_argument("config")
    p.add_argument("--output-dir", help="override output_dir from the config")

    p = sub.add_parser("sweep", help="one run per value of sigma or lambda_l1, plus sweep.csv")
    p.add_argument("config")
    p.add_argument("--axis", required=True, choices=("sigma", "lambda_l1"))
    p.add_argument("--values", required=True, type=_values)
    p.add_argument("--jobs", type=int, default=1, help="concurrent child runs")
    p.add_argument("--output-dir")

    p = sub.add_parser("render", help="render a metrics.csv to an SVG learning curve")
    p.add_argument("metrics")
    p.add_argument("-o", "--output")

    p = sub.add_parser("gradcheck", help="closed-form vs tape vs finite-difference gradients")
    p.add_argument("--preset", choices=PRESETS, action="append", help="repeatable; default all")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--quiet", action="store_true", help="only print failures and the summary")

    p = sub.add_parser("make-digits", help="write scikit-learn's 8x8 digits as IDX files")
    p.add_argument("directory")
    return parser


def _cmd_run(args) -> int:
    from .config import load_config
    from .runner import EXIT_CONFIG, execute

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.output_dir:
        from dataclasses import replace
        from pathlib import Path

        cfg = replace(cfg, output_dir=Path(args.output_dir))
    code, summary = execute(cfg)
    print(f"{summary['status']}: {cfg.output_dir}")
    return code


def _cmd_sweep(args) -> int:
    from .runner import EXIT_CONFIG, sweep

    try:
        code, rows = sweep(args.config, args.axis, args.values, jobs=args.jobs, output_dir=args.output_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for r in rows:
        print(f"{r['axis']}={r['value']}: {r['status']} (exit {r['exit_code']})")
    return code


def _cmd_render(args) -> int:
    from .report import render_curves

    try:
        out = render_curves(args.metrics, args.output)
    except (MissingColumnError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite

    t0 = time.perf_counter()
    total = failed = 0
    for result in run_suite(presets=args.preset or PRESETS, seeds=range(args.seeds)):
        total += 1
        failed += not result.passed
        if not args.quiet or not result.passed:
            print(result.line())
    print(f"{total - failed}/{total} cases passed in {time.perf_counter() - t0:.1f}s")
    return 0 if failed == 0 else 1


def _cmd_make_digits(args) -> int:
    from .training.data import write_digits_idx

    for path in write_digits_idx(args.directory):
        print(path)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handler = {"run": _cmd_run, "sweep": _cmd_sweep, "render": _cmd_render,
               "gradcheck": _cmd_gradcheck, "make-digits": _cmd_make_digits}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
