"""Command-line entry point: ``run``, ``galton`` and ``validate``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .averaging import pool_crowd
from .harness import ConfigError, DataError, load_config, run, validate_config

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4


def read_guesses(path) -> np.ndarray:
    """One numeric guess per nonblank row; a leading non-numeric header row is skipped."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    vals = []
    for i, line in enumerate(lines, 1):
        s = line.strip().split(",")[0].strip()
        if not s:
            continue
        try:
            v = float(s)
        except ValueError:
            if i == 1:
                continue
            raise DataError(f"line {i}: non-numeric guess {s!r}") from None
        if not math.isfinite(v):
            raise DataError(f"line {i}: non-finite guess {s!r}")
        vals.append(v)
    if not vals:
        raise DataError("no guesses found")
    return np.asarray(vals)


def galton_report(values, combiner: str = "mean") -> dict:
    return {
        "n": int(len(values)),
        "mean": pool_crowd(values, "mean"),
        "median": pool_crowd(values, "median"),
        "combiner": combiner,
        "prediction": pool_crowd(values, combiner),
    }


def _cmd_run(args) -> int:
    cfg = load_config(args.config, args.out)
    summary = run(cfg)
    for label, entry in summary["predictors"].items():
        note = f" (quarantined: {entry['quarantined']})" if entry["quarantined"] else ""
        print(f"{label}: scored {entry['n_scored']} steps{note}")
    print(f"wrote {cfg.output_dir}")
    return EXIT_OK


def _cmd_galton(args) -> int:
    rep = galton_report(read_guesses(args.file), args.combiner)
    print(f"n = {rep['n']}")
    print(f"mean = {rep['mean']:.12g}")
    print(f"median = {rep['median']:.12g}")
    print(f"prediction ({rep['combiner']}) = {rep['prediction']:.12g}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    diags, resolved = validate_config(args.config)
    for d in diags:
        print(f"{args.config}: {d}", file=sys.stderr)
    if any(d.level == "error" for d in diags):
        return EXIT_CONFIG
    print(json.dumps(resolved, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="prequential", description="Prequential benchmark runner")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run a benchmark config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="output directory (overrides the config)")
    p.set_defaults(func=_cmd_run)
    p = sub.add_parser("galton", help="pool a file of crowd guesses")
    p.add_argument("--file", required=True)
    p.add_argument("--combiner", choices=("mean", "median"), default="mean")
    p.set_defaults(func=_cmd_galton)
    p = sub.add_parser("validate", help="check a config and echo resolved defaults")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover
        logging.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
