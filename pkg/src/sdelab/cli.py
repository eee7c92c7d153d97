"""Command-line entry point: run one experiment config to a CSV/JSON file.

Exit codes: 0 all verdicts passed, 2 at least one verdict failed,
1 usage or configuration error.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from .experiments import (
    CATALOG,
    ConfigError,
    build_config,
    parse_config_text,
    render_csv,
    render_json,
    run_experiment,
)


def _catalog_listing() -> str:
    width = max(len(name) for name in CATALOG)
    lines = ["available experiments:"]
    for name, exp in CATALOG.items():
        lines.append(f"  {name.ljust(width)}  {exp.summary}")
    return "\n".join(lines)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdelab",
        description="Run one experiment from a flat key = value config file.",
        epilog=_catalog_listing(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--config", required=True, help="path to the experiment config file")
    parser.add_argument("--seed", type=int, default=None, help="override master_seed")
    parser.add_argument("--paths", type=int, default=None, help="override n_paths")
    parser.add_argument("--steps", type=int, default=None, help="override n_steps")
    parser.add_argument("--out", default=None, help="override the output file path")
    parser.add_argument("--format", choices=("csv", "json"), default=None, help="output format")
    parser.add_argument(
        "--threads", type=int, default=1,
        help="worker threads (affects speed only, never results)",
    )
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; fold into the config-error code
        return 0 if exc.code == 0 else 1

    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 1

    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.paths is not None:
        overrides["n_paths"] = args.paths
    if args.steps is not None:
        overrides["n_steps"] = args.steps
    if args.out is not None:
        overrides["out"] = args.out
    if args.format is not None:
        overrides["format"] = args.format

    try:
        raw = parse_config_text(text)
        name, params = build_config(raw, overrides)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(_catalog_listing(), file=sys.stderr)
        return 1

    started = time.perf_counter()
    try:
        record = run_experiment(name, params, n_threads=max(1, args.threads))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    elapsed = time.perf_counter() - started

    fmt = params["format"]
    out_path = params["out"] or f"{name}.{fmt}"
    rendered = render_csv(record) if fmt == "csv" else render_json(record)
    try:
        Path(out_path).write_text(rendered)
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=sys.stderr)
        return 1

    n_fail = sum(1 for v in record.verdicts if not v)
    status = "PASS" if record.passed else f"FAIL ({n_fail} verdict(s))"
    # wall-clock goes to stderr only so output files stay deterministic
    print(
        f"{name}: {status}; {len(record.rows)} row(s) -> {out_path} [{elapsed:.2f}s]",
        file=sys.stderr,
    )
    return 0 if record.passed else 2


if __name__ == "__main__":
    sys.exit(main())
