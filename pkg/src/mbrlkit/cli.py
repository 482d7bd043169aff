"""Command-line entry point.

    mbrlkit run <config> [--seed S] [--out DIR] [--overwrite]
    mbrlkit validate <config>
    mbrlkit plot <run-dir> --keys k1,k2 [--out FILE]
    mbrlkit inspect <run-dir>

Exit codes: 0 success, 1 usage error, 2 config validation error,
3 runtime failure. Messages go to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigError, UsageError
from .expmgr.config import config_load
from .expmgr.experiment import RunExistsError, experiment_run
from .monitor import PlotSpec, plot_series, read_csv

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class ArgumentError(UsageError):
    """Bad command-line input: missing files, unknown flags, bad key lists."""


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad arguments; route those to our usage code."""

    def error(self, message):
        raise ArgumentError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mbrlkit", description="Run and inspect model-based RL experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run an experiment from a TOML config")
    r.add_argument("config")
    r.add_argument("--seed", type=int, help="override experiment.seed")
    r.add_argument("--out", help="override experiment.out_dir")
    r.add_argument("--overwrite", action="store_true", help="replace an existing run directory")
    r.add_argument("--console", action="store_true", help="echo log lines to stderr")

    v = sub.add_parser("validate", help="parse and validate a config without running it")
    v.add_argument("config")

    pl = sub.add_parser("plot", help="render recorded series of a run as SVG")
    pl.add_argument("run_dir")
    pl.add_argument("--keys", required=True, help="comma-separated record keys")
    pl.add_argument("--out", help="output file (default <run-dir>/plot.svg)")

    i = sub.add_parser("inspect", help="print the final report of a run")
    i.add_argument("run_dir")
    return p


def _load(path):
    try:
        return config_load(path)
    except OSError as exc:
        raise ArgumentError(f"cannot read config {path}: {exc.strerror or exc}") from None


def cmd_run(args) -> int:
    cfg = _load(args.config).with_overrides(seed=args.seed, out_dir=args.out)
    out = experiment_run(cfg, overwrite=args.overwrite, console=True if args.console else None)
    print(out)
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _load(args.config)
    print(f"OK ({cfg.key_count()} keys)")
    return EXIT_OK


def cmd_plot(args) -> int:
    run_dir = Path(args.run_dir)
    keys = [k.strip() for k in args.keys.split(",") if k.strip()]
    if not keys:
        raise ArgumentError("--keys needs at least one record key")
    records = {}
    for k in keys:
        f = run_dir / "records" / f"{k}.csv"
        if not f.is_file():
            raise ArgumentError(f"no record {k!r} in {run_dir}")
        records[k] = read_csv(f)
    out = Path(args.out) if args.out else run_dir / "plot.svg"
    plot_series(PlotSpec(keys, str(out), title=run_dir.name), records)
    print(out)
    return EXIT_OK


def cmd_inspect(args) -> int:
    f = Path(args.run_dir) / "report.json"
    if not f.is_file():
        raise ArgumentError(f"no report.json in {args.run_dir}")
    report = json.loads(f.read_text(encoding="utf-8"))
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK if report.get("status") == "completed" else EXIT_RUNTIME


COMMANDS = {"run": cmd_run, "validate": cmd_validate, "plot": cmd_plot, "inspect": cmd_inspect}


def cli_dispatch(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArgumentError, RunExistsError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
