"""Command-line entry point: ``alfvenmhd {simulate,diagnose,sweep,dispersion}``."""

from __future__ import annotations

import argparse
import sys

from .config import load_config
from .errors import AlfvenError, ConfigParseError, ConfigValidationError
from .runner import (EXIT_CONFIG, EXIT_IO, SWEEP_AXES, run_diagnose, run_dispersion,
                     run_simulate, run_sweep)


def _int_triple(text: str) -> tuple[int, int, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated integers kx,ky,kz")
    try:
        return tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer triple: {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alfvenmhd",
        description="Pseudo-spectral Elsasser MHD with characteristic-geometry diagnostics. "
                    "Set ALFVEN_THREADS to cap internal parallelism.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a simulation from a config file")
    p.add_argument("config")
    p.add_argument("--output-dir", help="override output_dir from the config")

    p = sub.add_parser("diagnose", help="recompute diagnostics from snapshots")
    p.add_argument("config")
    p.add_argument("snapshots", nargs="*")
    p.add_argument("--output-dir")

    p = sub.add_parser("sweep", help="run the config over several values of one parameter")
    p.add_argument("config")
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True, type=_float_list)
    p.add_argument("--output-dir")

    p = sub.add_parser("dispersion", help="fit frequency and damping of one linear mode")
    p.add_argument("config")
    p.add_argument("--k", required=True, type=_int_triple, help="mode indices kx,ky,kz")
    p.add_argument("--species", choices=("plus", "minus"), default="plus")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except (ConfigParseError, ConfigValidationError) as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    log = print
    try:
        if args.command == "simulate":
            return run_simulate(cfg, args.output_dir, log)
        if args.command == "diagnose":
            return run_diagnose(cfg, args.snapshots, args.output_dir, log)
        if args.command == "sweep":
            return run_sweep(cfg, args.axis, args.values, args.output_dir, log)
        return run_dispersion(cfg, args.k, args.species, log)
    except AlfvenError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
