"""Command-line entry point.

Exit codes: 0 success, 2 config parse/validation error, 3 numerical
error (divergent ensemble, unreachable density, CFL violation, ...).
"""
from __future__ import annotations

import argparse
import sys

from .config import ExperimentConfig, load_config, validate_config, with_overrides
from .errors import ParseError, ValidationError, ZrplabError
from .harness import run_experiment

_COMMANDS = {
    "simulate": "simulate",
    "pde": "pde",
    "compare": "compare",
    "condense": "condense",
    "ensemble-table": "ensemble_table",
    "sweep": "sweep",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zrplab",
        description="Zero-range lattice gas in a quenched chemotactic environment")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        s = sub.add_parser(name, help=f"run the {name} experiment")
        s.add_argument("--config", default=None, help="config file (defaults when omitted)")
        s.add_argument("--seed", type=int, default=None, help="override base_seed")
        s.add_argument("--replicas", type=int, default=None, help="override replica count")
        s.add_argument("--out", default=None, help="override output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        overrides = {"experiment": _COMMANDS[args.command]}
        if args.seed is not None:
            overrides["base_seed"] = args.seed
        if args.replicas is not None:
            overrides["replicas"] = args.replicas
        if args.out is not None:
            overrides["output_dir"] = args.out
        cfg = with_overrides(cfg, **overrides)
        validate_config(cfg)
    except (ParseError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        run_experiment(cfg)
    except (ParseError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ZrplabError as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
