"""Command-line entry point: one subcommand per experiment kind.

Exit status: 0 when every verdict passes, 1 when any fails, 2 for config or
runtime errors.
"""

from __future__ import annotations

import argparse
import sys

from .config import KINDS, load_config
from .errors import ConfigInvalidError, CovintError
from .experiments import run_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="covint",
        description="stochastic-integration experiments driven by TOML configs",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML experiment config")
    common.add_argument("--out", default=None, help="output directory (overrides config)")
    common.add_argument(
        "--seed", type=int, default=None, help="RNG seed (overrides config)"
    )
    common.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        sub.add_parser(kind, parents=[common], help=f"run a {kind} experiment")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, seed=args.seed, out_dir=args.out)
        if config.kind != args.command:
            raise ConfigInvalidError(
                f"config is for kind '{config.kind}' but subcommand was "
                f"'{args.command}'"
            )
        result = run_experiment(config, quiet=args.quiet)
    except CovintError as exc:
        detail = f" {exc.context}" if exc.context else ""
        print(f"covint: error [{exc.code}]: {exc}{detail}", file=sys.stderr)
        return 2
    return 0 if result.passed else 1


if __name__ == "__main__":
    sys.exit(main())
