"""Command line front-end for the experiment modes."""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
from collections.abc import Sequence
from pathlib import Path

from .config import load_config
from .exceptions import ConfigError, NumericalError, ValidationFailure
from .experiments import run

_LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

COMMANDS = ("solve", "simulate", "sweep-budget", "contour", "validate", "scaling")


def build_parser() -> argparse.ArgumentParser:
    """Return the argument parser with one subcommand per mode."""
    parser = argparse.ArgumentParser(
        prog="aoii-csmdp",
        description="AoII-optimal sampling thresholds for CTMC sources.",
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="Log at DEBUG level")
    commands = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub = commands.add_parser(name, help=f"Run the {name} experiment")
        sub.add_argument("--config", type=Path, required=True, help="Experiment JSON document")
        sub.add_argument("--seed", type=int, help="Override the random seed")
        sub.add_argument("--out", type=Path, help="Override the output directory")
        sub.add_argument("--jobs", type=int, help="Worker processes for sweeps")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Run the command line and return the exit code."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config).with_overrides(
            seed=args.seed, output=args.out, jobs=args.jobs
        )
        mode = args.command.replace("-", "_")
        if cfg.mode != mode:
            raise ConfigError(f"Config {args.config} is for mode {cfg.mode}, not {mode}")
        result = asyncio.run(run(cfg))
    except ValidationFailure as err:
        _LOGGER.error("Validation failed: %s", err)
        return EXIT_VALIDATION
    except ConfigError as err:
        _LOGGER.error("Configuration error (%s): %s", type(err).__name__, err)
        return EXIT_CONFIG
    except NumericalError as err:
        _LOGGER.error("Numerical failure (%s): %s", type(err).__name__, err)
        return EXIT_NUMERICAL
    if isinstance(result, dict):
        print(json.dumps(result, indent=2))
    _LOGGER.info("Wrote %s results to %s", cfg.mode, cfg.output)
    return EXIT_OK
