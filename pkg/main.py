"""
Entry point for the federated privacy lab.
"""
import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

# Add the project root to the python path so imports work correctly
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from app.cli.commands import cmd_attack, cmd_bounds, cmd_estimate_mbp, cmd_sweep, cmd_validate
from app.cli.models import ExitCode
from app.config.experiment import ExperimentConfig, load_experiment_config, with_overrides
from app.config.logger import setup_logging
from app.config.settings import get_config
from app.core.errors import (
    ConfigError,
    DegenerateFitError,
    DegenerateInputError,
    DivergedError,
    EstimationFailedError,
    InvalidInputError,
    MissingPrerequisiteError,
    NumericDomainError,
)

COMMANDS = ("attack", "bounds", "estimate-mbp", "sweep", "validate")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedleak",
        description="FedSGD simulation, gradient inversion attacks, MBP estimation and complexity bounds",
    )
    parser.add_argument("command", choices=COMMANDS, help="Subcommand to run")
    parser.add_argument("--config", "-c", type=str, help="Experiment config (JSON); defaults apply when omitted")
    parser.add_argument("--seed", type=int, help="Master seed (overrides config and FEDLEAK_SEED)")
    parser.add_argument("--workers", type=int, help="Worker pool size (default: from ENV or CPU count)")
    parser.add_argument("--out", type=str, help="Output directory (overrides config output_dir)")
    parser.add_argument("--trace-stride", type=int, default=1, help="Keep every k-th iteration in traces.jsonl")
    parser.add_argument("--checks", type=str, help="Comma-separated subset of validation checks")
    parser.add_argument("--log-level", type=str, help="Logging level (default: from ENV or INFO)")
    return parser


def _load(args, settings) -> ExperimentConfig:
    config = load_experiment_config(args.config) if args.config else ExperimentConfig(seed=settings["seed"])
    return with_overrides(config, seed=args.seed, output_dir=args.out)


def run(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, dispatch and map errors to exit codes."""
    args = build_parser().parse_args(argv)
    try:
        settings = get_config()
    except ValueError as e:
        setup_logging(args.log_level or "INFO")
        logging.getLogger(__name__).error(f"Invalid environment setting: {e}")
        return ExitCode.CONFIG_ERROR.value
    setup_logging(args.log_level or settings["log_level"])
    logger = logging.getLogger(__name__)

    try:
        if args.trace_stride < 1:
            raise ConfigError(f"--trace-stride must be >= 1, got {args.trace_stride}")
        workers = args.workers or settings["workers"]
        if workers < 1:
            raise ConfigError(f"--workers must be >= 1, got {workers}")
        config = _load(args, settings)
        out_dir = Path(config.output_dir)
        logger.info(f"Running {args.command} (seed={config.seed}, workers={workers}, out={out_dir})")

        if args.command == "attack":
            result = cmd_attack(config, out_dir, workers, args.trace_stride)
        elif args.command == "bounds":
            result = cmd_bounds(config, out_dir, workers)
        elif args.command == "estimate-mbp":
            result = cmd_estimate_mbp(config, out_dir, workers)
        elif args.command == "sweep":
            result = cmd_sweep(config, out_dir, workers)
        else:
            checks = [c.strip() for c in args.checks.split(",") if c.strip()] if args.checks else None
            result = cmd_validate(config, out_dir, workers, checks)
    except (ConfigError, MissingPrerequisiteError, InvalidInputError) as e:
        logger.error(str(e))
        return ExitCode.CONFIG_ERROR.value
    except (NumericDomainError, DivergedError, DegenerateInputError, EstimationFailedError, DegenerateFitError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return ExitCode.NUMERIC_ERROR.value

    logger.info(f"{args.command} finished: {', '.join(result.outputs)}")
    return result.exit_code.value


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
