import argparse
import logging
import sys
from pathlib import Path

from config import settings
from src.cli.commands import EXIT_CONFIG, EXIT_RUN_FAILED, dispatch
from src.cli.plan import load_plan
from src.utils.errors import ConfigError

# Configure logging
logging.basicConfig(
    level=settings.log_level,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
)
logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="manet",
        description="Restricted-mobility MANET simulator: scaling-law curves, simulations, sweeps and Monte Carlo checks",
    )
    parser.add_argument("command", choices=["analyze", "simulate", "sweep", "oracle"])
    parser.add_argument("--config", required=True, type=Path, help="TOML or JSON experiment file")
    parser.add_argument("--out", type=Path, help="Output directory (overrides output_dir)")
    parser.add_argument("--seed", type=int, help="Run a single seed instead of the configured seeds")
    parser.add_argument("--workers", type=int, help="Worker processes for sweeps and estimators")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    overrides: dict = {"command": args.command}
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    if args.workers is not None:
        overrides["workers"] = args.workers

    try:
        plan = load_plan(args.config, overrides)
    except ConfigError as e:
        logger.error(f"Invalid configuration {args.config}: {e}")
        return EXIT_CONFIG

    try:
        return dispatch(plan, args.out, plan.workers)
    except Exception as e:
        logger.exception(f"Command '{plan.command}' failed: {str(e)}")
        return EXIT_RUN_FAILED


if __name__ == "__main__":
    sys.exit(main())
