"""Command line entry point.

    python experiment_cli.py converge --trials 5 --out results
    python experiment_cli.py sweep --rates 0.3,0.5,0.8 --solvers pnp,gamp
    python experiment_cli.py validate

Exit codes: 0 success, 1 failed validation check, 2 configuration error,
3 too many trials hit a numerical failure.
"""
import argparse
import logging
import os
import sys

from dotenv import load_dotenv

from errors import ConfigurationError, FailureBudgetExceeded
from experiment_config import load_config
from experiments import run_convergence_experiment, run_rate_sweep
from validation_suite import run_validation_suite

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CONFIG = 2
EXIT_FAILURE_BUDGET = 3

CONFIG_ENV = "PNP_MMSE_CONFIG"
COMMAND_DEFAULTS = {"converge": {"measurement_rates": [0.8]}}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"KEY=VALUE config file (default: ${CONFIG_ENV})")
    common.add_argument("--seed", type=int)
    common.add_argument("--n", type=int, help="signal dimension")
    common.add_argument("--alpha", type=float, help="sparsity level of the prior")
    common.add_argument("--trials", type=int)
    common.add_argument("--rates", help="comma-separated measurement rates m/n")
    common.add_argument("--solvers", help="comma-separated subset of pnp,lasso,gamp")
    common.add_argument("--max-iter", type=int, dest="max_iter")
    common.add_argument("--gamma", type=float, help="fixed step size instead of 0.99/L")
    common.add_argument(
        "--allow-large-step", action="store_true", dest="allow_large_step", help="accept a --gamma above 1/L and only warn"
    )
    common.add_argument("--paper-scale", action="store_true", dest="paper_scale", help="n=4096, 100 trials")
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int)
    common.add_argument("--no-progress", action="store_true", dest="no_progress")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="pnp-mmse", description="PnP-ISTA with an exact MMSE denoiser")
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("converge", parents=[common], help="cost and SNR against iteration at one rate")
    commands.add_parser("sweep", parents=[common], help="final SNR against measurement rate")
    commands.add_parser("validate", parents=[common], help="run the numerical checks")
    return parser


def configure_logging(args):
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def overrides_from(args):
    return {
        "seed": args.seed,
        "n": args.n,
        "alpha": args.alpha,
        "trials": args.trials,
        "measurement_rates": args.rates,
        "solvers": args.solvers,
        "max_iter": args.max_iter,
        "gamma": args.gamma,
        "allow_large_step": True if args.allow_large_step else None,
        "output_dir": args.out,
        "workers": args.workers,
    }


def run_command(command, config, progress):
    if command == "converge":
        paths = run_convergence_experiment(config, progress=progress)
    elif command == "sweep":
        paths = run_rate_sweep(config, progress=progress)
    else:
        report = run_validation_suite(config)
        path = report.write(config.output_dir)
        for failure in report.failures:
            logger.error("CHECK -> %s failed: value=%s tolerance=%s %s", failure.check, failure.value, failure.tolerance, failure.detail)
        print(report.to_frame().to_string(index=False))
        print(f"validation table: {path}")
        return report.exit_code

    for name, path in paths.items():
        print(f"{name}: {path}")
    return EXIT_OK


def main(argv=None):
    load_dotenv()
    args = build_parser().parse_args(argv)
    configure_logging(args)

    try:
        config = load_config(
            args.config or os.getenv(CONFIG_ENV),
            overrides=overrides_from(args),
            paper_scale=args.paper_scale,
            defaults=COMMAND_DEFAULTS.get(args.command),
        )
        return run_command(args.command, config, progress=not args.no_progress)
    except ConfigurationError as exc:
        logger.error("CONFIG -> %s", exc)
        return EXIT_CONFIG
    except FailureBudgetExceeded as exc:
        logger.error("TRIAL -> %s", exc)
        return EXIT_FAILURE_BUDGET


if __name__ == "__main__":
    sys.exit(main())
