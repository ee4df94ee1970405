"""``sampler`` command line: run, list, validate and check-gradient."""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .errors import ConfigurationError, ContractViolation, DatasetError
from .experiment import (
    EXIT_DATA_ERROR,
    EXIT_INVALID_CONFIG,
    EXIT_OK,
    EXIT_TUNING_FAILED,
    list_experiments,
    load_config,
    run_experiment,
)
from .targets import GaussianTarget, LogisticPosterior, check_gradient, load_dataset, load_pima

GRADIENT_TOLERANCE = 1e-5


def _gradient_target(name: str):
    """Targets addressable by name: 'gaussian', 'gaussian:<dim>', 'pima', or a CSV path."""
    if name == "gaussian":
        return GaussianTarget(1)
    if name.startswith("gaussian:"):
        return GaussianTarget(int(name.split(":", 1)[1]))
    if name in ("pima", "logistic"):
        return LogisticPosterior(load_pima())
    return LogisticPosterior(load_dataset(name, "type"))


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    status, out = run_experiment(cfg, args.out)
    if status == EXIT_TUNING_FAILED:
        print(f"tuning failed; partial report written to {out}", file=sys.stderr)
    else:
        print(f"{cfg.name}: outputs written to {out}")
    return status


def _cmd_list(args) -> int:
    for name in list_experiments():
        cfg = load_config(name)
        print(f"{name}\t{cfg.description}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(f"{cfg.name}: valid ({cfg.kernel['kind']} on {cfg.target['kind']}, {cfg.iterations} iterations)")
    return EXIT_OK


def _cmd_check_gradient(args) -> int:
    target = _gradient_target(args.target)
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(args.points):
        x = args.scale * rng.standard_normal(target.dim)
        worst = max(worst, check_gradient(target, x))
    ok = worst < GRADIENT_TOLERANCE
    print(f"{target.name} (d={target.dim}): max relative gradient error {worst:.3e} over {args.points} points "
          f"-> {'ok' if ok else 'FAILED'}")
    return EXIT_OK if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sampler", description="Seeded MCMC experiments with CSV outputs.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for debug")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config (file path or bundled name)")
    run.add_argument("config")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--out", default=None, help="output directory (default: $SAMPLER_OUT/<name>)")
    run.set_defaults(func=_cmd_run)

    lst = sub.add_parser("list", help="list bundled experiments")
    lst.set_defaults(func=_cmd_list)

    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("config")
    val.set_defaults(func=_cmd_validate)

    grad = sub.add_parser("check-gradient", help="compare analytic and finite-difference gradients")
    grad.add_argument("target", help="gaussian, gaussian:<dim>, pima, or a CSV path with a 'type' column")
    grad.add_argument("--points", type=int, default=100)
    grad.add_argument("--scale", type=float, default=1.0, help="standard deviation of the random points")
    grad.add_argument("--seed", type=int, default=0)
    grad.set_defaults(func=_cmd_check_gradient)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, ContractViolation) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID_CONFIG
    except DatasetError as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return EXIT_DATA_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
