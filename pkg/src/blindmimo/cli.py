"""Command line entry point: ``blindmimo {simulate,sweep,grad-check}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .harness import ExperimentConfig, run_experiment, run_gradient_check, run_sweep
from .likelihood import gradient_laplacian
from .signal_model import ConfigError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_CHECK_FAILED = 2
EXIT_IO = 3

logger = logging.getLogger("blindmimo")


def _parse_T_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blindmimo", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment_args(p):
        p.add_argument("--config", required=True, type=Path, help="experiment JSON file")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--out", type=Path, help="override the output directory")
        p.add_argument("--workers", type=int, default=1, help="trial worker threads")

    sim = sub.add_parser("simulate", help="run seeded detection trials")
    experiment_args(sim)

    sweep = sub.add_parser("sweep", help="repeat an experiment over coherence block lengths")
    experiment_args(sweep)
    sweep.add_argument("--T", required=True, type=_parse_T_list, help="e.g. 512,2048")

    gc = sub.add_parser("grad-check", help="analytic vs finite-difference gradient")
    gc.add_argument("--K", type=int, default=4)
    gc.add_argument("--T", type=int, default=16)
    gc.add_argument("--n", type=int, default=20, help="number of random instances")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--h", type=float, default=1e-5)
    gc.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    return parser


def _load_experiment(args) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config)
    if args.seed is not None:
        config = config.replace(scenario=config.scenario.replace(seed=args.seed))
    if args.out is not None:
        config = config.replace(output_dir=args.out)
    return config


def _simulate(args) -> int:
    summary = run_experiment(_load_experiment(args), workers=args.workers)
    print(
        f"trials={len(summary.trial_seeds)} failed={summary.n_failed} "
        f"min={summary.min_matched:.4f} mean={summary.mean_matched:.4f} "
        f"max={summary.max_matched:.4f}"
    )
    return EXIT_OK


def _sweep(args) -> int:
    config = _load_experiment(args)
    for T in args.T:
        config.scenario.replace(coherence_block=T)  # validates T > 2K up front
    for T, s in zip(args.T, run_sweep(config, args.T, workers=args.workers)):
        print(f"T={T} mean={s.mean_matched:.4f} min={s.min_matched:.4f} failed={s.n_failed}")
    return EXIT_OK


def _grad_check(args) -> int:
    gradient = gradient_laplacian
    if args.corrupt_gradient:
        def gradient(B, Y):
            return gradient_laplacian(B, Y) * (1.0 + 1e-3)
    report = run_gradient_check(args.K, args.T, args.n, seed=args.seed, h=args.h,
                                gradient=gradient)
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    handlers = {"simulate": _simulate, "sweep": _sweep, "grad-check": _grad_check}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        if getattr(args, "config", None) is not None and Path(exc.filename or "") == args.config:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
