"""Command line entry point: ``cardio0d <command> --config FILE [options]``."""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import (ContractViolation, InputFileError, NonConvergenceError, NumericFailure)
from .pipeline import (RunConfig, run_analyze, run_calibrate, run_cohort, run_report,
                       run_simulate, run_uq)

EXIT_OK = 0
EXIT_NONE_CONVERGED = 2
EXIT_SOLVER = 3
EXIT_INPUT = 4


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run configuration (JSON)")
    common.add_argument("--patients", help="patient cohort CSV (overrides the config)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, help="global random seed")
    common.add_argument("--jobs", type=int, help="worker processes for per-patient work")
    common.add_argument("--samples-per-beat", type=int, help="grid points per exported beat")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="cardio0d", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    sim = sub.add_parser("simulate", parents=[common],
                         help="periodic beat of the reference or a given parameter file")
    sim.add_argument("--params", help="parameter file to simulate instead of the reference")
    sub.add_parser("cohort", parents=[common], help="write a synthetic patient cohort")
    sub.add_parser("calibrate", parents=[common], help="calibrate every patient")
    sub.add_parser("uq", parents=[common], help="reliability analysis of calibrated patients")
    an = sub.add_parser("analyze", parents=[common], help="tests I and II")
    an.add_argument("--summaries-only", nargs="?", const=True, default=None, metavar="CSV",
                    help="classify (n, mean, std) triples directly; without a file the "
                         "shipped cohort statistics are used")
    sub.add_parser("report", parents=[common], help="consolidated report with figures")
    sub.add_parser("run", parents=[common], help="calibrate, uq, analyze and report")
    return ap


def _dispatch(args) -> int:
    cfg = RunConfig.load(args.config).with_overrides(
        args.patients, args.out, args.seed, args.jobs, args.samples_per_beat)
    if args.command == "simulate":
        outputs = run_simulate(cfg, args.params)
        for name, value in outputs.items():
            print(f"{name},{value:.6g}")
        return EXIT_OK
    if args.command == "cohort":
        patients, _ = run_cohort(cfg)
        print(f"wrote {len(patients)} patients to {cfg.output_dir / 'cohort'}")
        return EXIT_OK
    if args.command in ("calibrate", "run"):
        summary = run_calibrate(cfg)
        print(f"calibrated {summary['converged']} of {summary['total']}")
        if summary["converged"] == 0:
            return EXIT_NONE_CONVERGED
        if args.command == "calibrate":
            return EXIT_OK
    if args.command in ("uq", "run"):
        summary = run_uq(cfg)
        print(f"uq on {len(summary['analysed'])} patients, "
              f"{len(summary['failed'])} failed, {len(summary['skipped_unconverged'])} skipped")
        if args.command == "uq":
            return EXIT_OK
    if args.command == "analyze":
        print(run_analyze(cfg, args.summaries_only)["text"], end="")
        return EXIT_OK
    path = run_report(cfg)
    print(f"report written to {path}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except (InputFileError, ContractViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericFailure, NonConvergenceError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
