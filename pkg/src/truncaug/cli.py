"""Command line interface.

    truncaug verify|solve|simulate|study|ctmc-study --config cfg.json
             [--seed N] [--out DIR]

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
The TRUNCAUG_THREADS environment variable bounds the worker pool and
TRUNCAUG_NUMBA=0 selects the pure-numpy kernel lane.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import experiments as exp
from .errors import ConfigError, NumericalError, TruncaugError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="truncaug",
        description="Stationary distributions by truncation-augmentation: "
                    "exact solves, assumption verification, and regenerative "
                    "simulation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment JSON file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the simulation seed")

    p_verify = sub.add_parser("verify", help="check drift/minorization/"
                                             "r-regularity certificates")
    common(p_verify)
    p_solve = sub.add_parser("solve", help="exact stationary solve at a level")
    common(p_solve)
    p_solve.add_argument("--level", type=int, default=None)
    p_sim = sub.add_parser("simulate", help="regenerative cycle simulation")
    common(p_sim)
    p_sim.add_argument("--cycles", type=int, default=None)
    p_sim.add_argument("--level", type=int, default=None)
    p_study = sub.add_parser("study", help="convergence study over levels")
    common(p_study)
    p_cstudy = sub.add_parser("ctmc-study",
                              help="convergence study for a jump process")
    common(p_cstudy)
    p_cross = sub.add_parser("cross-validate",
                             help="solver versus simulation comparison")
    common(p_cross)
    return parser


def _emit(doc: dict, outdir: str | None, filename: str) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True, default=str)
    print(text)
    if outdir:
        os.makedirs(outdir, exist_ok=True)
        with open(os.path.join(outdir, filename), "w") as fh:
            fh.write(text + "\n")


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = exp.load_config(args.config)
        if args.seed is not None:
            cfg.simulation["seed"] = int(args.seed)
        if args.command == "verify":
            report = exp.run_verification(cfg)
            _emit(report, args.out, "verify.json")
            worst = report["drift"]
            print(f"drift: {'PASS' if worst['passed'] else 'FAIL'} "
                  f"(worst slack {worst['worst_slack']:.3e} "
                  f"at state {worst['worst_state']})", file=sys.stderr)
        elif args.command == "solve":
            report = exp.run_solve(cfg, level=args.level)
            _emit(report, args.out, "solve.json")
        elif args.command == "simulate":
            if args.cycles is not None:
                cfg.simulation["cycles"] = args.cycles
            if args.level is not None:
                cfg.simulation["level"] = args.level
            report = exp.run_simulation(cfg)
            _emit(report, args.out, "simulate.json")
        elif args.command in ("study", "ctmc-study"):
            if args.command == "ctmc-study" and not cfg.model.is_ctmc:
                raise ConfigError("ctmc-study needs a rate-kernel model")
            report = exp.run_convergence_study(cfg)
            if args.out:
                exp.write_study_outputs(report, cfg.outputs, args.out)
            print("\n".join(exp.study_csv_lines(report)))
        elif args.command == "cross-validate":
            report = exp.run_cross_validation(cfg)
            _emit(report, args.out, "cross_validate.json")
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except NumericalError as err:
        print(f"numerical failure: {type(err).__name__}: {err}", file=sys.stderr)
        return 3
    except TruncaugError as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
