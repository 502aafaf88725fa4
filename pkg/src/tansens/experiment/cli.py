"""Command-line entry point: ``tansens {train,correlate,bound,verify,plot}``.

Exit status: 0 on success, 1 when a checked property fails, 2 on
configuration or I/O errors.
"""

import argparse
import json
import logging
import sys

from ..data import DataFormatError
from ..training import StepSizeError
from .config import ConfigError, load_config
from .plot import emit_plot
from .runs import run_bound, run_correlate, run_train
from .verify import run_suite

log = logging.getLogger("tansens")


def _config_args(p):
    p.add_argument("-c", "--config", help="key = value config file")
    p.add_argument("-s", "--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("-o", "--out-dir", help="output directory (overrides out_dir)")


def build_parser():
    parser = argparse.ArgumentParser(prog="tansens", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network and write the trajectory CSV + checkpoints")
    _config_args(p)

    p = sub.add_parser("correlate", help="gap vs test-set sensitivity norm over checkpoints")
    _config_args(p)
    p.add_argument("--svg", help="also write an SVG plot here")

    p = sub.add_parser("bound", help="assemble the generalization bound for a finished train run")
    p.add_argument("run_dir")
    p.add_argument("-s", "--set", action="append", default=[], metavar="KEY=VALUE")

    p = sub.add_parser("verify", help="run the property suite on random small networks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=5)

    p = sub.add_parser("plot", help="render a correlation CSV as SVG")
    p.add_argument("csv")
    p.add_argument("svg")
    p.add_argument("--divisor", type=float, help="fixed display divisor for the norm series")
    return parser


def _load(args):
    overrides = list(args.set)
    if getattr(args, "out_dir", None):
        overrides.append(f"out_dir={args.out_dir}")
    return load_config(args.config, overrides)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "train":
            rec = run_train(_load(args))
            print(f"wrote {len(rec.steps)} checkpoints; final epsilon distance {rec.epsilon_distance[-1]:.6g}")
        elif args.command == "correlate":
            _, summary = run_correlate(_load(args), args.svg)
            for c, r in sorted(summary.items()):
                print(f"class {c}: r(gap, norm) = {r['r_gap']:.4f}  r(mean gap, norm) = {r['r_mean_gap']:.4f}")
        elif args.command == "bound":
            for rep in run_bound(args.run_dir, args.set):
                flags = ",".join(rep.flags) or "-"
                print(f"class {rep.out_idx}: rhs = {rep.rhs:.6g}  observed gap = {rep.observed_gap:.6g}  "
                      f"holds = {rep.holds}  flags = {flags}")
        elif args.command == "verify":
            results = run_suite(args.seed, args.trials)
            for r in results:
                print(json.dumps(r.as_dict()))
            if any(r.status == "fail" for r in results):
                return 1
        elif args.command == "plot":
            emit_plot(args.csv, args.svg, args.divisor)
    except (ConfigError, DataFormatError, StepSizeError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"tansens: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        if args.command == "plot":
            print(f"tansens: error: {exc}", file=sys.stderr)
            return 2
        raise
    return 0


if __name__ == "__main__":
    sys.exit(main())
