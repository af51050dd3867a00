"""Command-line entry point (``respdistill``).

Exit codes: 0 success, 2 config error, 3 data error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from ..exceptions import RespDistillError
from ..metrics import fmt2
from ..softlabel import SoftLabelPolicy
from . import runner
from .config import DEFAULT_CONFIG, ExperimentConfig, load_config

log = logging.getLogger("respdistill")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_IO = 0, 2, 3, 4


def _global_options(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", metavar="PATH", default=default, help="INI experiment config")
    parser.add_argument("--seed", type=int, metavar="INT", default=default,
                        help="run a single seed instead of the configured list")
    parser.add_argument("--out", metavar="DIR", default=default, help="output directory")
    parser.add_argument("--threads", type=int, metavar="INT", default=argparse.SUPPRESS if suppress else 1,
                        help="concurrent training runs")
    parser.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser():
    parser = argparse.ArgumentParser(prog="respdistill", description="Soft-label ensemble distillation toolkit.")
    _global_options(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help):
        p = sub.add_parser(name, help=help)
        _global_options(p, suppress=True)
        return p

    p = add("gen-data", "write the synthetic dataset (with split tags) to CSV")
    p.add_argument("--csv", metavar="PATH", help="destination (default OUT/data.csv)")
    p = add("train-teachers", "train N hard-label teachers and write the logit bank")
    p.add_argument("--count", type=int, help="override the configured teacher count")
    p = add("distill", "train and evaluate one student")
    p.add_argument("--policy", default="mean:5", help="e.g. hard, mean:5, random:15, curated:5, noised_fixed:0.1")
    p = add("ensemble-eval", "score the teacher ensemble for each k")
    p.add_argument("--k", type=int, nargs="+", help="teacher counts (default 1..N)")
    add("second-gen", "compare first- and second-generation ensembles over paired trials")
    add("sweep-k", "student Score vs teacher count for each sweep policy")
    add("ablate", "run the eight soft-label ablation arms")
    add("report", "merge OUT/runs/*/result.json into report.csv and report.json")
    p = add("plot", "render an SVG from a sweep CSV")
    p.add_argument("--csv", metavar="PATH", help="sweep CSV (default OUT/sweep/sweep.csv)")
    p.add_argument("--svg", metavar="PATH", help="destination SVG")
    add("show-config", "print the default config file")
    return parser


def _config(args):
    config = load_config(args.config) if args.config else ExperimentConfig()
    return config.with_overrides(seed=args.seed, output=args.out)


def dispatch(args):
    if args.command == "show-config":
        sys.stdout.write(DEFAULT_CONFIG)
        return
    config = _config(args)
    out = config.output
    if args.command == "gen-data":
        print(runner.cmd_gen_data(config, args.csv))
    elif args.command == "train-teachers":
        bank = runner.cmd_train_teachers(config, args.threads, args.count)
        for entry in bank.manifest:
            print(f"teacher {entry['teacher_id']:>3}  Score {fmt2(entry['score'])}")
        print(f"bank written to {out}/bank")
    elif args.command == "distill":
        policy = SoftLabelPolicy.parse(args.policy)
        for seed in config.seeds:
            r = runner.cmd_distill(config, policy, seed, args.threads)
            print(f"{r.run_id}: {r.metrics if r.metrics else 'no metrics'} final_loss={r.final_loss:.4f} [{r.status}]")
    elif args.command == "ensemble-eval":
        for row in runner.cmd_ensemble_eval(config, args.k):
            print(f"k={row['k']:>3}  Sp={fmt2(row['sp'])} Se={fmt2(row['se'])} Score={fmt2(row['score'])}"
                  f"  val_loss={row['val_loss']:.4f}")
    elif args.command == "second-gen":
        s = runner.cmd_second_gen(config, args.threads)
        print(f"first-gen mean Score {fmt2(s['first_gen_mean_score'])}, "
              f"second-gen mean Score {fmt2(s['second_gen_mean_score'])}")
    elif args.command == "sweep-k":
        runner.cmd_sweep_k(config, args.threads)
        print(f"sweep written to {out}/sweep")
    elif args.command == "ablate":
        rows, _ = runner.cmd_ablate(config, args.threads)
        for row in rows:
            agg = row["aggregate"]
            print(f"{row['arm']:<20} {row['status']:<9} {agg if agg else ''}")
    elif args.command == "report":
        results, _ = runner.cmd_report(out)
        print(f"{len(results)} runs merged into {out}/report.csv")
    elif args.command == "plot":
        print(runner.cmd_plot(args.csv or f"{out}/sweep/sweep.csv", args.svg))


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        dispatch(args)
    except RespDistillError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
