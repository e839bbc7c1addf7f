"""Command-line harness.

Subcommands:
  run      train one variant, evaluate it, and write per-run artifacts
  compare  run a variant x seed matrix and write comparison.csv
  plot     render SVG charts from previously written plot-data CSVs

Exit codes: 0 success, 1 configuration error, 2 numeric error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

from .agents import VARIANTS
from .errors import ConfigurationError, NumericError
from .harness import (
    RunConfig,
    compare_variants,
    load_run_config,
    make_run_matrix,
    run_single,
    write_line_chart_svg,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigurationError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="allocrl", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train and evaluate one variant")
    run.add_argument("--variant", type=int, help="variant id in 1..8")
    run.add_argument("--seed", type=int, help="master seed for the run")
    run.add_argument("--episodes", type=int, help="training episodes")
    run.add_argument("--config", help="JSON file mirroring RunConfig fields")
    run.add_argument("--out", required=True, help="output directory")

    compare = sub.add_parser("compare", help="run a variant x seed matrix")
    compare.add_argument("--variants", default="all",
                         help="'all' or comma-separated variant ids")
    compare.add_argument("--seeds", required=True,
                         help="comma-separated seed list")
    compare.add_argument("--episodes", type=int, help="training episodes per cell")
    compare.add_argument("--config", help="JSON file mirroring RunConfig fields")
    compare.add_argument("--jobs", type=int, default=1,
                         help="parallel worker processes")
    compare.add_argument("--out", required=True, help="output directory")

    plot = sub.add_parser("plot", help="render SVG charts from plot-data CSVs")
    plot.add_argument("--in", dest="in_dir", required=True,
                      help="directory holding the plot-data CSVs")
    plot.add_argument("--out", required=True, help="directory for the SVGs")
    return parser


def _base_config(args) -> RunConfig:
    config = load_run_config(args.config) if args.config else RunConfig()
    updates = {}
    if getattr(args, "variant", None) is not None:
        updates["variant_id"] = args.variant
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "episodes", None) is not None:
        updates["training_episodes"] = args.episodes
    if updates:
        config = RunConfig(
            variant_id=updates.get("variant_id", config.variant_id),
            env=config.env,
            agent_overrides=config.agent_overrides,
            training_episodes=updates.get("training_episodes", config.training_episodes),
            eval_episodes=config.eval_episodes,
            seed=updates.get("seed", config.seed),
        )
    return config


def _cmd_run(args) -> None:
    config = _base_config(args)
    _, _, report = run_single(config, out_dir=args.out)
    print(f"variant {config.variant_id} seed {config.seed}: "
          f"efficiency {report.efficiency_percent:.1f}% "
          f"mean eval reward {report.mean_eval_reward:.2f}")


def _parse_variants(text: str) -> list:
    if text.strip().lower() == "all":
        return sorted(VARIANTS)
    try:
        ids = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigurationError(f"bad variant list {text!r}") from None
    for v in ids:
        if v not in VARIANTS:
            raise ConfigurationError(f"unknown variant id {v}")
    return ids


def _cmd_compare(args) -> None:
    base = _base_config(args)
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise ConfigurationError(f"bad seed list {args.seeds!r}") from None
    if not seeds:
        raise ConfigurationError("at least one seed is required")
    matrix = make_run_matrix(base, _parse_variants(args.variants), seeds)
    table = compare_variants(matrix, n_jobs=max(args.jobs, 1), out_dir=args.out)
    os.makedirs(args.out, exist_ok=True)
    table.write_csv(os.path.join(args.out, "comparison.csv"))
    for row in table.rows:
        if row["seed"] == "median":
            print(f"variant {row['variant']} median efficiency "
                  f"{row['efficiency_percent']:.1f}%")


def _read_plot_csv(path, label_col, x_col, y_col) -> dict:
    series: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            series.setdefault(row[label_col], []).append(
                (float(row[x_col]), float(row[y_col]))
            )
    return series


def _cmd_plot(args) -> None:
    os.makedirs(args.out, exist_ok=True)
    made_any = False
    expl = os.path.join(args.in_dir, "exploration_vs_reward.csv")
    if os.path.exists(expl):
        series = _read_plot_csv(expl, "variant", "episode", "cumulative_reward")
        if series:
            write_line_chart_svg(series, "episode", "cumulative reward",
                                 os.path.join(args.out, "exploration_vs_reward.svg"))
            made_any = True
    util = os.path.join(args.in_dir, "utilization_timeseries.csv")
    if os.path.exists(util):
        series = _read_plot_csv(util, "variant", "period", "resources_utilized")
        if series:
            write_line_chart_svg(series, "period", "resources utilized",
                                 os.path.join(args.out, "utilization_timeseries.svg"))
            made_any = True
    if not made_any:
        raise ConfigurationError(f"no plot-data CSVs found under {args.in_dir}")


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "run":
            _cmd_run(args)
        elif args.command == "compare":
            _cmd_compare(args)
        elif args.command == "plot":
            _cmd_plot(args)
        return 0
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
