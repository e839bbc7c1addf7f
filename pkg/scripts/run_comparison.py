#!/usr/bin/env python3
"""Train every variant over a seed list and write the comparison artifacts.

Example:
    python scripts/run_comparison.py --episodes 500 --seeds 0 1 2 3 4 \
        --out results/full --jobs 2
"""

import argparse
import os
import sys

from allocrl.agents import VARIANTS
from allocrl.harness import (
    RunConfig,
    compare_variants,
    emit_plot_data,
    make_run_matrix,
    run_single,
)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--episodes", type=int, default=500)
    parser.add_argument("--eval-episodes", type=int, default=10)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    parser.add_argument("--variants", type=int, nargs="+", default=sorted(VARIANTS))
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--out", default="results/comparison")
    args = parser.parse_args()

    base = RunConfig(variant_id=args.variants[0], training_episodes=args.episodes,
                     eval_episodes=args.eval_episodes)
    matrix = make_run_matrix(base, args.variants, args.seeds)
    table = compare_variants(matrix, n_jobs=args.jobs, out_dir=args.out)
    os.makedirs(args.out, exist_ok=True)
    table.write_csv(os.path.join(args.out, "comparison.csv"))

    # one representative run per variant for the figure data
    logs, reports = {}, {}
    for variant_id in args.variants:
        rc = RunConfig(variant_id=variant_id, training_episodes=args.episodes,
                       eval_episodes=args.eval_episodes, seed=args.seeds[0])
        _, log, report = run_single(rc)
        name = VARIANTS[variant_id].name
        logs[name], reports[name] = log, report
    emit_plot_data(logs, reports, args.out, svg=True)

    for row in table.rows:
        if row["seed"] == "median":
            name = VARIANTS[row["variant"]].name
            print(f"{name:20s} median efficiency {row['efficiency_percent']:6.2f}% "
                  f"mean eval reward {row['mean_eval_reward']:8.2f}")
    print(f"artifacts under {args.out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
