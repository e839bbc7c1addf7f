#!/usr/bin/env python3
"""Train one variant, evaluate it against a random-policy baseline, and
write the per-run artifacts.

Example:
    python scripts/train_single.py --variant 8 --episodes 500 --seed 0 \
        --out results/v8
"""

import argparse
import sys

from allocrl.env import EnvConfig
from allocrl.harness import (
    RandomPolicy,
    RunConfig,
    _child_seed,
    evaluate,
    run_single,
)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--variant", type=int, default=8)
    parser.add_argument("--episodes", type=int, default=500)
    parser.add_argument("--eval-episodes", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="results/single")
    args = parser.parse_args()

    rc = RunConfig(variant_id=args.variant, training_episodes=args.episodes,
                   eval_episodes=args.eval_episodes, seed=args.seed)
    agent, log, report = run_single(rc, out_dir=args.out)

    env_cfg = EnvConfig()
    eval_seed = _child_seed(args.seed, 3)
    baseline = evaluate(RandomPolicy(env_cfg.num_actions, seed=_child_seed(args.seed, 4)),
                        env_cfg, args.eval_episodes, seed=eval_seed)
    print(f"variant {args.variant}: mean |unutilized-target| "
          f"{report.mean_abs_deviation:.3f} vs random {baseline.mean_abs_deviation:.3f} "
          f"(ratio {report.mean_abs_deviation / baseline.mean_abs_deviation:.2f})")
    print(f"efficiency {report.efficiency_percent:.1f}%  "
          f"mean eval reward {report.mean_eval_reward:.1f}  "
          f"artifacts under {args.out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
