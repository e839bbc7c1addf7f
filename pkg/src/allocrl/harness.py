"""Training and evaluation harness: runs episodes, computes comparison
metrics, and writes the CSV/SVG artifacts.

A run is fully determined by (RunConfig, seed): the agent seed and every
per-episode environment seed are derived from the master seed, evaluation is
greedy and noise-free, and CSV floats are written with repr so repeated runs
produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from .agents import VARIANTS, make_agent
from .env import EnvConfig, ResourceAllocEnv
from .errors import ConfigurationError, NumericError

COMPARISON_COLUMNS = [
    "variant",
    "seed",
    "under_capacity",
    "over_capacity",
    "at_target",
    "items_performing",
    "resources_utilized",
    "efficiency_percent",
    "mean_eval_reward",
    "status",
]

METRICS_COLUMNS = [
    "under_capacity",
    "over_capacity",
    "at_target",
    "total_items_performing",
    "total_resources_utilized",
    "efficiency_percent",
    "mean_eval_reward",
    "mean_abs_deviation",
]


def _child_seed(master: int, *tag: int) -> int:
    return int(np.random.SeedSequence((int(master),) + tag).generate_state(1)[0])


def efficiency(total_items_performing: float, total_resources_utilized: float) -> float:
    """Percent of utilized resource-periods spent actively serving an item."""
    if total_resources_utilized <= 0:
        return 0.0
    return 100.0 * total_items_performing / total_resources_utilized


@dataclass(frozen=True)
class RunConfig:
    variant_id: int = 8
    env: EnvConfig = field(default_factory=EnvConfig)
    agent_overrides: dict = field(default_factory=dict)
    training_episodes: int = 500
    eval_episodes: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.variant_id not in VARIANTS:
            raise ConfigurationError(f"unknown variant id {self.variant_id!r}")
        if self.training_episodes < 0 or self.eval_episodes < 0:
            raise ConfigurationError("episode counts must be non-negative")


def load_run_config(path) -> RunConfig:
    """Read a RunConfig from JSON mirroring the dataclass field names."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"invalid JSON in {path}: {exc}") from exc
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"unknown RunConfig fields: {sorted(unknown)}")
    if "env" in data:
        data["env"] = EnvConfig.from_dict(data["env"])
    return RunConfig(**data)


@dataclass
class EpisodeRecord:
    episode: int
    cumulative_reward: float
    exploration: float
    mean_loss: float


@dataclass
class TrainingLog:
    records: list

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["episode", "cumulative_reward", "exploration", "mean_loss"])
            for r in self.records:
                writer.writerow(
                    [r.episode, repr(float(r.cumulative_reward)),
                     repr(float(r.exploration)), repr(float(r.mean_loss))]
                )


@dataclass
class MetricsReport:
    """Evaluation aggregates over ``eval_episodes * episode_length`` periods."""

    time_periods_under_capacity: int
    time_periods_over_capacity: int
    time_periods_at_target: int
    total_items_performing: int
    total_resources_utilized: int
    efficiency_percent: float
    mean_eval_reward: float
    mean_abs_deviation: float
    episode_rewards: list
    utilization: list  # (period, items_performing, resources_utilized, unutilized)

    @property
    def total_periods(self) -> int:
        return (self.time_periods_under_capacity + self.time_periods_over_capacity
                + self.time_periods_at_target)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(METRICS_COLUMNS)
            writer.writerow(
                [self.time_periods_under_capacity, self.time_periods_over_capacity,
                 self.time_periods_at_target, self.total_items_performing,
                 self.total_resources_utilized, repr(float(self.efficiency_percent)),
                 repr(float(self.mean_eval_reward)), repr(float(self.mean_abs_deviation))]
            )


class RandomPolicy:
    """Uniform-random action source with the agent selection interface."""

    def __init__(self, num_actions: int, seed: int = 0):
        self.num_actions = num_actions
        self._rng = np.random.Generator(np.random.PCG64(seed))

    def select_action(self, observation, training: bool = False) -> int:
        return int(self._rng.integers(0, self.num_actions))


def train(run_config: RunConfig, seed: int | None = None):
    """Run the training loop and return (agent, TrainingLog).

    Per episode: reset; per step: select action, step the environment, store
    the transition (terminal recorded as False since episodes end by time
    limit only), then one learn step. Target sync happens inside learn_step.
    """
    master = run_config.seed if seed is None else seed
    overrides = dict(run_config.agent_overrides)
    overrides.setdefault("seed", _child_seed(master, 0))
    agent = make_agent(run_config.variant_id, run_config.env, overrides)
    env = ResourceAllocEnv(run_config.env)
    records = []
    for episode in range(run_config.training_episodes):
        obs = env.reset(seed=_child_seed(master, 1, episode))
        total_reward = 0.0
        losses = []
        for step in range(run_config.env.episode_length):
            try:
                action = agent.select_action(obs, training=True)
                result = env.step(action)
                agent.observe(obs, action, result.reward, result.observation,
                              terminal=False)
                loss = agent.learn_step()
            except NumericError as exc:
                raise NumericError(
                    f"{exc} (episode {episode}, step {step})"
                ) from exc
            if loss is not None:
                losses.append(loss)
            total_reward += result.reward
            obs = result.observation
            if result.terminal:
                break
        mean_loss = float(np.mean(losses)) if losses else float("nan")
        records.append(EpisodeRecord(episode, total_reward,
                                     agent.pop_episode_exploration(), mean_loss))
    return agent, TrainingLog(records)


def evaluate(policy, env_config: EnvConfig, eval_episodes: int = 10,
             seed: int = 0) -> MetricsReport:
    """Greedy, noise-free evaluation; aggregates the comparison metrics.

    ``policy`` is anything with ``select_action(obs, training=False)``.
    Never mutates network parameters.
    """
    env = ResourceAllocEnv(env_config)
    target = env_config.target_unutilized
    under = over = at_target = 0
    items_performing = 0
    resources_utilized = 0
    utilization = []
    episode_rewards = []
    abs_dev_sum = 0.0
    period = 0
    for episode in range(eval_episodes):
        obs = env.reset(seed=_child_seed(seed, 2, episode))
        total_reward = 0.0
        for _ in range(env_config.episode_length):
            action = policy.select_action(obs, training=False)
            result = env.step(action)
            info = result.info
            if info["unutilized"] > target:
                under += 1
            elif info["unutilized"] < target:
                over += 1
            else:
                at_target += 1
            items_performing += info["items_performing"]
            resources_utilized += info["resources_utilized"]
            abs_dev_sum += abs(info["unutilized"] - target)
            utilization.append((period, info["items_performing"],
                                info["resources_utilized"], info["unutilized"]))
            period += 1
            total_reward += result.reward
            obs = result.observation
            if result.terminal:
                break
        episode_rewards.append(total_reward)
    mean_eval_reward = float(np.mean(episode_rewards)) if episode_rewards else 0.0
    mean_abs_deviation = abs_dev_sum / period if period else 0.0
    return MetricsReport(
        time_periods_under_capacity=under,
        time_periods_over_capacity=over,
        time_periods_at_target=at_target,
        total_items_performing=items_performing,
        total_resources_utilized=resources_utilized,
        efficiency_percent=efficiency(items_performing, resources_utilized),
        mean_eval_reward=mean_eval_reward,
        mean_abs_deviation=mean_abs_deviation,
        episode_rewards=episode_rewards,
        utilization=utilization,
    )


def run_single(run_config: RunConfig, out_dir=None):
    """Train, evaluate, and optionally write per-run artifacts.

    Returns (agent, TrainingLog, MetricsReport). When ``out_dir`` is given,
    writes metrics.csv, training_log.csv, and the two plot-data CSVs there.
    """
    agent, log = train(run_config)
    report = evaluate(agent, run_config.env, run_config.eval_episodes,
                      seed=_child_seed(run_config.seed, 3))
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        report.write_csv(os.path.join(out_dir, "metrics.csv"))
        log.write_csv(os.path.join(out_dir, "training_log.csv"))
        name = VARIANTS[run_config.variant_id].name
        emit_plot_data({name: log}, {name: report}, out_dir)
    return agent, log, report


def _execute_cell(run_config: RunConfig, out_dir=None) -> dict:
    _, _, report = run_single(run_config, out_dir)
    return {
        "variant": run_config.variant_id,
        "seed": run_config.seed,
        "under_capacity": report.time_periods_under_capacity,
        "over_capacity": report.time_periods_over_capacity,
        "at_target": report.time_periods_at_target,
        "items_performing": report.total_items_performing,
        "resources_utilized": report.total_resources_utilized,
        "efficiency_percent": report.efficiency_percent,
        "mean_eval_reward": report.mean_eval_reward,
        "status": "ok",
    }


@dataclass
class ComparisonTable:
    rows: list

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=COMPARISON_COLUMNS)
            writer.writeheader()
            for row in self.rows:
                out = dict(row)
                for key in ("efficiency_percent", "mean_eval_reward"):
                    if isinstance(out.get(key), float):
                        out[key] = repr(out[key])
                writer.writerow(out)

    def median_row(self, variant_id: int) -> dict | None:
        for row in self.rows:
            if row["variant"] == variant_id and row["seed"] == "median":
                return row
        return None


def make_run_matrix(base: RunConfig, variant_ids, seeds) -> list:
    """One RunConfig per (variant, seed) cell, sharing the base settings."""
    matrix = []
    for variant_id in variant_ids:
        for seed in seeds:
            matrix.append(RunConfig(variant_id, base.env, dict(base.agent_overrides),
                                    base.training_episodes, base.eval_episodes, seed))
    return matrix


def compare_variants(run_matrix, n_jobs: int = 1, out_dir=None) -> ComparisonTable:
    """Run every (variant, seed) cell and tabulate per-run rows plus medians.

    Cell failures are recorded in the row's status and do not abort the rest.
    Rows keep the input order, so permuting the matrix permutes rows only.
    """
    def cell_dir(rc):
        if out_dir is None:
            return None
        return os.path.join(out_dir, f"variant{rc.variant_id}_seed{rc.seed}")

    rows = []
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            futures = [pool.submit(_execute_cell, rc, cell_dir(rc)) for rc in run_matrix]
            for rc, future in zip(run_matrix, futures):
                try:
                    rows.append(future.result())
                except Exception as exc:
                    rows.append(_failure_row(rc, exc))
    else:
        for rc in run_matrix:
            try:
                rows.append(_execute_cell(rc, cell_dir(rc)))
            except Exception as exc:
                rows.append(_failure_row(rc, exc))

    numeric = ["under_capacity", "over_capacity", "at_target", "items_performing",
               "resources_utilized", "efficiency_percent", "mean_eval_reward"]
    seen = []
    for rc in run_matrix:
        if rc.variant_id not in seen:
            seen.append(rc.variant_id)
    median_rows = []
    for variant_id in seen:
        ok = [r for r in rows if r["variant"] == variant_id and r["status"] == "ok"]
        if not ok:
            continue
        median = {"variant": variant_id, "seed": "median", "status": "ok"}
        for key in numeric:
            median[key] = float(np.median([r[key] for r in ok]))
        median_rows.append(median)
    return ComparisonTable(rows + median_rows)


def _failure_row(run_config: RunConfig, exc: Exception) -> dict:
    row = {"variant": run_config.variant_id, "seed": run_config.seed,
           "status": f"{type(exc).__name__}: {exc}"}
    for key in ("under_capacity", "over_capacity", "at_target", "items_performing",
                "resources_utilized", "efficiency_percent", "mean_eval_reward"):
        row[key] = ""
    return row


def emit_plot_data(logs: dict, reports: dict, out_dir, svg: bool = False) -> None:
    """Write exploration_vs_reward.csv and utilization_timeseries.csv.

    ``logs`` maps a variant label to a TrainingLog, ``reports`` to a
    MetricsReport. With ``svg=True`` also renders simple line charts.
    """
    os.makedirs(out_dir, exist_ok=True)
    expl_path = os.path.join(out_dir, "exploration_vs_reward.csv")
    with open(expl_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "episode", "exploration_measure", "cumulative_reward"])
        for label, log in logs.items():
            for r in log.records:
                writer.writerow([label, r.episode, repr(float(r.exploration)),
                                 repr(float(r.cumulative_reward))])
    util_path = os.path.join(out_dir, "utilization_timeseries.csv")
    with open(util_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "period", "items_performing",
                         "resources_utilized", "unutilized"])
        for label, report in reports.items():
            for period, performing, utilized, unutilized in report.utilization:
                writer.writerow([label, period, performing, utilized, unutilized])
    if svg:
        reward_series = {
            str(label): [(r.episode, r.cumulative_reward) for r in log.records]
            for label, log in logs.items() if log.records
        }
        util_series = {
            str(label): [(row[0], row[2]) for row in report.utilization]
            for label, report in reports.items() if report.utilization
        }
        if reward_series:
            write_line_chart_svg(reward_series, "episode", "cumulative reward",
                                 os.path.join(out_dir, "exploration_vs_reward.svg"))
        if util_series:
            write_line_chart_svg(util_series, "period", "resources utilized",
                                 os.path.join(out_dir, "utilization_timeseries.svg"))


_SVG_PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                "#8c564b", "#e377c2", "#7f7f7f"]


def write_line_chart_svg(series: dict, x_label: str, y_label: str, path,
                         width: int = 720, height: int = 400) -> None:
    """Minimal multi-series polyline chart, no plotting dependency."""
    margin = 50
    xs = [x for points in series.values() for x, _ in points]
    ys = [y for points in series.values() for _, y in points]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    x_span = (x_hi - x_lo) or 1.0
    y_span = (y_hi - y_lo) or 1.0

    def sx(x):
        return margin + (x - x_lo) / x_span * (width - 2 * margin)

    def sy(y):
        return height - margin - (y - y_lo) / y_span * (height - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" '
        f'stroke="black"/>',
        f'<text x="{width / 2:.0f}" y="{height - 10}" text-anchor="middle" '
        f'font-size="12">{x_label}</text>',
        f'<text x="14" y="{height / 2:.0f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {height / 2:.0f})">{y_label}</text>',
    ]
    for i, (label, points) in enumerate(series.items()):
        color = _SVG_PALETTE[i % len(_SVG_PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in points)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        parts.append(f'<text x="{width - margin + 4}" y="{margin + 14 * i}" '
                     f'font-size="11" fill="{color}">{label}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))
