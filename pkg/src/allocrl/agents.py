"""Deep Q-learning agent variants built from orthogonal switches.

Eight named variants combine four switches: a dueling head, noisy layers in
place of epsilon-greedy exploration, proportional prioritized replay, and a
bootstrapped ("bagging") ensemble whose heads vote on the executed action.
All variants use double-Q targets (policy net selects the next action, a
periodically synchronized target net evaluates it) and Huber TD regression.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields

import numpy as np

from .env import EnvConfig
from .errors import ConfigurationError, NumericError
from .nets import (
    NetworkParams,
    NetworkSpec,
    _backward_from_caches,
    _forward_cached,
    clone_params,
    adam_step,
    forward,
    init_params,
    load_params,
    noise_magnitude,
    sample_noise,
    save_params,
)
from .replay import MaskedMemory, PrioritizedMemory, Transition, UniformMemory


@dataclass(frozen=True)
class VariantSpec:
    variant_id: int
    name: str
    dueling: bool
    noisy: bool
    prioritized: bool
    bagging: bool


VARIANTS = {
    1: VariantSpec(1, "ddqn", False, False, False, False),
    2: VariantSpec(2, "d3qn", True, False, False, False),
    3: VariantSpec(3, "noisy_d3qn", True, True, False, False),
    4: VariantSpec(4, "per_ddqn", False, False, True, False),
    5: VariantSpec(5, "per_noisy_d3qn", True, True, True, False),
    6: VariantSpec(6, "bagging_d3qn", True, False, False, True),
    7: VariantSpec(7, "noisy_bagging", False, True, False, True),
    8: VariantSpec(8, "noisy_bagging_d3qn", True, True, False, True),
}


@dataclass
class AgentConfig:
    """Hyperparameters and variant switches for one agent."""

    dueling: bool = False
    noisy: bool = False
    prioritized: bool = False
    bagging: bool = False
    gamma: float = 0.99
    lr: float = 1e-3
    batch_size: int = 32
    target_sync_period: int = 1000
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 10_000
    ensemble_size: int = 5
    aggregator: str = "majority"  # "majority" | "random_head"
    mask_prob: float = 0.5
    memory_capacity: int = 10_000
    warmup: int = 500
    per_alpha: float = 0.6
    per_beta_start: float = 0.4
    per_beta_end: float = 1.0
    per_beta_steps: int = 50_000
    per_epsilon: float = 1e-6
    hidden_dims: tuple = (64, 64)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigurationError("gamma must lie in [0, 1)")
        if self.aggregator not in ("majority", "random_head"):
            raise ConfigurationError(f"unknown aggregator {self.aggregator!r}")
        if self.ensemble_size < 1:
            raise ConfigurationError("ensemble_size must be at least 1")
        if not 0.0 <= self.mask_prob <= 1.0:
            raise ConfigurationError("mask_prob must lie in [0, 1]")
        self.hidden_dims = tuple(self.hidden_dims)

    @classmethod
    def for_variant(cls, variant_id: int, **overrides) -> "AgentConfig":
        try:
            variant = VARIANTS[int(variant_id)]
        except (KeyError, TypeError, ValueError):
            raise ConfigurationError(f"unknown variant id {variant_id!r}") from None
        merged = {
            "dueling": variant.dueling,
            "noisy": variant.noisy,
            "prioritized": variant.prioritized,
            "bagging": variant.bagging,
        }
        known = {f.name for f in fields(cls)}
        unknown = set(overrides) - known
        if unknown:
            raise ConfigurationError(f"unknown agent overrides: {sorted(unknown)}")
        merged.update(overrides)
        return cls(**merged)


class Head:
    """One policy/target network pair."""

    def __init__(self, policy: NetworkParams, target: NetworkParams):
        self.policy = policy
        self.target = target


def _huber(delta: np.ndarray) -> np.ndarray:
    # 0.5 d^2 inside the unit interval, |d| - 0.5 outside
    a = np.abs(delta)
    clipped = np.minimum(a, 1.0)
    return 0.5 * clipped * clipped + np.maximum(a - 1.0, 0.0)


def aggregate_votes(proposals, mode: str, rng: np.random.Generator) -> int:
    """Combine per-head action proposals into one executed action.

    majority: modal action, ties toward the lowest action index.
    random_head: the proposal of one uniformly chosen head.
    """
    proposals = list(proposals)
    if not proposals:
        raise ValueError("aggregate_votes requires at least one proposal")
    if mode == "majority":
        return int(np.bincount(proposals).argmax())
    if mode == "random_head":
        return int(proposals[rng.integers(0, len(proposals))])
    raise ValueError(f"unknown aggregator mode {mode!r}")


def double_q_targets(policy: NetworkParams, target: NetworkParams, rewards,
                     next_states, terminals, gamma: float) -> np.ndarray:
    """y = r + gamma * (1 - terminal) * Q_target(s', argmax_a Q_policy(s', a)).

    Noise-free forward passes on both networks.
    """
    q_select = forward(policy, next_states, None)
    q_eval = forward(target, next_states, None)
    if not (np.all(np.isfinite(q_select)) and np.all(np.isfinite(q_eval))):
        raise NumericError("non-finite Q values while computing targets")
    best = q_select.argmax(axis=1)
    rewards = np.asarray(rewards, dtype=float)
    terminals = np.asarray(terminals, dtype=float)
    return rewards + gamma * (1.0 - terminals) * q_eval[np.arange(len(best)), best]


def _batch_arrays(batch):
    states = np.stack([t.state for t in batch])
    actions = np.array([t.action for t in batch], dtype=int)
    rewards = np.array([t.reward for t in batch], dtype=float)
    next_states = np.stack([t.next_state for t in batch])
    terminals = np.array([1.0 if t.terminal else 0.0 for t in batch])
    return states, actions, rewards, next_states, terminals


class DqnAgent:
    """One agent instance: networks, replay memory, and selection logic.

    Owns independent deterministic random streams for parameter init,
    per-head noise, action selection, bootstrap masks, and batch sampling,
    all derived from ``config.seed``.
    """

    def __init__(self, config: AgentConfig, input_dim: int, num_actions: int):
        self.config = config
        self.input_dim = input_dim
        self.num_actions = num_actions
        self.spec = NetworkSpec(
            input_dim, num_actions, config.hidden_dims, config.dueling, config.noisy
        )
        root = np.random.SeedSequence(config.seed)
        init_ss, noise_ss, action_ss, mask_ss, sample_ss = root.spawn(5)
        k = config.ensemble_size if config.bagging else 1
        self.heads = []
        for child in init_ss.spawn(k):
            policy = init_params(self.spec, np.random.Generator(np.random.PCG64(child)))
            self.heads.append(Head(policy, clone_params(policy)))
        self.noise_rngs = [
            np.random.Generator(np.random.PCG64(child)) for child in noise_ss.spawn(k)
        ]
        self.action_rng = np.random.Generator(np.random.PCG64(action_ss))
        self.sample_rng = np.random.Generator(np.random.PCG64(sample_ss))
        if config.bagging:
            self.memory = MaskedMemory(
                config.memory_capacity, k, config.mask_prob,
                np.random.Generator(np.random.PCG64(mask_ss)),
            )
        elif config.prioritized:
            self.memory = PrioritizedMemory(config.memory_capacity)
        else:
            self.memory = UniformMemory(config.memory_capacity)
        self.learn_steps = 0
        self.env_steps = 0
        self.epsilon_branch_hits = 0
        self._noise_sum = 0.0
        self._noise_count = 0
        self._disagree_sum = 0.0
        self._disagree_count = 0

    @property
    def num_heads(self) -> int:
        return len(self.heads)

    @property
    def epsilon(self) -> float:
        c = self.config
        frac = min(self.env_steps / max(c.eps_decay_steps, 1), 1.0)
        return c.eps_start + (c.eps_end - c.eps_start) * frac

    @property
    def per_beta(self) -> float:
        c = self.config
        frac = min(self.learn_steps / max(c.per_beta_steps, 1), 1.0)
        return c.per_beta_start + (c.per_beta_end - c.per_beta_start) * frac

    def select_action(self, observation, training: bool = True) -> int:
        """Greedy action with the variant's exploration mechanism.

        Non-noisy variants are epsilon-greedy while training; noisy variants
        draw one fresh noise sample per head per call while training and run
        noise-free when evaluating. Bagging variants aggregate per-head
        argmax votes (majority vote when evaluating). Argmax ties break
        toward the lowest action index.
        """
        obs = np.asarray(observation, dtype=float)
        if obs.shape != (self.input_dim,):
            raise ValueError(f"observation must have shape ({self.input_dim},)")
        c = self.config
        if training and not c.noisy:
            self.epsilon_branch_hits += 1
            eps = self.epsilon
            self.env_steps += 1
            if self.action_rng.random() < eps:
                return int(self.action_rng.integers(0, self.num_actions))
        elif training:
            self.env_steps += 1
        proposals = []
        for k, head in enumerate(self.heads):
            noise = None
            if c.noisy and training:
                noise = sample_noise(self.spec, self.noise_rngs[k])
                self._noise_sum += noise_magnitude(head.policy, noise)
                self._noise_count += 1
            q = forward(head.policy, obs, noise)
            proposals.append(int(np.argmax(q)))
        if c.bagging:
            mode = c.aggregator if training else "majority"
            action = aggregate_votes(proposals, mode, self.action_rng)
            if training:
                agree = sum(1 for p in proposals if p == action)
                self._disagree_sum += 1.0 - agree / len(proposals)
                self._disagree_count += 1
        else:
            action = proposals[0]
        return action

    def observe(self, state, action, reward, next_state, terminal=False) -> None:
        """Store one transition in the variant's replay memory."""
        self.memory.push(
            Transition(np.asarray(state, dtype=float), int(action), float(reward),
                       np.asarray(next_state, dtype=float), bool(terminal))
        )

    def compute_targets(self, batch, head: int = 0) -> np.ndarray:
        """Double-Q targets for a batch of transitions using one head's nets."""
        _, _, rewards, next_states, terminals = _batch_arrays(batch)
        h = self.heads[head]
        return double_q_targets(h.policy, h.target, rewards, next_states,
                                terminals, self.config.gamma)

    def _sample_batch(self, head: int):
        c = self.config
        if c.bagging:
            sampled = self.memory.sample_for_head(head, c.batch_size, self.sample_rng)
            if sampled is None:
                return None
            idx, batch = sampled
            return idx, batch, np.ones(len(batch))
        if c.prioritized:
            sampled = self.memory.sample(c.batch_size, self.per_beta, self.sample_rng)
            if sampled is None:
                return None
            return sampled
        sampled = self.memory.sample(c.batch_size, self.sample_rng)
        if sampled is None:
            return None
        idx, batch = sampled
        return idx, batch, np.ones(len(batch))

    def learn_step(self):
        """One gradient step per head; returns the mean loss or None if not ready.

        Samples per the variant's memory, regresses Q(s, a) toward the
        double-Q target under a Huber loss (importance-weighted when
        prioritized), refreshes priorities from the new TD errors, and
        copies policy to target every ``target_sync_period`` learn steps.
        """
        c = self.config
        if len(self.memory) < max(c.warmup, c.batch_size):
            return None
        losses = []
        for k, head in enumerate(self.heads):
            sampled = self._sample_batch(k)
            if sampled is None:
                continue
            idx, batch, weights = sampled
            states, actions, rewards, next_states, terminals = _batch_arrays(batch)
            targets = double_q_targets(head.policy, head.target, rewards,
                                       next_states, terminals, c.gamma)
            noise = sample_noise(self.spec, self.noise_rngs[k]) if c.noisy else None
            q, caches = _forward_cached(head.policy, states, noise)
            rows = np.arange(len(batch))
            delta = targets - q[rows, actions]
            loss = float(np.mean(weights * _huber(delta)))
            if not np.isfinite(loss):
                raise NumericError("non-finite TD loss")
            out_grad = np.zeros_like(q)
            out_grad[rows, actions] = -(weights / len(batch)) * np.clip(delta, -1.0, 1.0)
            grads = _backward_from_caches(head.policy, caches, out_grad)
            adam_step(head.policy, grads, lr=c.lr)
            if c.prioritized:
                self.memory.update_priorities(idx, np.abs(delta), c.per_alpha,
                                              c.per_epsilon)
            losses.append(loss)
        if not losses:
            return None
        self.learn_steps += 1
        if self.learn_steps % c.target_sync_period == 0:
            for head in self.heads:
                head.target = clone_params(head.policy)
        return float(np.mean(losses))

    def pop_episode_exploration(self) -> float:
        """Exploration measure accumulated since the last call.

        Vote-disagreement rate for bagging variants, mean noise magnitude for
        noisy non-bagging variants, current epsilon otherwise.
        """
        c = self.config
        if c.bagging:
            value = self._disagree_sum / self._disagree_count if self._disagree_count else 0.0
        elif c.noisy:
            value = self._noise_sum / self._noise_count if self._noise_count else 0.0
        else:
            value = self.epsilon
        self._noise_sum = self._noise_count = 0
        self._disagree_sum = self._disagree_count = 0
        return float(value)

    def save_checkpoint(self, directory) -> None:
        """One JSON tensor file per head policy/target plus agent metadata."""
        os.makedirs(directory, exist_ok=True)
        meta = {
            "config": asdict(self.config) | {"hidden_dims": list(self.config.hidden_dims)},
            "input_dim": self.input_dim,
            "num_actions": self.num_actions,
            "learn_steps": self.learn_steps,
            "env_steps": self.env_steps,
        }
        with open(os.path.join(directory, "agent.json"), "w") as fh:
            json.dump(meta, fh)
        for k, head in enumerate(self.heads):
            save_params(head.policy, os.path.join(directory, f"head{k}_policy.json"))
            save_params(head.target, os.path.join(directory, f"head{k}_target.json"))


def load_checkpoint(directory) -> DqnAgent:
    """Rebuild an agent from ``save_checkpoint`` output.

    Parameters, optimizer state, and counters are restored; exploration and
    sampling random streams restart from the configured seed.
    """
    with open(os.path.join(directory, "agent.json")) as fh:
        meta = json.load(fh)
    config_data = dict(meta["config"])
    config_data["hidden_dims"] = tuple(config_data["hidden_dims"])
    agent = DqnAgent(AgentConfig(**config_data), meta["input_dim"], meta["num_actions"])
    for k, head in enumerate(agent.heads):
        head.policy = load_params(os.path.join(directory, f"head{k}_policy.json"))
        head.target = load_params(os.path.join(directory, f"head{k}_target.json"))
    agent.learn_steps = int(meta["learn_steps"])
    agent.env_steps = int(meta["env_steps"])
    return agent


def make_agent(variant_id: int, env_config: EnvConfig, overrides=None) -> DqnAgent:
    """Agent for one of the eight named variants, sized to the environment."""
    config = AgentConfig.for_variant(variant_id, **(overrides or {}))
    return DqnAgent(config, env_config.observation_dim, env_config.num_actions)
