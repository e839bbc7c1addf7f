"""Discrete-time simulator of a resource pool serving an uncertain item population.

A fixed set of resources serves items that arrive stochastically, wait in a
queue, hold one resource each for a random duration, and occasionally abandon
their slot mid-hold (a change request). A change request freezes the vacated
slot for a reallocation delay and sends the item back to the head of the
queue, eligible again only after that delay.

Every step applies five phases in a fixed order:

1. allocate  - assign up to `action` eligible waiting items (FIFO) to free
               slots in ascending slot index; each assignment draws a hold
               duration of min_hold plus a geometric tail.
2. advance   - decrement hold/cooldown counters; expired holds release the
               item from the system; each still-held item independently
               issues a change request with ``change_request_prob``.
3. arrive    - append a Poisson batch of new items to the queue tail,
               dropping (and counting) overflow beyond ``max_queue``.
4. score     - reward is minus the absolute gap between the number of free
               slots and ``target_unutilized``; zero is the best possible.
5. clock     - advance the step counter; episodes truncate at
               ``episode_length``.

Random draws are consumed in a fixed order (hold durations in assignment
order, one uniform per still-held slot in ascending index, one Poisson for
arrivals), so a trajectory is fully determined by (config, seed, actions).
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from .errors import ConfigurationError

FREE = "free"
HELD = "held"
COOLDOWN = "cooldown"

TRAJECTORY_COLUMNS = [
    "step",
    "action",
    "reward",
    "unutilized",
    "items_performing",
    "resources_utilized",
    "queue_len",
]


@dataclass(frozen=True)
class EnvConfig:
    """Parameters of the simulated resource pool.

    ``mean_hold`` is the mean holding duration in steps and must be at least
    ``min_hold``; ``reallocation_delay`` applies both to the vacated slot
    (cooldown) and to the re-queued item (eligibility) after a change request.
    """

    num_resources: int = 10
    target_unutilized: int = 2
    arrival_rate: float = 1.5
    mean_hold: float = 20.0
    min_hold: int = 3
    change_request_prob: float = 0.02
    reallocation_delay: int = 2
    max_queue: int = 50
    episode_length: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.num_resources < 1:
            raise ConfigurationError("num_resources must be a positive integer")
        if not 0 <= self.target_unutilized < self.num_resources:
            raise ConfigurationError(
                "target_unutilized must be non-negative and smaller than num_resources"
            )
        if self.arrival_rate < 0:
            raise ConfigurationError("arrival_rate must be non-negative")
        if self.min_hold < 1:
            raise ConfigurationError("min_hold must be at least 1")
        if self.mean_hold < self.min_hold:
            raise ConfigurationError("mean_hold must be at least min_hold")
        if not 0.0 <= self.change_request_prob <= 1.0:
            raise ConfigurationError("change_request_prob must lie in [0, 1]")
        if self.reallocation_delay < 0:
            raise ConfigurationError("reallocation_delay must be non-negative")
        if self.max_queue < 1:
            raise ConfigurationError("max_queue must be at least 1")
        if self.episode_length < 1:
            raise ConfigurationError("episode_length must be at least 1")

    @property
    def observation_dim(self) -> int:
        return 2 * self.num_resources + 3

    @property
    def num_actions(self) -> int:
        return self.num_resources + 1

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_dict(cls, data: dict) -> "EnvConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown EnvConfig fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "EnvConfig":
        return cls.from_dict(json.loads(text))


@dataclass
class Slot:
    state: str = FREE
    item_id: int = -1
    remaining: int = 0


@dataclass
class WaitingItem:
    item_id: int
    eligible_at: int


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    terminal: bool
    info: dict


class ResourceAllocEnv:
    """Stateful simulator instance; exclusively owned, reseeded via reset()."""

    def __init__(self, config: EnvConfig):
        self.config = config
        self._slots: list[Slot] = []
        self._queue: list[WaitingItem] = []
        self._rng = np.random.Generator(np.random.PCG64(config.seed))
        self._step_index = 0
        self._next_item_id = 0
        self._terminal = True

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        """Start a fresh episode: all slots free, empty queue, step zero."""
        if seed is None:
            seed = self.config.seed
        self._rng = np.random.Generator(np.random.PCG64(seed))
        self._slots = [Slot() for _ in range(self.config.num_resources)]
        self._queue = []
        self._step_index = 0
        self._next_item_id = 0
        self._terminal = False
        return self._observation()

    @property
    def step_index(self) -> int:
        return self._step_index

    def step(self, action: int) -> StepResult:
        cfg = self.config
        if self._terminal:
            raise RuntimeError("step() after episode end; call reset() first")
        action = int(action)
        if not 0 <= action <= cfg.num_resources:
            raise ValueError(
                f"action must lie in [0, {cfg.num_resources}], got {action}"
            )

        # allocate
        free_idx = [i for i, s in enumerate(self._slots) if s.state == FREE]
        eligible = [w for w in self._queue if w.eligible_at <= self._step_index]
        n_assign = min(action, len(free_idx), len(eligible))
        assigned_ids = set()
        for waiting, slot_idx in zip(eligible[:n_assign], free_idx[:n_assign]):
            assert waiting.eligible_at <= self._step_index
            hold = self._draw_hold()
            self._slots[slot_idx] = Slot(HELD, waiting.item_id, hold)
            assigned_ids.add(waiting.item_id)
        if assigned_ids:
            self._queue = [w for w in self._queue if w.item_id not in assigned_ids]

        # advance: decrement and release, then change requests among still-held
        for slot in self._slots:
            if slot.state == FREE:
                continue
            slot.remaining -= 1
            if slot.remaining == 0:
                slot.state = FREE
                slot.item_id = -1
        delay = cfg.reallocation_delay
        for slot in self._slots:
            if slot.state != HELD:
                continue
            if self._rng.random() < cfg.change_request_prob:
                item_id = slot.item_id
                if delay > 0:
                    slot.state, slot.item_id, slot.remaining = COOLDOWN, -1, delay
                else:
                    slot.state, slot.item_id, slot.remaining = FREE, -1, 0
                # re-queued items are kept regardless of max_queue: they are
                # live items, only fresh arrivals can be dropped
                self._queue.insert(
                    0, WaitingItem(item_id, self._step_index + 1 + delay)
                )

        # arrive
        dropped = 0
        for _ in range(int(self._rng.poisson(cfg.arrival_rate))):
            if len(self._queue) < cfg.max_queue:
                self._queue.append(WaitingItem(self._next_item_id, self._step_index))
            else:
                dropped += 1
            self._next_item_id += 1

        # score
        unutilized = sum(1 for s in self._slots if s.state == FREE)
        performing = sum(1 for s in self._slots if s.state == HELD)
        reward = -abs(unutilized - cfg.target_unutilized)

        # clock
        self._step_index += 1
        self._terminal = self._step_index >= cfg.episode_length

        info = {
            "unutilized": unutilized,
            "items_performing": performing,
            "resources_utilized": cfg.num_resources - unutilized,
            "dropped_arrivals": dropped,
            "queue_len": len(self._queue),
        }
        return StepResult(self._observation(), float(reward), self._terminal, info)

    def _draw_hold(self) -> int:
        cfg = self.config
        extra_mean = cfg.mean_hold - cfg.min_hold
        return cfg.min_hold - 1 + int(self._rng.geometric(1.0 / (1.0 + extra_mean)))

    def _observation(self) -> np.ndarray:
        cfg = self.config
        m = cfg.num_resources
        obs = np.zeros(2 * m + 3)
        free_count = 0
        for i, slot in enumerate(self._slots):
            if slot.state == FREE:
                free_count += 1
            else:
                obs[2 * i] = 1.0
                obs[2 * i + 1] = min(slot.remaining / cfg.mean_hold, 1.0)
        obs[2 * m] = min(len(self._queue), cfg.max_queue) / cfg.max_queue
        obs[2 * m + 1] = free_count / m
        obs[2 * m + 2] = self._step_index / cfg.episode_length
        return obs


def write_trajectory_csv(path, rows) -> None:
    """Dump one episode's step records; rows are dicts keyed by column name."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRAJECTORY_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({col: row[col] for col in TRAJECTORY_COLUMNS})
