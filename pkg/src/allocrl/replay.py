"""Experience storage: uniform ring buffer, proportional prioritized replay
over a sum tree, and bootstrap-masked storage for ensemble training.

Sampling methods return ``None`` when the memory cannot serve the request
(too few stored or eligible transitions, or zero total priority); callers
treat that as "skip this learn step".
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import NumericError


@dataclass(frozen=True, eq=False)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool


class UniformMemory:
    """Fixed-capacity ring buffer with uniform with-replacement sampling."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._items: list[Transition] = []
        self._cursor = 0

    def __len__(self) -> int:
        return len(self._items)

    def push(self, transition: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._cursor] = transition
        self._cursor = (self._cursor + 1) % self.capacity

    def get(self, index: int) -> Transition:
        return self._items[index]

    def items_in_order(self) -> list[Transition]:
        """Retained transitions, oldest first."""
        if len(self._items) < self.capacity:
            return list(self._items)
        return self._items[self._cursor:] + self._items[: self._cursor]

    def sample(self, batch_size: int, rng: np.random.Generator):
        if len(self._items) < batch_size:
            return None
        idx = rng.integers(0, len(self._items), size=batch_size)
        return idx, [self._items[i] for i in idx]


class SumTree:
    """Complete binary tree over the leaves; internal nodes hold child sums.

    The leaf array is padded to the next power of two (padding leaves stay at
    zero priority), which keeps the descent order identical to leaf-index
    order: leaf i owns the cumulative-priority interval
    [sum(p_0..p_{i-1}), sum(p_0..p_i)).
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._n_leaves = 1
        while self._n_leaves < capacity:
            self._n_leaves *= 2
        self._nodes = np.zeros(2 * self._n_leaves - 1)

    @property
    def total(self) -> float:
        return float(self._nodes[0])

    def leaf(self, index: int) -> float:
        return float(self._nodes[index + self._n_leaves - 1])

    def leaves(self) -> np.ndarray:
        return self._nodes[self._n_leaves - 1:self._n_leaves - 1 + self.capacity].copy()

    def update(self, index: int, priority: float) -> None:
        if not 0 <= index < self.capacity:
            raise IndexError(f"leaf index {index} out of range")
        if not np.isfinite(priority) or priority < 0:
            raise ValueError(f"priority must be finite and non-negative, got {priority}")
        node = index + self._n_leaves - 1
        delta = priority - self._nodes[node]
        self._nodes[node] = priority
        while node > 0:
            node = (node - 1) // 2
            self._nodes[node] += delta

    def query(self, value: float) -> int:
        """Leaf whose cumulative-priority interval [lo, hi) contains value."""
        node = 0
        while node < self._n_leaves - 1:
            left = 2 * node + 1
            if value < self._nodes[left]:
                node = left
            else:
                value -= self._nodes[left]
                node = left + 1
        return node - (self._n_leaves - 1)


class PrioritizedMemory:
    """Ring storage sampled proportionally to priority via a sum tree.

    New transitions enter at the running maximum priority so each one is
    reachable before its first TD error is known.
    """

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._items: list[Transition] = []
        self._cursor = 0
        self.tree = SumTree(capacity)
        self.max_priority = 1.0

    def __len__(self) -> int:
        return len(self._items)

    def push(self, transition: Transition, priority: float | None = None) -> None:
        p = self.max_priority if priority is None else float(priority)
        if len(self._items) < self.capacity:
            index = len(self._items)
            self._items.append(transition)
        else:
            index = self._cursor
            self._items[index] = transition
        self.tree.update(index, p)
        self._cursor = (self._cursor + 1) % self.capacity

    def get(self, index: int) -> Transition:
        return self._items[index]

    def sample(self, batch_size: int, beta: float, rng: np.random.Generator):
        """Stratified prefix-sum sampling with importance weights.

        One uniform point per equal segment of [0, total); weights are
        (n * P(i)) ** -beta normalized by the batch maximum.
        """
        if len(self._items) < batch_size:
            return None
        total = self.tree.total
        if total <= 0.0:
            return None
        upper = np.nextafter(total, 0.0)
        points = (np.arange(batch_size) + rng.random(batch_size)) * (total / batch_size)
        idx = np.array([self.tree.query(min(p, upper)) for p in points], dtype=int)
        probs = np.array([self.tree.leaf(i) for i in idx]) / total
        weights = (len(self._items) * probs) ** (-beta)
        weights = weights / weights.max()
        return idx, [self._items[i] for i in idx], weights

    def update_priorities(self, indices, td_errors, alpha=0.6, epsilon=1e-6) -> None:
        """Set leaf priorities to (|delta| + epsilon) ** alpha and repair sums."""
        for index, delta in zip(indices, td_errors):
            if not np.isfinite(delta):
                raise NumericError(f"non-finite TD error for index {index}")
            p = (abs(float(delta)) + epsilon) ** alpha
            self.tree.update(int(index), p)
            if p > self.max_priority:
                self.max_priority = p


class MaskedMemory:
    """Ring buffer whose entries carry an immutable per-head bootstrap mask.

    Each mask bit is drawn Bernoulli(mask_prob) once at insertion; head k
    may only train on transitions whose bit k is set.
    """

    def __init__(self, capacity: int, num_heads: int, mask_prob: float,
                 rng: np.random.Generator):
        self.capacity = capacity
        self.num_heads = num_heads
        self.mask_prob = mask_prob
        self._mask_rng = rng
        self._items: list[Transition] = []
        self._masks = np.zeros((capacity, num_heads), dtype=bool)
        self._cursor = 0

    def __len__(self) -> int:
        return len(self._items)

    def push(self, transition: Transition, mask=None) -> None:
        if mask is None:
            mask = self._mask_rng.random(self.num_heads) < self.mask_prob
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (self.num_heads,):
            raise ValueError(f"mask must have {self.num_heads} bits")
        if len(self._items) < self.capacity:
            index = len(self._items)
            self._items.append(transition)
        else:
            index = self._cursor
            self._items[index] = transition
        self._masks[index] = mask
        self._cursor = (self._cursor + 1) % self.capacity

    def get(self, index: int) -> Transition:
        return self._items[index]

    def mask(self, index: int) -> np.ndarray:
        return self._masks[index].copy()

    def sample_for_head(self, head: int, batch_size: int, rng: np.random.Generator):
        eligible = np.nonzero(self._masks[: len(self._items), head])[0]
        if len(eligible) < batch_size:
            return None
        pos = rng.integers(0, len(eligible), size=batch_size)
        idx = eligible[pos]
        return idx, [self._items[i] for i in idx]


def export_transitions_csv(memory, path) -> None:
    """Debug dump of stored transitions; mask column is empty unless masked."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "action", "reward", "terminal", "mask"])
        for index in range(len(memory)):
            t = memory.get(index)
            mask = ""
            if isinstance(memory, MaskedMemory):
                mask = "".join("1" if b else "0" for b in memory.mask(index))
            writer.writerow([index, t.action, t.reward, int(t.terminal), mask])
