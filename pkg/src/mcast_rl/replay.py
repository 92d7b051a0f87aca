"""Proportional prioritized replay over a sum-tree, plus n-step return staging."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass
class Transition:
    state: np.ndarray
    action: int
    n_step_return: float
    next_state: np.ndarray | None  # None marks a terminal successor
    steps_spanned: int = 1


def n_step_return(rewards: Sequence[float], gamma: float) -> float:
    if len(rewards) == 0:
        raise ValueError("n-step return of an empty reward list")
    total = 0.0
    for k, r in enumerate(rewards):
        total += gamma ** k * r
    return total


class SumTree:
    """Array-backed binary tree whose internal nodes hold the sum of their children.

    Leaves live at ``nodes[capacity - 1:]``; the root ``nodes[0]`` is the
    total priority mass.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.nodes = np.zeros(2 * capacity - 1)

    @property
    def total(self) -> float:
        return float(self.nodes[0])

    def __getitem__(self, leaf: int) -> float:
        return float(self.nodes[leaf + self.capacity - 1])

    def update(self, leaf: int, value: float) -> None:
        idx = leaf + self.capacity - 1
        self.nodes[idx] = value
        while idx > 0:
            idx = (idx - 1) // 2
            self.nodes[idx] = self.nodes[2 * idx + 1] + self.nodes[2 * idx + 2]

    def leaves(self) -> np.ndarray:
        return self.nodes[self.capacity - 1:]

    def find(self, mass: float) -> int:
        """Leaf whose cumulative-priority interval contains ``mass``."""
        idx = 0
        while 2 * idx + 1 < len(self.nodes):
            left = 2 * idx + 1
            if mass < self.nodes[left] or self.nodes[left + 1] <= 0.0:
                idx = left
            else:
                mass -= self.nodes[left]
                idx = left + 1
        return idx - (self.capacity - 1)


class PrioritizedReplay:
    """Ring buffer with priority ``(|delta| + eps)**alpha`` and importance weights.

    New items without a TD error get the largest priority seen so far, so
    every transition is replayed at least once with high probability.
    """

    def __init__(self, capacity: int, alpha: float = 0.6, eps: float = 1e-5):
        self.capacity = capacity
        self.alpha = alpha
        self.eps = eps
        self.tree = SumTree(capacity)
        self.data: list[Transition | None] = [None] * capacity
        self.cursor = 0
        self.size = 0
        self.max_priority = 1.0

    def __len__(self) -> int:
        return self.size

    def priority(self, td_error: float) -> float:
        return (abs(td_error) + self.eps) ** self.alpha

    def insert(self, transition: Transition, td_error: float | None = None) -> int:
        p = self.max_priority if td_error is None else self.priority(td_error)
        slot = self.cursor
        self.data[slot] = transition
        self.tree.update(slot, p)
        self.max_priority = max(self.max_priority, p)
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return slot

    def probabilities(self) -> np.ndarray:
        leaves = self.tree.leaves()[: self.size]
        return leaves / self.tree.total

    def sample(self, k: int, beta: float, rng: np.random.Generator) -> tuple[list[Transition], np.ndarray, np.ndarray]:
        """Stratified draw of ``k`` items: one uniform point in each of k equal slices of the mass."""
        if self.size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        if k > self.size:
            raise ValueError(f"batch of {k} requested from a buffer holding {self.size}")
        total = self.tree.total
        seg = total / k
        points = (np.arange(k) + rng.random(k)) * seg
        idx = np.array([min(self.tree.find(p), self.size - 1) for p in points])
        probs = np.array([self.tree[i] for i in idx]) / total
        weights = (self.size * probs) ** (-beta)
        weights /= weights.max()
        return [self.data[i] for i in idx], weights, idx

    def update(self, indices: Sequence[int], td_errors: Sequence[float]) -> None:
        for i, d in zip(indices, td_errors):
            p = self.priority(d)
            self.tree.update(int(i), p)
            self.max_priority = max(self.max_priority, p)


class NStepBuffer:
    """Turns a stream of one-step transitions into n-step ones.

    A window is emitted once it holds n steps. At episode end every
    remaining partial window is flushed with the terminal (or truncation)
    successor.
    """

    def __init__(self, n: int, gamma: float):
        if n < 1:
            raise ValueError("n-step must be >= 1")
        self.n = n
        self.gamma = gamma
        self.window: deque = deque()

    def push(self, state, action, reward, next_state, done: bool) -> list[Transition]:
        self.window.append((state, action, reward))
        out = []
        if len(self.window) == self.n:
            out.append(self._emit(next_state))
            self.window.popleft()
        if done:
            while self.window:
                out.append(self._emit(next_state))
                self.window.popleft()
        return out

    def _emit(self, next_state) -> Transition:
        s, a, _ = self.window[0]
        rewards = [r for _, _, r in self.window]
        return Transition(s, a, n_step_return(rewards, self.gamma), next_state, len(rewards))

    def clear(self) -> None:
        self.window.clear()
