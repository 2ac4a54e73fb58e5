"""FIFO experience replay with uniform sampling."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class Transition(NamedTuple):
    asset_window: np.ndarray
    global_window: np.ndarray
    action: np.ndarray
    reward: float
    next_asset_window: np.ndarray
    next_global_window: np.ndarray
    done: bool


class ReplayBuffer:
    """Ring of transitions; once full, each push evicts the oldest."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self._data: list[Transition] = []
        self._head = 0

    def push(self, transition: Transition) -> None:
        if len(self._data) < self.capacity:
            self._data.append(transition)
        else:
            self._data[self._head] = transition
            self._head = (self._head + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        idx = rng.integers(0, len(self._data), size=batch_size)
        return [self._data[i] for i in idx]

    def __len__(self) -> int:
        return len(self._data)

    def __contains__(self, transition: Transition) -> bool:
        return any(t is transition for t in self._data)
