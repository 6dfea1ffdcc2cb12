"""Shared experience replay.

One ring buffer for all four agents: transitions store the joint action, and
each agent reads its own component out of it at learning time. Eviction is
strictly first-in-first-out; sampling is uniform with replacement.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .catalog import JointConfig
from .state import ExtendedState

__all__ = ["Transition", "ReplayBuffer", "DEFAULT_CAPACITY", "MIN_FILL_FACTOR"]

DEFAULT_CAPACITY = 50_000

#: Learning starts only once the buffer holds this many times the minibatch.
MIN_FILL_FACTOR = 10


@dataclass(frozen=True, slots=True)
class Transition:
    state: ExtendedState
    joint_action: JointConfig
    reward: float
    next_state: ExtendedState
    terminal: bool
    # Present only in the uncoordinated-reward ablation, one entry per agent.
    reward_per_agent: tuple[float, float, float, float] | None = None

    def __post_init__(self) -> None:
        if not math.isfinite(self.reward):
            raise ValueError("transition reward must be finite")


class ReplayBuffer:
    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._store: list[Transition] = []
        self._cursor = 0  # next write position once the ring is full

    def __len__(self) -> int:
        return len(self._store)

    def push(self, t: Transition) -> None:
        if len(self._store) < self.capacity:
            self._store.append(t)
        else:
            self._store[self._cursor] = t
            self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, n: int, rng: np.random.Generator) -> list[Transition]:
        if not self._store:
            raise ValueError("cannot sample from an empty buffer")
        if n == 0:
            return []
        idx = rng.integers(0, len(self._store), size=n)
        return [self._store[i] for i in idx]

    def in_order(self) -> list[Transition]:
        """Contents oldest first (the ring unrolled)."""
        return self._store[self._cursor :] + self._store[: self._cursor]

    def ready(self, minibatch: int, min_fill: int | None = None) -> bool:
        need = MIN_FILL_FACTOR * minibatch if min_fill is None else min_fill
        return len(self._store) >= need

    def dump_jsonl(self, path: str) -> None:
        """Debugging aid; not part of any wire contract."""
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.in_order():
                fh.write(
                    json.dumps(
                        {
                            "state": t.state.features.tolist(),
                            "action": list(t.joint_action.component_ids()),
                            "reward": t.reward,
                            "next_state": t.next_state.features.tolist(),
                            "terminal": t.terminal,
                        },
                        separators=(",", ":"),
                    )
                )
                fh.write("\n")
