"""Tabular MDP fixtures and exact solvers.

Small finite MDPs serve as the convergence oracle for the learning code: the
sampled Q-learning path must land on the same Q* that value iteration (and,
as a second independent route, policy iteration) produces.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "TabularMdp",
    "value_iteration",
    "policy_iteration",
    "sample_step",
    "make_random_mdp",
]


@dataclass(frozen=True)
class TabularMdp:
    transitions: np.ndarray  # (S, A, S), each row a distribution
    rewards: np.ndarray  # (S, A)
    gamma: float

    def __post_init__(self) -> None:
        p, r = self.transitions, self.rewards
        if p.ndim != 3 or p.shape[0] != p.shape[2] or r.shape != p.shape[:2]:
            raise ValueError("transition tensor must be (S, A, S) with matching rewards")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if (p < 0).any() or not np.allclose(p.sum(axis=2), 1.0, atol=1e-9):
            raise ValueError("each transitions[s, a] must be a probability distribution")

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]


def value_iteration(mdp: TabularMdp, tol: float = 1e-10) -> np.ndarray:
    """Iterate the Bellman optimality operator on Q until the sup norm settles."""
    q = np.zeros((mdp.n_states, mdp.n_actions))
    while True:
        v = q.max(axis=1)
        q_new = mdp.rewards + mdp.gamma * mdp.transitions @ v
        if np.max(np.abs(q_new - q)) < tol:
            return q_new
        q = q_new


def policy_iteration(mdp: TabularMdp) -> np.ndarray:
    """Independent solver: exact policy evaluation by linear solve, then greedy improvement."""
    policy = np.zeros(mdp.n_states, dtype=np.int64)
    n = mdp.n_states
    while True:
        p_pi = mdp.transitions[np.arange(n), policy]
        r_pi = mdp.rewards[np.arange(n), policy]
        v = np.linalg.solve(np.eye(n) - mdp.gamma * p_pi, r_pi)
        q = mdp.rewards + mdp.gamma * mdp.transitions @ v
        improved = q.argmax(axis=1)
        if np.array_equal(improved, policy):
            return q
        policy = improved


def sample_step(
    mdp: TabularMdp, s: int, a: int, rng: np.random.Generator
) -> tuple[int, float]:
    s_next = int(rng.choice(mdp.n_states, p=mdp.transitions[s, a]))
    return s_next, float(mdp.rewards[s, a])


def make_random_mdp(
    n_states: int, n_actions: int, gamma: float, rng: np.random.Generator
) -> TabularMdp:
    """Well-mixed random fixture: no near-deterministic rows, rewards in [0, 1]."""
    raw = rng.uniform(0.1, 1.0, size=(n_states, n_actions, n_states))
    transitions = raw / raw.sum(axis=2, keepdims=True)
    rewards = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    return TabularMdp(transitions=transitions, rewards=rewards, gamma=gamma)
