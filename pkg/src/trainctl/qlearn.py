"""Per-agent action-value learning.

Each component agent owns a small Q-network plus a frozen target copy, and
can alternatively run as a context-free bandit (UCB1 or Thompson) over its own
arms. The deep path follows the plain stochastic update

    theta <- theta + alpha * td_error * grad_theta Q(I, a; theta)

with the gradient taken on the selected action's output only. Minibatches
average the parameter deltas computed at the pre-update parameters.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .nn import Mlp
from .replay import Transition
from .state import ExtendedState

__all__ = [
    "PolicyKind",
    "AgentConfig",
    "ExplorationSchedule",
    "epsilon_at",
    "TargetNetwork",
    "td_target",
    "td_update",
    "ArmStats",
    "argmax_lowest",
    "StrategyAgent",
    "TabularQLearner",
    "HIDDEN_SIZES",
]

HIDDEN_SIZES = (64, 64)

UCB_C = math.sqrt(2.0)
ARM_DISCOUNT = 0.99
OBS_VARIANCE = 1.0
PRIOR_PRECISION = 0.01  # weak N(0, 100) prior for the Thompson posterior


class PolicyKind(str, Enum):
    EPS_GREEDY_DQN = "dqn"
    UCB1 = "ucb1"
    THOMPSON = "thompson"


@dataclass(frozen=True, slots=True)
class AgentConfig:
    alpha: float = 1e-3
    gamma: float = 0.95
    sync_interval: int = 1000
    minibatch: int = 32
    policy_kind: PolicyKind = PolicyKind.EPS_GREEDY_DQN

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.sync_interval < 1:
            raise ValueError("sync_interval must be >= 1")
        if self.minibatch < 1:
            raise ValueError("minibatch must be >= 1")


@dataclass(frozen=True, slots=True)
class ExplorationSchedule:
    eps_start: float = 1.0
    eps_end: float = 0.1
    horizon: int = 250

    def __post_init__(self) -> None:
        if not 0 < self.eps_end <= self.eps_start <= 1.0:
            raise ValueError("need 0 < eps_end <= eps_start <= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


def epsilon_at(schedule: ExplorationSchedule, t: int) -> float:
    """Exponential decay hitting eps_end exactly at the horizon, flat after."""
    if t < 0:
        raise ValueError("t must be non-negative")
    frac = min(t, schedule.horizon) / schedule.horizon
    return schedule.eps_start * (schedule.eps_end / schedule.eps_start) ** frac


class TargetNetwork:
    """Frozen copy of a Q-network; parameters move only at sync events."""

    def __init__(self, net: Mlp):
        self.net = net.clone()
        self.last_sync_step = 0
        self.sync_count = 0

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.net.forward(x)


def sync_target(net: Mlp, target: TargetNetwork, step: int = 0) -> None:
    target.net.copy_from(net)
    target.last_sync_step = step
    target.sync_count += 1


def td_target(r: float, gamma: float, q_next: np.ndarray, terminal: bool) -> float:
    if terminal:
        return r
    return r + gamma * float(np.max(q_next))


def td_update(
    net: Mlp,
    target: TargetNetwork,
    state: np.ndarray,
    action: int,
    reward: float,
    next_state: np.ndarray,
    terminal: bool,
    cfg: AgentConfig,
) -> float:
    """Single-transition update. Returns the TD error (applied or not)."""
    q = net.forward(state)
    y = td_target(reward, cfg.gamma, target.forward(next_state), terminal)
    delta = y - float(q[action])
    gw, gb = net.grad_output(state, action)
    finite = math.isfinite(delta) and all(np.isfinite(g).all() for g in gw)
    if finite:
        net.apply(gw, gb, cfg.alpha * delta)
    return delta if finite else math.nan


def argmax_lowest(values: np.ndarray) -> int:
    """Index of the maximum, lowest index on ties."""
    return int(np.argmax(values))


@dataclass
class ArmStats:
    """Sufficient statistics for the bandit policies.

    Counts are plain pull counts. The value estimate discounts old rewards
    (factor 0.99 per pull of that arm) so drifting payoffs are tracked. The
    Thompson posterior assumes unit observation variance with a weak
    zero-mean prior.
    """

    n_arms: int
    counts: np.ndarray = field(init=False)
    disc_weight: np.ndarray = field(init=False)
    disc_sum: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.counts = np.zeros(self.n_arms, dtype=np.int64)
        self.disc_weight = np.zeros(self.n_arms, dtype=np.float64)
        self.disc_sum = np.zeros(self.n_arms, dtype=np.float64)

    def update(self, arm: int, reward: float) -> None:
        self.counts[arm] += 1
        self.disc_weight[arm] = ARM_DISCOUNT * self.disc_weight[arm] + 1.0
        self.disc_sum[arm] = ARM_DISCOUNT * self.disc_sum[arm] + reward

    def value_estimates(self) -> np.ndarray:
        est = np.zeros(self.n_arms, dtype=np.float64)
        pulled = self.disc_weight > 0
        est[pulled] = self.disc_sum[pulled] / self.disc_weight[pulled]
        return est

    def posterior(self) -> tuple[np.ndarray, np.ndarray]:
        precision = PRIOR_PRECISION + self.disc_weight / OBS_VARIANCE
        mean = (self.disc_sum / OBS_VARIANCE) / precision
        return mean, 1.0 / precision

    def ucb_scores(self, c: float = UCB_C) -> np.ndarray:
        t = max(int(self.counts.sum()), 1)
        with np.errstate(divide="ignore"):
            bonus = c * np.sqrt(np.log(t) / self.counts)
        return self.value_estimates() + bonus


def ucb1_select(stats: ArmStats, c: float = UCB_C) -> int:
    unpulled = np.flatnonzero(stats.counts == 0)
    if unpulled.size:
        return int(unpulled[0])
    return argmax_lowest(stats.ucb_scores(c))


def thompson_select(stats: ArmStats, rng: np.random.Generator) -> int:
    mean, var = stats.posterior()
    return argmax_lowest(rng.normal(mean, np.sqrt(var)))


def epsilon_greedy(values: np.ndarray, eps: float, rng: np.random.Generator) -> int:
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    if rng.random() < eps:
        return int(rng.integers(0, values.shape[0]))
    return argmax_lowest(values)


class StrategyAgent:
    """One component agent: network, target, bandit stats, and bookkeeping."""

    def __init__(
        self,
        name: str,
        n_actions: int,
        state_dim: int,
        cfg: AgentConfig,
        schedule: ExplorationSchedule,
        rng: np.random.Generator,
    ):
        self.name = name
        self.n_actions = n_actions
        self.cfg = cfg
        self.schedule = schedule
        self.net = Mlp([state_dim, *HIDDEN_SIZES, n_actions], rng)
        self.target = TargetNetwork(self.net)
        self.arms = ArmStats(n_actions)
        self.updates_applied = 0
        self.updates_skipped = 0

    def q_values(self, state: ExtendedState) -> np.ndarray:
        return self.net.forward(state.features)

    def select(self, state: ExtendedState, t: int, rng: np.random.Generator) -> int:
        kind = self.cfg.policy_kind
        if kind == PolicyKind.UCB1:
            return ucb1_select(self.arms)
        if kind == PolicyKind.THOMPSON:
            return thompson_select(self.arms, rng)
        return epsilon_greedy(self.q_values(state), epsilon_at(self.schedule, t), rng)

    def greedy(self, state: ExtendedState) -> int:
        if self.cfg.policy_kind == PolicyKind.EPS_GREEDY_DQN:
            return argmax_lowest(self.q_values(state))
        return argmax_lowest(self.arms.value_estimates())

    def observe_reward(self, action: int, reward: float) -> None:
        """Feed the bandit statistics; cheap enough to keep in every mode."""
        self.arms.update(action, reward)

    def learn_batch(self, batch: list[Transition], component_index: int) -> float:
        """One averaged minibatch step on the Q-network. Returns mean |td error|.

        All TD errors are computed at the current parameters; the applied move
        is the average of the per-transition deltas, matching a mean-squared
        TD loss up to the constant factor.
        """
        if not batch:
            return 0.0
        states = np.stack([t.state.features for t in batch])
        next_states = np.stack([t.next_state.features for t in batch])
        actions = np.array(
            [t.joint_action.component_ids()[component_index] for t in batch], dtype=np.int64
        )
        rewards = np.array(
            [
                t.reward if t.reward_per_agent is None else t.reward_per_agent[component_index]
                for t in batch
            ]
        )
        terminal = np.array([t.terminal for t in batch], dtype=bool)

        q, cache = self.net.forward_cached(states)
        q_next = self.target.net.forward(next_states)
        targets = rewards + np.where(terminal, 0.0, self.cfg.gamma * q_next.max(axis=1))
        deltas = targets - q[np.arange(len(batch)), actions]

        gout = np.zeros_like(q)
        gout[np.arange(len(batch)), actions] = deltas / len(batch)
        gw, gb = self.net.backward(cache, gout)
        finite = np.isfinite(deltas).all() and all(np.isfinite(g).all() for g in gw)
        if finite:
            self.net.apply(gw, gb, self.cfg.alpha)
            self.updates_applied += 1
        else:
            self.updates_skipped += 1
        return float(np.mean(np.abs(deltas)))

    def maybe_sync(self, step: int) -> bool:
        due = step - self.target.last_sync_step >= self.cfg.sync_interval
        if due:
            sync_target(self.net, self.target, step)
        return due

    def to_checkpoint(self) -> dict:
        return {
            "version": 1,
            "name": self.name,
            "policy": self.cfg.policy_kind.value,
            "net": self.net.to_obj(),
            "target": self.target.net.to_obj(),
            "last_sync_step": self.target.last_sync_step,
        }

    def load_checkpoint(self, obj: dict) -> None:
        if obj.get("version") != 1:
            raise ValueError(f"unsupported checkpoint version {obj.get('version')!r}")
        self.net = Mlp.from_obj(obj["net"])
        self.target.net = Mlp.from_obj(obj["target"])
        self.target.last_sync_step = int(obj["last_sync_step"])

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_checkpoint(), fh)


class TabularQLearner:
    """Lookup-table Q-learning with Robbins-Monro step sizes.

    The step size for the n-th visit of a pair is c/(c+n): the series diverges
    while its squares stay summable, which is what the convergence argument
    needs. Used by the oracle tests; the production path is the network agent.
    """

    def __init__(self, n_states: int, n_actions: int, gamma: float, step_c: float = 20.0):
        if not 0.0 <= gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        self.gamma = gamma
        self.step_c = step_c
        self.q = np.zeros((n_states, n_actions), dtype=np.float64)
        self.visits = np.zeros((n_states, n_actions), dtype=np.int64)

    def update(self, s: int, a: int, r: float, s_next: int, terminal: bool) -> float:
        self.visits[s, a] += 1
        alpha = self.step_c / (self.step_c + self.visits[s, a])
        y = r if terminal else r + self.gamma * float(self.q[s_next].max())
        delta = y - self.q[s, a]
        self.q[s, a] += alpha * delta
        return float(delta)
