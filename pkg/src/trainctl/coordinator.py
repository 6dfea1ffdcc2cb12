"""Closed-loop controller.

Wires the pieces together: build the observation, let each active agent pick
its strategy, execute the joint configuration on the environment, score the
outcome, store the single shared transition, and let every agent learn from
the common buffer. All randomness flows from one seed through named child
streams, so a run is reproducible end to end.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .catalog import Catalog, Component, JointConfig
from .curiosity import CuriosityConfig, ForwardModel, combine, intrinsic_reward, update_forward_model
from .env.base import EnvironmentInterface, MetricsReport
from .env.surrogate import SurrogateEnv
from .qlearn import AgentConfig, ExplorationSchedule, PolicyKind, StrategyAgent, epsilon_at
from .replay import MIN_FILL_FACTOR, ReplayBuffer, Transition
from .reward import RewardBreakdown, RewardCalculator, RewardWeights, ShapingParams
from .state import EmaPair, ExtendedState, StateBuilder, TrainingState

__all__ = [
    "AblationMask",
    "MASK_PRESETS",
    "FROZEN_DEFAULTS",
    "RunConfig",
    "DecisionRecord",
    "RunResult",
    "Coordinator",
    "episode_seeds",
    "selection_frequency_report",
    "conditional_probability_report",
]

#: Strategies an inactive agent is pinned to.
FROZEN_DEFAULTS = {"aug": "Basic", "opt": "AdamW", "lrs": "OneCycle", "loss": "CB"}


@dataclass(frozen=True, slots=True)
class AblationMask:
    aug: bool = True
    opt: bool = True
    lrs: bool = True
    loss: bool = True

    def active(self, component: Component) -> bool:
        return getattr(self, component.value)


MASK_PRESETS = {
    "full": AblationMask(),
    "no-aug": AblationMask(aug=False),
    "no-opt": AblationMask(opt=False),
    "no-lrs": AblationMask(lrs=False),
    "no-loss": AblationMask(loss=False),
    "no-all": AblationMask(aug=False, opt=False, lrs=False, loss=False),
}


@dataclass(frozen=True)
class RunConfig:
    horizon: int = 25
    episodes: int = 1
    weights: RewardWeights = RewardWeights()
    shaping: ShapingParams = ShapingParams()
    stability_window: int = 5
    spike_threshold: float = 0.5
    agent: AgentConfig = AgentConfig()
    exploration: ExplorationSchedule | None = None  # None: decay over the whole run
    ema: EmaPair = EmaPair()
    replay_capacity: int = 50_000
    min_fill: int | None = None  # None: 10x minibatch
    curiosity: CuriosityConfig = CuriosityConfig()
    mask: AblationMask = AblationMask()
    uncoordinated: bool = False

    def __post_init__(self) -> None:
        if self.horizon < 1 or self.episodes < 1:
            raise ValueError("horizon and episodes must be >= 1")

    def schedule(self) -> ExplorationSchedule:
        if self.exploration is not None:
            return self.exploration
        return ExplorationSchedule(horizon=self.horizon * self.episodes)


@dataclass(frozen=True)
class DecisionRecord:
    t: int
    state_digest: str
    config: JointConfig
    reward: RewardBreakdown
    intrinsic: float
    combined: float
    eps: dict[str, float]
    q_chosen: dict[str, float]

    def to_obj(self, catalog: Catalog) -> dict:
        return {
            "v": 1,
            "t": self.t,
            "state_digest": self.state_digest,
            "config": catalog.names_for(self.config),
            "reward": self.reward.as_dict(),
            "intrinsic": self.intrinsic,
            "combined": self.combined,
            "eps": self.eps,
            "q_chosen": self.q_chosen,
        }


@dataclass
class RunResult:
    final_metrics: MetricsReport
    trajectory: list[MetricsReport] = field(default_factory=list)
    decisions: list[DecisionRecord] = field(default_factory=list)
    frequencies: dict[str, dict[str, float]] = field(default_factory=dict)
    steps: int = 0


def episode_seeds(seed: int, episodes: int) -> list[int]:
    """Deterministic per-episode environment seeds; static baselines reuse them."""
    return [seed + 100_003 * k for k in range(episodes)]


class Coordinator:
    def __init__(self, catalog: Catalog, env: EnvironmentInterface, cfg: RunConfig, seed: int):
        self.catalog = catalog
        self.env = env
        self.cfg = cfg
        self.seed = seed
        children = np.random.SeedSequence(seed).spawn(7)
        schedule = cfg.schedule()
        state_dim = 3 * len(TrainingState.__dataclass_fields__)
        self.agents = [
            StrategyAgent(
                name=space.component.value,
                n_actions=space.size,
                state_dim=state_dim,
                cfg=cfg.agent,
                schedule=schedule,
                rng=np.random.default_rng(children[i]),
            )
            for i, space in enumerate(catalog.spaces)
        ]
        self.curiosity: ForwardModel | None = None
        if cfg.curiosity.enabled:
            self.curiosity = ForwardModel(
                state_dim=state_dim,
                catalog=catalog,
                raw_dim=len(TrainingState.__dataclass_fields__),
                rng=np.random.default_rng(children[4]),
            )
        self.action_rng = np.random.default_rng(children[5])
        self.replay_rng = np.random.default_rng(children[6])
        self.replay = ReplayBuffer(cfg.replay_capacity)
        self.global_step = 0
        self._frozen = {
            comp: catalog.space(Component(comp)).by_name(name).id
            for comp, name in FROZEN_DEFAULTS.items()
        }
        if cfg.uncoordinated and not isinstance(env, SurrogateEnv):
            raise ValueError("uncoordinated rewards need the surrogate's attribution")

    # -- decision helpers ----------------------------------------------------

    def _select(self, state: ExtendedState, greedy: bool) -> tuple[JointConfig, dict, dict]:
        ids = []
        eps: dict[str, float] = {}
        q_chosen: dict[str, float] = {}
        for agent, space in zip(self.agents, self.catalog.spaces):
            comp = space.component.value
            eps[comp] = epsilon_at(agent.schedule, self.global_step)
            if not self.cfg.mask.active(space.component):
                aid = self._frozen[comp]
            elif greedy:
                aid = agent.greedy(state)
            else:
                aid = agent.select(state, self.global_step, self.action_rng)
            ids.append(aid)
            if agent.cfg.policy_kind == PolicyKind.EPS_GREEDY_DQN:
                q_chosen[comp] = float(agent.q_values(state)[aid])
            else:
                q_chosen[comp] = float(agent.arms.value_estimates()[aid])
        return JointConfig(*ids), eps, q_chosen

    def _min_fill(self) -> int:
        if self.cfg.min_fill is not None:
            return self.cfg.min_fill
        return MIN_FILL_FACTOR * self.cfg.agent.minibatch

    # -- episode loops ---------------------------------------------------------

    def run_episode(self, env_seed: int, learn: bool = True) -> RunResult:
        """One episode of horizon decision steps (or fewer on early termination)."""
        cfg = self.cfg
        builder = StateBuilder(cfg.ema)
        reward_calc = RewardCalculator(
            self.catalog,
            weights=cfg.weights,
            shaping=cfg.shaping,
            window=cfg.stability_window,
            spike_threshold=cfg.spike_threshold,
        )
        metrics = self.env.reset(env_seed)
        reward_calc.reset(metrics.map_val, metrics.loss_val)
        prev_loss = metrics.loss_val
        horizon = self.env.horizon
        ts = _training_state(metrics, delta=0.0, epoch_frac=0.0)
        state = builder.observe(ts)
        result = RunResult(final_metrics=metrics)

        for t in range(horizon):
            config, eps, q_chosen = self._select(state, greedy=not learn)
            report = self.env.execute(config)
            breakdown = reward_calc.step(config, report.map_val, report.loss_val)
            next_ts = _training_state(
                report, delta=prev_loss - report.loss_val, epoch_frac=(t + 1) / horizon
            )
            next_state = builder.observe(next_ts)

            r_int = 0.0
            if self.curiosity is not None and learn:
                raw_next = next_ts.as_vector()
                r_int = intrinsic_reward(self.curiosity, state, config, raw_next, cfg.curiosity)
                update_forward_model(self.curiosity, state, config, raw_next, cfg.curiosity.lr)
            combined = combine(breakdown.total, r_int, cfg.curiosity)

            if learn:
                per_agent = None
                if cfg.uncoordinated:
                    attribution = self.env.g_attribution(config, t)
                    per_agent = tuple(
                        attribution[space.component.value] for space in self.catalog.spaces
                    )
                self.replay.push(
                    Transition(
                        state=state,
                        joint_action=config,
                        reward=combined,
                        next_state=next_state,
                        terminal=report.terminal,
                        reward_per_agent=per_agent,
                    )
                )
                for k, agent in enumerate(self.agents):
                    r_k = combined if per_agent is None else per_agent[k]
                    agent.observe_reward(config.component_ids()[k], r_k)
                if self.replay.ready(cfg.agent.minibatch, self._min_fill()):
                    for k, agent in enumerate(self.agents):
                        if agent.cfg.policy_kind == PolicyKind.EPS_GREEDY_DQN:
                            batch = self.replay.sample(cfg.agent.minibatch, self.replay_rng)
                            agent.learn_batch(batch, k)
                self.global_step += 1
                for agent in self.agents:
                    agent.maybe_sync(self.global_step)

            result.decisions.append(
                DecisionRecord(
                    t=t,
                    state_digest=state.digest(),
                    config=config,
                    reward=breakdown,
                    intrinsic=r_int,
                    combined=combined,
                    eps=eps,
                    q_chosen=q_chosen,
                )
            )
            result.trajectory.append(report)
            result.final_metrics = report
            state, prev_loss = next_state, report.loss_val
            if report.terminal:
                break

        result.steps = len(result.decisions)
        result.frequencies = selection_frequency_report(result.decisions, self.catalog)
        return result

    def run(self, seed: int | None = None) -> RunResult:
        """Full run: cfg.episodes training episodes, logs concatenated."""
        seeds = episode_seeds(self.seed if seed is None else seed, self.cfg.episodes)
        merged: RunResult | None = None
        for env_seed in seeds:
            episode = self.run_episode(env_seed, learn=True)
            if merged is None:
                merged = episode
            else:
                base = merged.steps
                for rec in episode.decisions:
                    merged.decisions.append(
                        DecisionRecord(
                            t=base + rec.t,
                            state_digest=rec.state_digest,
                            config=rec.config,
                            reward=rec.reward,
                            intrinsic=rec.intrinsic,
                            combined=rec.combined,
                            eps=rec.eps,
                            q_chosen=rec.q_chosen,
                        )
                    )
                merged.trajectory.extend(episode.trajectory)
                merged.final_metrics = episode.final_metrics
                merged.steps += episode.steps
        merged.frequencies = selection_frequency_report(merged.decisions, self.catalog)
        return merged

    def evaluate_episode(self, env_seed: int) -> RunResult:
        """Greedy policy, learning and exploration off. The learned controller as shipped."""
        return self.run_episode(env_seed, learn=False)


def _training_state(m: MetricsReport, delta: float, epoch_frac: float) -> TrainingState:
    return TrainingState(
        map_val=m.map_val,
        loss_train=m.loss_train,
        loss_val=m.loss_val,
        delta_loss_val=delta,
        grad_norm=m.grad_norm,
        rel_update_mag=m.rel_update_mag,
        texture_richness=m.texture_richness,
        epoch_frac=epoch_frac,
    )


def selection_frequency_report(
    decisions: list[DecisionRecord], catalog: Catalog
) -> dict[str, dict[str, float]]:
    """Per-agent fraction of steps each strategy was chosen. Sums to 1 per agent."""
    if not decisions:
        raise ValueError("empty decision log")
    report: dict[str, dict[str, float]] = {}
    n = len(decisions)
    for k, space in enumerate(catalog.spaces):
        counts = dict.fromkeys(space.names, 0)
        for rec in decisions:
            counts[space.strategies[rec.config.component_ids()[k]].name] += 1
        report[space.component.value] = {name: c / n for name, c in counts.items()}
    return report


def conditional_probability_report(
    decisions: list[DecisionRecord], catalog: Catalog
) -> dict[str, dict[str, dict[str, dict[str, float]]]]:
    """P(response strategy | conditional strategy) across all component pairs.

    Conditionals that never occur are omitted rather than divided by zero.
    """
    if not decisions:
        raise ValueError("empty decision log")
    names_per_step = [catalog.names_for(rec.config) for rec in decisions]
    report: dict = {}
    for cond_space in catalog.spaces:
        cond_comp = cond_space.component.value
        comp_table: dict = {}
        for cond_name in cond_space.names:
            steps = [ns for ns in names_per_step if ns[cond_comp] == cond_name]
            if not steps:
                continue
            row: dict = {}
            for resp_space in catalog.spaces:
                if resp_space is cond_space:
                    continue
                resp_comp = resp_space.component.value
                row[resp_comp] = {
                    name: sum(1 for ns in steps if ns[resp_comp] == name) / len(steps)
                    for name in resp_space.names
                }
            comp_table[cond_name] = row
        if comp_table:
            report[cond_comp] = comp_table
    return report
