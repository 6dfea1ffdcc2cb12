import math

import numpy as np
import pytest
from scipy import stats as sstats

from trainctl.nn import Mlp
from trainctl.catalog import JointConfig
from trainctl.qlearn import (
    AgentConfig,
    ArmStats,
    ExplorationSchedule,
    PolicyKind,
    StrategyAgent,
    TabularQLearner,
    TargetNetwork,
    argmax_lowest,
    epsilon_at,
    epsilon_greedy,
    sync_target,
    td_target,
    td_update,
    thompson_select,
    ucb1_select,
)
from trainctl.replay import Transition
from trainctl.state import ExtendedState


def ext(vec) -> ExtendedState:
    return ExtendedState(features=np.asarray(vec, dtype=np.float64))


# ---------------------------------------------------------------------------
# exploration schedule


def test_epsilon_endpoints_and_midpoint():
    sched = ExplorationSchedule(eps_start=1.0, eps_end=0.1, horizon=250)
    assert epsilon_at(sched, 0) == 1.0
    assert epsilon_at(sched, 250) == pytest.approx(0.1)
    assert epsilon_at(sched, 10_000) == pytest.approx(0.1)  # flat after horizon
    # Exponential decay: halfway point is the geometric mean sqrt(0.1).
    assert epsilon_at(sched, 125) == pytest.approx(math.sqrt(0.1))


def test_epsilon_monotone_nonincreasing():
    sched = ExplorationSchedule(eps_start=1.0, eps_end=0.1, horizon=97)
    values = [epsilon_at(sched, t) for t in range(300)]
    assert all(a >= b for a, b in zip(values, values[1:]))
    assert all(0.1 <= v <= 1.0 for v in values)


def test_schedule_validation():
    with pytest.raises(ValueError):
        ExplorationSchedule(eps_start=0.1, eps_end=0.5, horizon=10)
    with pytest.raises(ValueError):
        ExplorationSchedule(eps_start=1.0, eps_end=0.0, horizon=10)
    with pytest.raises(ValueError):
        epsilon_at(ExplorationSchedule(), -1)


# ---------------------------------------------------------------------------
# TD pieces


def test_td_target_fixture():
    q_next = np.array([1.0, 3.0, 2.0])
    assert td_target(0.1, 0.9, q_next, terminal=False) == pytest.approx(0.1 + 0.9 * 3.0)
    assert td_target(0.1, 0.9, q_next, terminal=True) == pytest.approx(0.1)
    assert td_target(-0.5, 0.95, np.array([-2.0, -1.0]), False) == pytest.approx(-0.5 + 0.95 * -1.0)


def test_td_update_closed_form_linear_net():
    # One linear layer, no hidden: q = W x + b, so the update on action a is
    #   W[a] += alpha * delta * x,  b[a] += alpha * delta.
    rng = np.random.default_rng(0)
    net = Mlp([3, 2], rng)
    target = TargetNetwork(net)
    cfg = AgentConfig(alpha=0.5, gamma=0.9, sync_interval=10, minibatch=1)
    x = np.array([1.0, -2.0, 0.5])
    x_next = np.array([0.3, 0.3, 0.3])

    w_before = net.weights[0].copy()
    b_before = net.biases[0].copy()
    q_before = net.forward(x)
    y = 1.0 + 0.9 * float(np.max(target.forward(x_next)))
    expected_delta = y - float(q_before[1])

    delta = td_update(net, target, x, action=1, reward=1.0, next_state=x_next, terminal=False, cfg=cfg)
    assert delta == pytest.approx(expected_delta, abs=1e-12)
    assert np.allclose(net.weights[0][1], w_before[1] + 0.5 * expected_delta * x, atol=1e-12)
    assert net.biases[0][1] == pytest.approx(b_before[1] + 0.5 * expected_delta, abs=1e-12)
    # Untouched action row stays put.
    assert np.array_equal(net.weights[0][0], w_before[0])
    assert net.biases[0][0] == b_before[0]


def test_td_update_moves_q_toward_target():
    rng = np.random.default_rng(1)
    net = Mlp([4, 16, 3], rng)
    target = TargetNetwork(net)
    cfg = AgentConfig(alpha=0.05, gamma=0.0, sync_interval=10**6, minibatch=1)
    x = rng.normal(size=4)
    for _ in range(200):
        td_update(net, target, x, 2, reward=1.5, next_state=x, terminal=True, cfg=cfg)
    assert net.forward(x)[2] == pytest.approx(1.5, abs=1e-3)


def test_td_update_skips_nonfinite():
    rng = np.random.default_rng(2)
    net = Mlp([2, 4, 2], rng)
    target = TargetNetwork(net)
    target.net.weights[0][0, 0] = np.inf  # poison the bootstrap target
    cfg = AgentConfig(alpha=0.1)
    before = net.get_flat().copy()
    delta = td_update(net, target, np.ones(2), 0, 0.0, np.ones(2), False, cfg)
    assert math.isnan(delta)
    assert np.array_equal(net.get_flat(), before)


def test_target_network_frozen_between_syncs():
    rng = np.random.default_rng(3)
    net = Mlp([3, 8, 2], rng)
    target = TargetNetwork(net)
    x = rng.normal(size=3)
    frozen = target.forward(x).copy()
    cfg = AgentConfig(alpha=0.01, gamma=0.9)
    for _ in range(100):
        td_update(net, target, rng.normal(size=3), 0, rng.normal(), rng.normal(size=3), False, cfg)
        assert np.array_equal(target.forward(x), frozen)  # bit-exact freeze
    assert not np.allclose(net.forward(x), frozen)
    sync_target(net, target, step=100)
    assert np.array_equal(target.forward(x), net.forward(x))
    assert target.sync_count == 1
    assert target.last_sync_step == 100


# ---------------------------------------------------------------------------
# bandit policies


def test_argmax_lowest_tie_break():
    assert argmax_lowest(np.array([1.0, 3.0, 3.0, 2.0])) == 1
    assert argmax_lowest(np.array([0.0, 0.0, 0.0])) == 0


def test_ucb1_pulls_every_arm_first():
    stats = ArmStats(4)
    order = []
    for _ in range(4):
        a = ucb1_select(stats)
        order.append(a)
        stats.update(a, 0.0)
    assert order == [0, 1, 2, 3]


def test_ucb1_scores_hand_computed():
    stats = ArmStats(2)
    stats.update(0, 1.0)
    stats.update(1, 0.0)
    stats.update(0, 0.0)
    # counts [2,1]; t=3. Discounted means: arm0 (0.99*1+0)/(0.99+1)=0.4975..., arm1 0.
    c = math.sqrt(2.0)
    want0 = (0.99 * 1.0 + 0.0) / (0.99 + 1.0) + c * math.sqrt(math.log(3) / 2)
    want1 = 0.0 + c * math.sqrt(math.log(3) / 1)
    got = stats.ucb_scores()
    assert got[0] == pytest.approx(want0, abs=1e-12)
    assert got[1] == pytest.approx(want1, abs=1e-12)
    assert ucb1_select(stats) == (0 if want0 >= want1 else 1)


def test_ucb1_finds_best_arm():
    rng = np.random.default_rng(4)
    means = [0.2, 0.5, 0.8]
    stats = ArmStats(3)
    for _ in range(3000):
        a = ucb1_select(stats)
        stats.update(a, float(rng.normal(means[a], 0.2)))
    assert int(np.argmax(stats.counts)) == 2
    assert stats.counts[2] > 0.8 * stats.counts.sum()


def test_thompson_posterior_closed_form():
    stats = ArmStats(2)
    stats.update(0, 2.0)
    mean, var = stats.posterior()
    # One observation of 2.0: precision 0.01 + 0.99 (discounted weight after one pull is... )
    # update() applies the discount before adding, so weight is exactly 1.0.
    prec0 = 0.01 + 1.0
    assert mean[0] == pytest.approx(2.0 / prec0)
    assert var[0] == pytest.approx(1.0 / prec0)
    # Unpulled arm keeps the wide prior.
    assert mean[1] == 0.0
    assert var[1] == pytest.approx(1.0 / 0.01)


def test_thompson_concentrates():
    rng = np.random.default_rng(5)
    means = [0.0, 1.0]
    stats = ArmStats(2)
    picks = []
    for _ in range(2000):
        a = thompson_select(stats, rng)
        picks.append(a)
        stats.update(a, float(rng.normal(means[a], 0.3)))
    assert sum(picks[-200:]) >= 195  # almost always the good arm by the end


def test_discounting_tracks_drifting_payoffs():
    stats = ArmStats(1)
    for _ in range(500):
        stats.update(0, 0.0)
    for _ in range(500):
        stats.update(0, 1.0)
    # Plain averaging would sit near 0.5; the discounted estimate hugs the recent value.
    assert stats.value_estimates()[0] > 0.98


def test_epsilon_greedy_uniform_at_eps_one():
    rng = np.random.default_rng(6)
    values = np.array([0.0, 0.0, 10.0, 0.0, 0.0])
    draws = 50_000
    counts = np.bincount(
        [epsilon_greedy(values, 1.0, rng) for _ in range(draws)], minlength=5
    )
    chi2 = float(((counts - draws / 5) ** 2 / (draws / 5)).sum())
    assert chi2 < sstats.chi2.ppf(0.999, df=4)


def test_epsilon_greedy_exploits_at_eps_zero():
    rng = np.random.default_rng(7)
    values = np.array([0.0, 2.0, 1.0])
    assert all(epsilon_greedy(values, 0.0, rng) == 1 for _ in range(50))
    with pytest.raises(ValueError):
        epsilon_greedy(values, 1.5, rng)


# ---------------------------------------------------------------------------
# StrategyAgent


def make_agent(policy=PolicyKind.EPS_GREEDY_DQN, **kw) -> StrategyAgent:
    cfg = AgentConfig(policy_kind=policy, **kw)
    return StrategyAgent(
        name="opt",
        n_actions=5,
        state_dim=24,
        cfg=cfg,
        schedule=ExplorationSchedule(horizon=100),
        rng=np.random.default_rng(8),
    )


def make_batch(rng, n, component_index=1, n_actions=5):
    batch = []
    for _ in range(n):
        ids = [0, 0, 0, 0]
        ids[component_index] = int(rng.integers(0, n_actions))
        batch.append(
            Transition(
                state=ext(rng.normal(size=24)),
                joint_action=JointConfig(*ids),
                reward=float(rng.normal()),
                next_state=ext(rng.normal(size=24)),
                terminal=bool(rng.random() < 0.1),
            )
        )
    return batch


def test_learn_batch_matches_manual_average():
    # The minibatch move must equal the average of single-transition moves
    # evaluated at the shared pre-update parameters.
    rng = np.random.default_rng(9)
    agent = make_agent(alpha=0.1, gamma=0.9)
    batch = make_batch(rng, 4)

    reference = agent.net.clone()
    accum = None
    for t in batch:
        probe = reference.clone()
        frozen = TargetNetwork(agent.target.net)
        td_update(
            probe,
            frozen,
            t.state.features,
            t.joint_action.component_ids()[1],
            t.reward,
            t.next_state.features,
            t.terminal,
            AgentConfig(alpha=0.1, gamma=0.9),
        )
        move = probe.get_flat() - reference.get_flat()
        accum = move if accum is None else accum + move

    agent.learn_batch(batch, component_index=1)
    got_move = agent.net.get_flat() - reference.get_flat()
    assert np.allclose(got_move, accum / len(batch), atol=1e-10)
    assert agent.updates_applied == 1


def test_learn_batch_uses_per_agent_rewards_when_present():
    rng = np.random.default_rng(10)
    agent_a = make_agent(alpha=0.05)
    agent_b = make_agent(alpha=0.05)
    assert np.array_equal(agent_a.net.get_flat(), agent_b.net.get_flat())  # same init seed

    s, s2 = ext(rng.normal(size=24)), ext(rng.normal(size=24))
    shared = Transition(s, JointConfig(0, 3, 0, 0), reward=5.0, next_state=s2, terminal=False)
    split = Transition(
        s, JointConfig(0, 3, 0, 0), reward=5.0, next_state=s2, terminal=False,
        reward_per_agent=(0.0, -1.0, 0.0, 0.0),
    )
    agent_a.learn_batch([shared], component_index=1)
    agent_b.learn_batch([split], component_index=1)
    assert not np.allclose(agent_a.net.get_flat(), agent_b.net.get_flat())

    agent_c = make_agent(alpha=0.05)
    direct = Transition(s, JointConfig(0, 3, 0, 0), reward=-1.0, next_state=s2, terminal=False)
    agent_c.learn_batch([direct], component_index=1)
    assert np.allclose(agent_b.net.get_flat(), agent_c.net.get_flat(), atol=1e-15)


def test_learn_batch_skips_on_poisoned_input():
    agent = make_agent()
    rng = np.random.default_rng(11)
    batch = make_batch(rng, 2)
    agent.target.net.weights[0][:] = np.inf
    before = agent.net.get_flat().copy()
    with np.errstate(invalid="ignore"):
        agent.learn_batch(batch, component_index=1)
    assert np.array_equal(agent.net.get_flat(), before)
    assert agent.updates_skipped == 1
    assert agent.updates_applied == 0


def test_maybe_sync_interval():
    agent = make_agent(sync_interval=10)
    assert not agent.maybe_sync(5)
    assert not agent.maybe_sync(9)
    assert agent.maybe_sync(10)
    assert agent.target.last_sync_step == 10
    assert not agent.maybe_sync(19)
    assert agent.maybe_sync(20)
    assert agent.target.sync_count == 2


def test_agent_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(12)
    agent = make_agent(alpha=0.05)
    agent.learn_batch(make_batch(rng, 8), component_index=1)
    state = ext(rng.normal(size=24))
    q = agent.q_values(state).copy()

    restored = make_agent(alpha=0.05)
    restored.load_checkpoint(agent.to_checkpoint())
    assert np.array_equal(restored.q_values(state), q)
    with pytest.raises(ValueError):
        restored.load_checkpoint({"version": 0})


def test_select_dispatches_by_policy():
    state = ext(np.zeros(24))
    rng = np.random.default_rng(13)

    ucb = make_agent(policy=PolicyKind.UCB1)
    order = []
    for t in range(5):
        a = ucb.select(state, t, rng)
        ucb.observe_reward(a, 0.0)
        order.append(a)
    assert order == [0, 1, 2, 3, 4]  # unpulled arms first, in id order

    thom = make_agent(policy=PolicyKind.THOMPSON)
    for t in range(50):
        a = thom.select(state, t, rng)
        thom.observe_reward(a, 1.0 if a == 2 else -1.0)
    assert thom.greedy(state) == 2


# ---------------------------------------------------------------------------
# tabular learner


def test_tabular_update_closed_form():
    learner = TabularQLearner(n_states=2, n_actions=2, gamma=0.9, step_c=20.0)
    learner.q[1] = [0.0, 2.0]
    delta = learner.update(0, 0, r=1.0, s_next=1, terminal=False)
    # First visit: alpha = 20/21, target = 1 + 0.9*2 = 2.8, delta = 2.8.
    assert delta == pytest.approx(2.8)
    assert learner.q[0, 0] == pytest.approx(20.0 / 21.0 * 2.8)
    assert learner.visits[0, 0] == 1

    delta2 = learner.update(0, 0, r=1.0, s_next=1, terminal=True)
    alpha2 = 20.0 / 22.0
    want = learner.q[0, 0]
    assert delta2 == pytest.approx(1.0 - (20.0 / 21.0 * 2.8))
    assert want == pytest.approx(20.0 / 21.0 * 2.8 + alpha2 * delta2)


def test_tabular_terminal_ignores_bootstrap():
    learner = TabularQLearner(2, 2, gamma=0.9)
    learner.q[1] = [100.0, 100.0]
    learner.update(0, 1, r=0.5, s_next=1, terminal=True)
    assert learner.q[0, 1] == pytest.approx(20.0 / 21.0 * 0.5)


def test_agent_config_validation():
    with pytest.raises(ValueError):
        AgentConfig(alpha=0.0)
    with pytest.raises(ValueError):
        AgentConfig(gamma=1.0)
    with pytest.raises(ValueError):
        AgentConfig(sync_interval=0)
    with pytest.raises(ValueError):
        TabularQLearner(2, 2, gamma=1.0)
