"""DIAL learner: DRU, action selection, embedding, message wiring, targets."""

import numpy as np
import pytest
from helpers import collect_graph_leaves, replay_dial_loss

from cyberdial import autodiff as ad
from cyberdial.autodiff import Value, backward, finite_diff_check
from cyberdial.dial import (CNet, DialConfig, DialTrainer, dru, epsilon_at,
                            select_action)
from cyberdial.lanes import CyberLane
from cyberdial.scenario import builtin_scenario, with_detection_rate
from cyberdial.seeding import derive_rng
from cyberdial.switch_riddle import SwitchRiddleEnv


def small_factory(detection=0.5, sau=True, block=True):
    cfg = with_detection_rate(builtin_scenario("small"), detection)
    return lambda: CyberLane(cfg, sau_enabled=sau, block_enabled=block)


def tiny_trainer(env_factory, seed=0, **overrides):
    defaults = dict(epochs=1, episodes_per_epoch=8, rollout_lanes=4, hidden=16,
                    eval_episodes=4)
    defaults.update(overrides)
    return DialTrainer(DialConfig(**defaults), env_factory, seed)


# -- DRU -------------------------------------------------------------------------


def test_dru_exec_thresholds():
    assert dru(Value(np.array([[0.3]])), "exec", 2.0)[0, 0] == 1.0
    assert dru(Value(np.array([[-1.2]])), "exec", 2.0)[0, 0] == 0.0


def test_dru_train_sigma_zero_at_origin():
    out = dru(Value(np.zeros((1, 1))), "train", 0.0)
    assert out.data[0, 0] == 0.5


def test_dru_train_outputs_in_open_interval():
    rng = np.random.default_rng(0)
    q = Value(rng.normal(0, 5, size=(64, 2)))
    out = dru(q, "train", 2.0, rng=rng)
    assert np.all(out.data > 0.0) and np.all(out.data < 1.0)


# -- action selection ---------------------------------------------------------------


def test_select_uniform_at_epsilon_one():
    rng = np.random.default_rng(0)
    mask = np.array([True, False, True, True, False])
    counts = np.zeros(5)
    for _ in range(10000):
        counts[select_action(np.zeros(5), mask, 1.0, rng)] += 1
    assert counts[~mask].sum() == 0
    observed = counts[mask]
    expected = 10000 / 3
    chi2 = float(((observed - expected) ** 2 / expected).sum())
    assert chi2 < 13.8  # chi-square df=2, alpha ~ 0.001


def test_select_greedy_argmax():
    rng = np.random.default_rng(0)
    q = np.array([0.1, 3.0, -1.0])
    assert select_action(q, np.ones(3, bool), 0.0, rng) == 1


def test_select_masked_argmax_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(200):
        q = rng.normal(size=7)
        mask = rng.random(7) < 0.6
        if not mask.any():
            mask[0] = True
        got = select_action(q, mask, 0.0, rng)
        best = max(np.flatnonzero(mask), key=lambda i: (q[i], -i))
        assert got == best and mask[got]


def test_masked_actions_probability_zero_under_any_epsilon():
    rng = np.random.default_rng(2)
    mask = np.array([True, False, True])
    for eps in (0.0, 0.3, 1.0):
        for _ in range(500):
            assert select_action(rng.normal(size=3), mask, eps, rng) != 1


# -- embedding ------------------------------------------------------------------------


def make_cnet(hidden=12, cards=(16, 16, 4), n_agents=2, actions=7, bits=1, seed=0):
    return CNet(cards, n_agents, actions, bits, hidden, derive_rng(seed, "params"))


def test_embed_zero_indices_matches_direct_table_reads():
    net = make_cnet()
    obs_idx = np.zeros((1, 3), dtype=np.int64)
    m_in = ad.constant(np.zeros((1, 1)))
    z = net.embed_input(obs_idx, m_in, np.zeros(1, dtype=np.int64),
                        np.zeros(1, dtype=np.int64))
    expected = (net.obs_tables[0].data[0] + net.obs_tables[1].data[0]
                + net.obs_tables[2].data[0] + net.msg_in.b.data
                + net.uprev_table.data[0] + net.agent_table.data[0])
    assert np.allclose(z.data[0], expected, rtol=0, atol=0)


def test_embed_additivity_single_host_change():
    net = make_cnet()
    m_in = ad.constant(np.zeros((1, 1)))
    base_idx = np.array([[2, 3, 1]], dtype=np.int64)
    changed = np.array([[9, 3, 1]], dtype=np.int64)
    u = np.zeros(1, dtype=np.int64)
    a = np.ones(1, dtype=np.int64)
    z0 = net.embed_input(base_idx, m_in, u, a)
    z1 = net.embed_input(changed, m_in, u, a)
    diff = z1.data - z0.data
    table_diff = net.obs_tables[0].data[9] - net.obs_tables[0].data[2]
    assert np.allclose(diff[0], table_diff, rtol=0, atol=1e-12)


def test_embed_gradient_wrt_message():
    net = make_cnet()
    rng = np.random.default_rng(3)
    m = Value(rng.normal(size=(2, 1)))
    obs_idx = rng.integers(0, 4, size=(2, 3))

    def f():
        z = net.embed_input(obs_idx, m, np.zeros(2, dtype=np.int64),
                            np.arange(2, dtype=np.int64))
        return ad.sum_reduce(z)

    assert finite_diff_check(f, [m]) < 1e-4


def test_forward_hidden_chaining_two_step_gradient():
    net = make_cnet(hidden=6)
    rng = np.random.default_rng(4)
    m = ad.constant(np.zeros((1, 1)))
    obs1 = rng.integers(0, 4, size=(1, 3))
    obs2 = rng.integers(0, 4, size=(1, 3))
    params = [net.store[n] for n in net.store.names()]

    def f():
        h = net.initial_hidden(1)
        z1 = net.embed_input(obs1, m, np.zeros(1, np.int64), np.zeros(1, np.int64))
        q1, _, h = net.forward(z1, h)
        z2 = net.embed_input(obs2, m, np.ones(1, np.int64), np.zeros(1, np.int64))
        q2, _, h = net.forward(z2, h)
        return ad.add_scalars([ad.sum_reduce(q1), ad.sum_reduce(q2)])

    assert finite_diff_check(f, params, max_coords=6,
                             rng=np.random.default_rng(0)) < 1e-4


def test_action_space_width_formula():
    # |U| = 1 + 3 * hosts + incident links, padded to the network max
    lane = small_factory()()
    assert lane.n_actions == (11, 11)
    assert lane.max_actions == 11
    cfg = builtin_scenario("large")
    lane = CyberLane(cfg)
    assert lane.n_actions == (18, 12, 12)
    assert lane.max_actions == 18


# -- message wiring --------------------------------------------------------------------


def test_two_agent_wiring_receiver_gets_senders_dru_output():
    trainer = tiny_trainer(small_factory())
    trace, _ = trainer.run_rollout(trainer.lane_envs, [1, 2, 3, 4], "train")
    for t in range(1, 5):
        # agent 0's incoming = agent 1's message at t-1, and vice versa
        assert np.array_equal(trace.incoming[t][0], trace.messages[t - 1][1].data)
        assert np.array_equal(trace.incoming[t][1], trace.messages[t - 1][0].data)


def test_three_agent_wiring_elementwise_sum():
    cfg = builtin_scenario("large")
    trainer = tiny_trainer(lambda: CyberLane(cfg), episodes_per_epoch=4,
                           rollout_lanes=2)
    trace, _ = trainer.run_rollout(trainer.lane_envs[:2], [1, 2], "train")
    for t in range(1, 4):
        for a in range(3):
            expected = sum(trace.messages[t - 1][j].data for j in range(3)
                           if j != a)
            assert np.allclose(trace.incoming[t][a], expected, rtol=0, atol=0)


def test_exec_zero_messages_emit_no_wire_records():
    trainer = tiny_trainer(small_factory())
    # force the message head hard negative: every exec bit is zero
    trainer.net.store["head_msg.w"].data[:] = 0.0
    trainer.net.store["head_msg.b"].data[:] = -5.0
    report = trainer.evaluate(4, collect_records=True)
    assert report["message_rate"] == 0.0
    assert all(rec["messages"] == [] for rec in report["records"])


def test_exec_nonzero_messages_are_recorded():
    trainer = tiny_trainer(small_factory())
    trainer.net.store["head_msg.w"].data[:] = 0.0
    trainer.net.store["head_msg.b"].data[:] = 5.0
    report = trainer.evaluate(2, collect_records=True)
    assert report["message_rate"] == 1.0
    assert all(len(rec["messages"]) == 2 for rec in report["records"])


# -- targets and loss --------------------------------------------------------------------


def test_td_target_arithmetic_oracle(monkeypatch):
    # one-step hand trace: y = r + gamma * maxQ = -1.1 + 0.9 * 2.0 = 0.7
    trainer = tiny_trainer(small_factory())
    trace, _ = trainer.run_rollout(trainer.lane_envs[:1], [5], "train")
    T = len(trace)
    fake_q = [np.zeros((2, 1, trainer.max_actions)) for _ in range(T)]
    fake_q[1][:, :, 0] = 2.0  # best allowed value at t=1 (sleep always legal)
    monkeypatch.setattr(trainer, "_target_q", lambda tr: fake_q)
    trace.rewards[0][0] = -1.1
    targets = trainer.td_targets(trace)
    assert targets[0][0, 0] == pytest.approx(-1.1 + 0.9 * 2.0)
    assert targets[0][0, 0] == pytest.approx(0.7)


def test_terminal_step_target_is_reward(monkeypatch):
    trainer = tiny_trainer(small_factory())
    trace, _ = trainer.run_rollout(trainer.lane_envs[:2], [5, 6], "train")
    targets = trainer.td_targets(trace)
    last = len(trace) - 1
    assert np.array_equal(targets[last], np.tile(trace.rewards[last], (2, 1)))


def test_gamma_zero_reduces_to_immediate_reward():
    trainer = tiny_trainer(small_factory())
    trace, _ = trainer.run_rollout(trainer.lane_envs[:2], [5, 6], "train")
    object.__setattr__(trainer.config, "gamma", 0.0)
    targets = trainer.td_targets(trace)
    for t in range(len(trace)):
        assert np.array_equal(targets[t], np.tile(trace.rewards[t], (2, 1)))


def test_composed_one_and_two_step_loss_gradients():
    # C-Net losses over a tiny net: replayed traces, frozen targets
    trainer = tiny_trainer(small_factory(), hidden=8, rollout_lanes=2,
                           episodes_per_epoch=4)
    trace, _ = trainer.run_rollout(trainer.lane_envs[:2], [7, 8], "train")
    for keep in (1, 2):
        short = _truncate(trace, keep)
        targets = trainer.td_targets(trace)[:keep]
        params = [trainer.net.store[n] for n in trainer.net.store.names()]

        def f():
            return replay_dial_loss(trainer, short, targets)

        err = finite_diff_check(f, params, max_coords=4,
                                rng=np.random.default_rng(keep))
        assert err < 1e-4, f"{keep}-step loss gradient error {err}"


def _truncate(trace, steps):
    import copy
    short = copy.copy(trace)
    for name in ("obs_idx", "u_prev", "route", "masks", "actions", "rewards",
                 "alive", "terminal", "noise", "q_env", "messages", "incoming",
                 "exec_bits"):
        setattr(short, name, getattr(trace, name)[:steps])
    return short


def test_cross_agent_gradient_through_message_path():
    # sender's message head must receive gradient whenever a receiver's Q
    # depends on the message (switch riddle guarantees the dependence)
    trainer = tiny_trainer(lambda: SwitchRiddleEnv(3), hidden=8)
    trace, _ = trainer.run_rollout(trainer.lane_envs, [3, 4, 5, 6], "train")
    loss = trainer.dial_loss(trace)
    backward(loss)
    g = trainer.net.store["head_msg.w"].grad
    assert g is not None and np.abs(g).max() > 0.0


def test_parameter_sharing_identity():
    trainer = tiny_trainer(small_factory())
    trace, _ = trainer.run_rollout(trainer.lane_envs[:2], [1, 2], "train")
    w = trainer.net.store["head_env.w"]
    for a in range(trainer.n_agents):
        leaves = collect_graph_leaves(trace.q_env[0][a])
        assert any(leaf is w for leaf in leaves)


# -- schedule and determinism -------------------------------------------------------------


def test_epsilon_schedule_values():
    cfg = DialConfig()
    assert epsilon_at(cfg, 0) == 1.0
    assert epsilon_at(cfg, 500_000) == pytest.approx(0.525)
    assert epsilon_at(cfg, 1_000_000) == pytest.approx(0.05)
    assert epsilon_at(cfg, 5_000_000) == pytest.approx(0.05)


def test_epsilon_monotone_nonincreasing():
    cfg = DialConfig()
    values = [epsilon_at(cfg, t) for t in range(0, 2_000_000, 50_000)]
    assert all(a >= b for a, b in zip(values, values[1:]))
    assert min(values) == pytest.approx(0.05)


def test_config_validation():
    with pytest.raises(ValueError):
        DialConfig(epsilon_start=0.05, epsilon_end=1.0)
    with pytest.raises(ValueError):
        DialConfig(gamma=-0.5)


def test_single_epoch_determinism_same_hash():
    def run():
        trainer = tiny_trainer(small_factory(), seed=42)
        trainer.train_epoch()
        return trainer.net.store.state_hash()

    assert run() == run()


def test_exec_invariance_eval_does_not_mutate():
    trainer = tiny_trainer(small_factory(), seed=1)
    before = trainer.net.store.state_hash()
    r1 = trainer.evaluate(6)
    r2 = trainer.evaluate(6)
    assert trainer.net.store.state_hash() == before
    assert np.array_equal(r1["returns"], r2["returns"])


def test_target_unchanged_between_update_epochs():
    trainer = tiny_trainer(small_factory(), seed=3, epochs=3,
                           target_update_epochs=100)
    trainer.train_epoch()
    target_hash = trainer.target_net.store.state_hash()
    online_hash = trainer.net.store.state_hash()
    assert target_hash != online_hash  # online moved
    trainer.train_epoch()
    assert trainer.target_net.store.state_hash() == target_hash


def test_rollout_masks_always_respected():
    trainer = tiny_trainer(small_factory(detection=0.3), seed=5)
    trace, _ = trainer.run_rollout(trainer.lane_envs, [11, 12, 13, 14], "train",
                                   epsilon=0.7)
    for t in range(len(trace)):
        for a in range(trainer.n_agents):
            for b in range(trace.lanes):
                assert trace.masks[t][a, b, trace.actions[t][a, b]]
