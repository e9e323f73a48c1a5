"""Inner-loop semantics: returns, policy updates, Q-learning."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metareward import autodiff as ad
from metareward import envs
from metareward.config import load_config
from metareward.inner import (InnerConfig, LifetimeRunner, StepRecord,
                              TrajectoryWindow, collect_window,
                              discounted_returns_np, epsilon_greedy,
                              intrinsic_returns, policy_loss,
                              q_learning_step, sgd_step_differentiable)
from metareward.meta import build_architectures
from metareward.networks import init_policy_params, leaves


def _window_from(rewards, dones):
    steps = [StepRecord(obs=None, action=0, features=None,
                        log_prob=ad.Tensor(np.asarray(0.0)),
                        entropy=ad.Tensor(np.asarray(0.0)),
                        intrinsic_reward=ad.Tensor(np.asarray(float(r))),
                        extrinsic_reward=float(r), done=float(d),
                        lifetime_done=False, episode_index=0)
             for r, d in zip(rewards, dones)]
    return TrajectoryWindow(steps)


@given(st.lists(st.tuples(st.floats(-2, 2), st.booleans()), min_size=1, max_size=12),
       st.floats(0.05, 1.0))
@settings(max_examples=200, deadline=None)
def test_intrinsic_returns_match_reference(pairs, gamma):
    """Tape-computed returns equal a plain reverse-scan implementation."""
    rewards = [p[0] for p in pairs]
    dones = [p[1] for p in pairs]
    window = _window_from(rewards, dones)
    got = [float(g.data) for g in intrinsic_returns(window, gamma)]
    want = discounted_returns_np(rewards, dones, gamma)
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_returns_reset_at_done():
    window = _window_from([1.0, 2.0, 3.0], [False, True, False])
    got = [float(g.data) for g in intrinsic_returns(window, 0.9)]
    assert got == pytest.approx([1.0 + 0.9 * 2.0, 2.0, 3.0])


def test_zero_discount_returns_are_the_rewards():
    window = _window_from([0.3, -0.7, 1.1], [False, False, False])
    got = [float(g.data) for g in intrinsic_returns(window, 0.0)]
    assert got == pytest.approx([0.3, -0.7, 1.1])


def test_no_bootstrap_at_window_edge():
    """The last step's return is its own reward regardless of what follows."""
    window = _window_from([5.0, 5.0], [False, False])
    got = [float(g.data) for g in intrinsic_returns(window, 0.9)]
    assert got[-1] == pytest.approx(5.0)


def test_inner_config_validation():
    with pytest.raises(ValueError):
        InnerConfig(gamma_bar=0.0)
    with pytest.raises(ValueError):
        InnerConfig(unroll_length=0)


def test_sgd_step_moves_against_the_gradient():
    tape = ad.Tape()
    theta = {"w": tape.leaf(np.array([3.0, -2.0]))}
    loss = ad.sum_all(ad.mul(theta["w"], theta["w"]))  # grad = 2w
    new = sgd_step_differentiable(theta, loss, alpha=0.5)
    np.testing.assert_allclose(new["w"].data, [3.0 - 0.5 * 6.0, -2.0 + 0.5 * 4.0])
    assert new["w"].tracked  # the update stays on the tape


def test_sgd_step_is_differentiable_through_the_gradient():
    """d(theta')/d(scale) exists: the update is second-order transparent."""
    tape = ad.Tape()
    s = tape.leaf(np.asarray(2.0))
    theta = {"w": tape.leaf(np.array([1.0]))}
    loss = ad.sum_all(ad.smul(ad.mul(theta["w"], theta["w"]), s))  # s * w^2
    new = sgd_step_differentiable(theta, loss, alpha=0.1)
    # theta' = w - 0.1 * 2sw, so d theta'/d s = -0.2 w = -0.2
    out = ad.sum_all(new["w"])
    (g,) = ad.backward(out, [s])
    assert float(g.data) == pytest.approx(-0.2)


def test_collect_window_auto_resets_and_stops_at_lifetime_end():
    cfg = load_config(domain="fixed_abc", overrides=dict(
        room_size=3, episode_time_limit=2, episodes_per_lifetime=2,
        conv_filters=4, fc_width=4, lstm_width=4, precision="float64"))
    policy_arch, _ = build_architectures(cfg)
    rng = np.random.default_rng(0)
    task = envs.sample_task(cfg.domain, rng, room_size=3,
                            episode_time_limit=2, episodes_per_lifetime=2)
    runner = LifetimeRunner(task, rng, policy_arch)
    tape = ad.Tape()
    theta = leaves(tape, init_policy_params(rng, policy_arch))
    window = collect_window(theta, runner, 100, rng)
    assert runner.lifetime_done
    assert window.steps[-1].lifetime_done
    assert len(window.steps) <= 4  # 2 episodes x <= 2 steps
    assert len(runner.episode_returns) == 2
    with pytest.raises(RuntimeError):
        collect_window(theta, runner, 1, rng)


def test_policy_loss_is_negative_mean_weighted_log_prob():
    window = _window_from([1.0, 1.0], [False, False])
    window.steps[0].log_prob = ad.Tensor(np.asarray(-0.5))
    window.steps[1].log_prob = ad.Tensor(np.asarray(-1.5))
    returns = [ad.Tensor(np.asarray(2.0)), ad.Tensor(np.asarray(4.0))]
    loss = policy_loss(window, returns, entropy_coef=0.0)
    assert float(loss.data) == pytest.approx(-(2 * -0.5 + 4 * -1.5) / 2)


def test_bandit_reinforce_improves_best_arm():
    """Tabular REINFORCE on a 4-arm bandit concentrates on the best arm."""
    rng = np.random.default_rng(9)
    means = np.array([0.0, 1.0, 0.2, -0.3])
    logits_np = np.zeros(4)
    for _ in range(2000):
        tape = ad.Tape()
        logits = tape.leaf(logits_np)
        lp = ad.softmax_log_probs(logits)
        a = int(rng.choice(4, p=np.exp(lp.data)))
        r = means[a] + rng.normal(0, 0.1)
        loss = ad.scale(ad.index_select(lp, a), -r)
        (g,) = ad.backward(loss, [logits])
        logits_np = logits_np - 0.1 * g.data
    probs = np.exp(logits_np) / np.exp(logits_np).sum()
    assert np.argmax(probs) == 1 and probs[1] > 0.9


def test_q_learning_converges_on_two_state_chain():
    """TD(0) on a deterministic 2-step task reaches the known fixed point."""
    cfg = load_config(domain="fixed_abc", overrides=dict(
        room_size=3, conv_filters=4, fc_width=8, lstm_width=4, precision="float64"))
    policy_arch, _ = build_architectures(cfg)
    rng = np.random.default_rng(10)
    task = envs.sample_task(cfg.domain, rng, room_size=3,
                            episode_time_limit=4, episodes_per_lifetime=10**6)
    q = init_policy_params(rng, policy_arch)

    def q_vector(q, obs):
        from metareward.networks import policy_forward
        with ad.no_recording():
            return policy_forward({n: ad.Tensor(v) for n, v in q.items()},
                                  obs, policy_arch).data

    def rollout(q, epsilon):
        runner = LifetimeRunner(task, rng, policy_arch)
        records = []
        while len(records) < 4:
            obs = runner.obs
            a = epsilon_greedy(q_vector(q, obs), epsilon, rng)
            result, features = runner.env_step(a)
            records.append(StepRecord(
                obs=obs, action=a, features=features, log_prob=None,
                entropy=None, intrinsic_reward=None,
                extrinsic_reward=result.extrinsic_reward,
                done=float(result.episode_done), lifetime_done=False,
                episode_index=0))
            if result.episode_done:
                break
        return records

    for _ in range(300):
        q = q_learning_step(q, TrajectoryWindow(rollout(q, 0.3)),
                            0.2, 0.9, policy_arch)

    # the greedy policy from the start state should find the +1 object (A)
    total = sum(r.extrinsic_reward for r in rollout(q, 0.0))
    assert total == pytest.approx(1.0)


def test_epsilon_greedy_extremes():
    rng = np.random.default_rng(11)
    q = np.array([0.0, 5.0, 1.0])
    assert epsilon_greedy(q, 0.0, rng) == 1
    picks = {epsilon_greedy(q, 1.0, rng) for _ in range(100)}
    assert picks == {0, 1, 2}
