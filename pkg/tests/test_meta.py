"""Outer-loop components: targets, Adam, meta-loss, full windows."""

import numpy as np
import pytest

from metareward import autodiff as ad
from metareward import gradcheck
from metareward.config import load_config
from metareward.inner import StepRecord
from metareward.meta import (Worker, adam_init, adam_update,
                             average_grads, build_architectures,
                             lifetime_rng, lifetime_td_target, meta_loss,
                             run_outer_window, train, value_loss)
from metareward.networks import init_reward_params, init_value_params


# ---------------------------------------------------------------------------
# lifetime TD targets
# ---------------------------------------------------------------------------


def test_td_target_hand_computed():
    got = lifetime_td_target([1.0, 0.0, 0.5], gamma=0.9, bootstrap=2.0,
                             lifetime_done=False)
    assert got[2] == pytest.approx(0.5 + 0.9 * 2.0)
    assert got[1] == pytest.approx(0.9 * got[2])
    assert got[0] == pytest.approx(1.0 + 0.9 * got[1])


def test_td_target_episode_dones_do_not_cut():
    """An episode boundary inside the window keeps the accumulation going."""
    rewards = [1.0, 1.0]  # second reward ends an episode mid-lifetime
    got = lifetime_td_target(rewards, gamma=0.5, bootstrap=4.0, lifetime_done=False)
    assert got[0] == pytest.approx(1.0 + 0.5 * (1.0 + 0.5 * 4.0))


def test_td_target_lifetime_end_zeroes_bootstrap():
    got = lifetime_td_target([1.0], gamma=0.99, bootstrap=100.0, lifetime_done=True)
    assert got[0] == pytest.approx(1.0)


def test_td_target_undiscounted_full_window_is_the_remaining_sum():
    rng = np.random.default_rng(0)
    rewards = rng.normal(size=20)
    got = lifetime_td_target(rewards, gamma=1.0, bootstrap=0.0, lifetime_done=True)
    want = np.cumsum(rewards[::-1])[::-1]  # brute-force suffix sums
    np.testing.assert_allclose(got, want, atol=1e-12)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def _reference_adam(p, g, m, v, t, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    return p - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps), m, v


def test_adam_matches_reference_over_several_steps():
    rng = np.random.default_rng(1)
    params = {"w": rng.normal(size=5)}
    state = adam_init(params)
    ref_p, ref_m, ref_v = params["w"].copy(), np.zeros(5), np.zeros(5)
    for t in range(1, 6):
        g = rng.normal(size=5)
        params, state = adam_update(params, {"w": g}, state, lr=0.01)
        ref_p, ref_m, ref_v = _reference_adam(ref_p, g, ref_m, ref_v, t, 0.01)
        np.testing.assert_allclose(params["w"], ref_p, atol=1e-12)


def test_adam_skips_non_finite_entries():
    params = {"w": np.array([1.0, 1.0])}
    state = adam_init(params)
    new, _ = adam_update(params, {"w": np.array([np.nan, 1.0])}, state, lr=0.1)
    assert new["w"][0] == pytest.approx(1.0)  # untouched
    assert new["w"][1] < 1.0


# ---------------------------------------------------------------------------
# meta loss
# ---------------------------------------------------------------------------


def _fake_steps(log_prob_values):
    tape = ad.Tape()
    steps = []
    leaves_ = []
    for v in log_prob_values:
        leaf = tape.leaf(np.asarray(float(v)))
        leaves_.append(leaf)
        steps.append(StepRecord(obs=None, action=0, features=None,
                                log_prob=leaf, entropy=None, intrinsic_reward=None,
                                extrinsic_reward=0.0, done=0.0,
                                lifetime_done=False, episode_index=0))
    return steps, leaves_


def test_meta_loss_value_and_gradient():
    steps, leaves_ = _fake_steps([-0.5, -1.0])
    loss = meta_loss(steps, targets=[2.0, 3.0])
    assert float(loss.data) == pytest.approx(-(2.0 * -0.5 + 3.0 * -1.0) / 2)
    grads = ad.backward(loss, leaves_)
    assert float(grads[0].data) == pytest.approx(-1.0)   # -2.0/2
    assert float(grads[1].data) == pytest.approx(-1.5)   # -3.0/2


def test_meta_loss_baseline_shifts_coefficients():
    steps, leaves_ = _fake_steps([-0.5, -1.0])
    loss = meta_loss(steps, targets=[2.0, 3.0], baselines=[2.0, 3.0])
    grads = ad.backward(loss, leaves_)
    assert float(loss.data) == 0.0
    assert all(float(g.data) == 0.0 for g in grads)


def test_value_loss_pairs_predictions_with_next_targets():
    tape = ad.Tape()
    preds = [tape.leaf(np.asarray(v)) for v in (1.0, 2.0, 3.0)]
    targets = [10.0, 20.0, 30.0]
    loss = value_loss(preds, targets)
    # pred[0] vs target[1], pred[1] vs target[2]; the last pred bootstraps
    want = ((1.0 - 20.0) ** 2 + (2.0 - 30.0) ** 2) / 2
    assert float(loss.data) == pytest.approx(want)


# ---------------------------------------------------------------------------
# outer window and training loop
# ---------------------------------------------------------------------------


def _tiny_setup(seed=0):
    cfg = gradcheck.tiny_meta_config()
    policy_arch, feat_arch = build_architectures(cfg)
    rng = np.random.default_rng(seed)
    eta = init_reward_params(rng, feat_arch)
    phi = init_value_params(rng, feat_arch)
    return cfg, policy_arch, feat_arch, eta, phi


def test_meta_gradient_matches_finite_differences():
    assert gradcheck.check_meta_gradient(seed=0) < gradcheck.META_TOL


def test_outer_window_reports_consistent_bookkeeping():
    cfg, policy_arch, feat_arch, eta, phi = _tiny_setup()
    worker = Worker(0, 0, cfg, policy_arch, feat_arch)
    worker.start_lifetime()
    result = run_outer_window(worker, eta, phi, cfg)
    assert result.steps >= 1
    assert set(result.eta_grads) == set(eta)
    assert all(np.all(np.isfinite(g)) for g in result.eta_grads.values())
    assert np.isfinite(result.meta_loss_value)


def test_outer_window_detaches_at_the_boundary():
    """Carried policy params and recurrent states are plain arrays."""
    cfg, policy_arch, feat_arch, eta, phi = _tiny_setup()
    worker = Worker(0, 0, cfg, policy_arch, feat_arch)
    worker.start_lifetime()
    run_outer_window(worker, eta, phi, cfg)
    assert all(isinstance(v, np.ndarray) for v in worker.theta.values())
    assert all(isinstance(s, np.ndarray) for s in worker.reward_state)


def test_lifetime_rng_streams_are_distinct_and_reproducible():
    a = lifetime_rng(1, 2, 3).integers(0, 10**9, size=4)
    b = lifetime_rng(1, 2, 3).integers(0, 10**9, size=4)
    c = lifetime_rng(1, 2, 4).integers(0, 10**9, size=4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_average_grads():
    maps = [{"w": np.array([1.0, 2.0])}, {"w": np.array([3.0, 4.0])}]
    np.testing.assert_allclose(average_grads(maps)["w"], [2.0, 3.0])


def test_train_smoke_produces_metrics_and_finite_params():
    cfg = load_config(domain="fixed_abc", overrides=dict(
        room_size=3, episode_time_limit=5, episodes_per_lifetime=2,
        conv_filters=4, fc_width=4, lstm_width=4, precision="float64",
        batch_lifetimes=2, meta_updates=4, log_interval=2, clock="none"))
    result = train(cfg, seed=0)
    assert len(result.metrics) == 2
    assert all(row["wall_ms"] == 0 for row in result.metrics)
    assert all(np.all(np.isfinite(v)) for v in result.eta.values())
    assert result.aborted_lifetimes == 0


def test_train_is_deterministic():
    cfg = load_config(domain="fixed_abc", overrides=dict(
        room_size=3, episode_time_limit=5, episodes_per_lifetime=2,
        conv_filters=4, fc_width=4, lstm_width=4, precision="float64",
        batch_lifetimes=1, meta_updates=3, log_interval=1, clock="none"))
    a = train(cfg, seed=7)
    b = train(cfg, seed=7)
    for name in a.eta:
        np.testing.assert_array_equal(a.eta[name], b.eta[name])
    assert a.metrics == b.metrics
