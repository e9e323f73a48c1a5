"""Outer learner: lifetime value targets, truncated meta-gradient, Adam.

Each meta-update runs a batch of independent lifetime workers. A worker
unrolls N inner policy-gradient updates on one tape, computes the
meta-gradient of the lifetime objective with respect to the reward
parameters (the dependence flows through the updated policy parameters),
and the aggregator averages gradients across the batch before applying
Adam to the reward and value parameters.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import envs
from .config import effective_episode_params
from .inner import (InnerConfig, LifetimeRunner, NonFiniteError, collect_window,
                    discounted_returns_np, intrinsic_returns, policy_loss,
                    sgd_step_differentiable)
from .networks import (Architecture, RecurrentState, leaves,
                       feed_forward_reward_forward, init_feedforward_reward_params,
                       init_policy_params, init_reward_params, init_value_params,
                       reward_forward, value_forward, values)

log = logging.getLogger(__name__)


@dataclass
class MetaConfig:
    outer_unroll: int = 5
    gamma: float = 0.99
    eta_lr: float = 0.001
    value_lr: float = 0.001
    batch_lifetimes: int = 8
    meta_updates: int = 20000
    objective: str = "lifetime"
    use_baseline: bool = False

    def __post_init__(self):
        if self.outer_unroll < 1 or not (0.0 < self.gamma <= 1.0):
            raise ValueError("bad meta configuration")


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params):
    return AdamState(m={k: np.zeros_like(p) for k, p in params.items()},
                     v={k: np.zeros_like(p) for k, p in params.items()})


def adam_update(params, grads, state, lr):
    """Bias-corrected Adam step; non-finite gradient entries are skipped."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    out = {}
    for name, p in params.items():
        g = grads[name]
        bad = ~np.isfinite(g)
        if bad.any():
            log.warning("skipping %d non-finite gradient entries in %s", bad.sum(), name)
            g = np.where(bad, 0.0, g)
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = state.m[name] / c1
        v_hat = state.v[name] / c2
        out[name] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return out, state


# ---------------------------------------------------------------------------
# targets and losses
# ---------------------------------------------------------------------------


def lifetime_td_target(rewards, gamma, bootstrap, lifetime_done):
    """n-step extrinsic returns with a lifetime-value bootstrap.

    Episode dones inside the window do not cut the sum: the lifetime
    continues across episodes. Only the lifetime end zeroes the bootstrap.
    """
    running = 0.0 if lifetime_done else float(bootstrap)
    out = np.zeros(len(rewards))
    for t in range(len(rewards) - 1, -1, -1):
        running = rewards[t] + gamma * running
        out[t] = running
    return out


def meta_loss(steps, targets, baselines=None):
    """Surrogate whose eta-gradient is the truncated meta-gradient.

    The return coefficients are detached plain numbers: only the updated
    policy parameters inside the log-probabilities carry eta-dependence.
    """
    total = None
    for i, step in enumerate(steps):
        coef = float(targets[i]) - (float(baselines[i]) if baselines is not None else 0.0)
        term = ad.scale(step.log_prob, coef)
        total = term if total is None else ad.add(total, term)
    return ad.scale(total, -1.0 / len(steps))


def episodic_meta_loss(steps, gamma_bar):
    """Ablation: coefficients are episodic extrinsic returns, reset at dones."""
    rewards = [s.extrinsic_reward for s in steps]
    dones = [s.done for s in steps]
    return meta_loss(steps, discounted_returns_np(rewards, dones, gamma_bar))


def value_loss(preds, targets, v_start=None, start_target=None):
    """Mean squared TD error of the lifetime value predictions."""
    terms = []
    if v_start is not None and v_start.tracked:
        terms.append((v_start, float(start_target)))
    for i in range(len(preds) - 1):
        terms.append((preds[i], float(targets[i + 1])))
    if not terms:
        return None
    total = None
    for pred, target in terms:
        d = ad.addc(pred, -target)
        sq = ad.mul(d, d)
        total = sq if total is None else ad.add(total, sq)
    return ad.scale(total, 1.0 / len(terms))


def update_value(phi, targets, preds, state, lr):
    """One Adam step of the lifetime value network on detached targets."""
    loss = value_loss(preds, targets)
    grads = ad.backward(loss, list(phi.values()))
    grad_map = {n: g.data for n, g in zip(phi, grads)}
    return adam_update(values(phi), grad_map, state, lr)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def build_architectures(cfg):
    """Policy and reward/value architectures for the configured domain."""
    limit, episodes = effective_episode_params(cfg)
    probe_rng = np.random.default_rng(0)
    task = envs.sample_task(cfg.domain, probe_rng, room_size=cfg.room_size,
                            key_box_variant=cfg.key_box_variant,
                            episode_time_limit=limit, episodes_per_lifetime=episodes)
    h, w = envs.layout_walls(task).shape
    n_actions = 8 if cfg.action_mode == "extended" else 4
    common = dict(obs_shape=(envs.OBS_CHANNELS, h, w), conv_filters=cfg.conv_filters,
                  fc_width=cfg.fc_width, lstm_width=cfg.lstm_width, dtype=cfg.dtype)
    policy_arch = Architecture(n_actions=n_actions, **common)
    feat_arch = Architecture(n_actions=n_actions, feat_actions=4, **common)
    return policy_arch, feat_arch


def sample_lifetime_task(cfg, rng):
    limit, episodes = effective_episode_params(cfg)
    return envs.sample_task(cfg.domain, rng, room_size=cfg.room_size,
                            key_box_variant=cfg.key_box_variant,
                            episode_time_limit=limit, episodes_per_lifetime=episodes)


def lifetime_rng(seed, worker, lifetime):
    """Counter-based per-lifetime stream."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, worker, lifetime))))


class Worker:
    """One lifetime worker: env, policy, and carried recurrent state."""

    def __init__(self, index, seed, cfg, policy_arch, feat_arch):
        self.index = index
        self.seed = seed
        self.cfg = cfg
        self.policy_arch = policy_arch
        self.feat_arch = feat_arch
        self.lifetime_count = 0
        self.runner = None

    def start_lifetime(self):
        self.rng = lifetime_rng(self.seed, self.index, self.lifetime_count)
        self.lifetime_count += 1
        task = sample_lifetime_task(self.cfg, self.rng)
        self.theta = init_policy_params(self.rng, self.policy_arch)
        self.runner = LifetimeRunner(task, self.rng, self.policy_arch,
                                     feat_action_width=4,
                                     action_mode=self.cfg.action_mode,
                                     dtype=self.cfg.dtype)
        width = self.feat_arch.lstm_width
        self.reward_state = (np.zeros(width, dtype=self.cfg.dtype),
                             np.zeros(width, dtype=self.cfg.dtype))
        self.value_state = (np.zeros(width, dtype=self.cfg.dtype),
                            np.zeros(width, dtype=self.cfg.dtype))
        self.v_carry = 0.0
        self.fresh = True

    @property
    def needs_lifetime(self):
        return self.runner is None or self.runner.lifetime_done


class _StreamBox:
    """Mutable holder threading a recurrent state through closures."""

    def __init__(self, state):
        self.state = state


@dataclass
class OuterResult:
    eta_grads: dict | None
    phi_grads: dict | None
    steps: int
    episodes: int
    intrinsic_sum: float
    entropy_sum: float
    lifetime_return: float
    lifetime_done: bool
    meta_loss_value: float = 0.0


def run_outer_window(worker, eta_np, phi_np, cfg, scripted=None, compute_grads=True):
    """Unroll N inner updates on a fresh tape; return batch-ready gradients."""
    tape = ad.Tape()
    eta = leaves(tape, eta_np)
    phi = leaves(tape, phi_np)
    theta = leaves(tape, worker.theta)  # window-initial policy is detached
    feat_arch = worker.feat_arch
    inner_cfg = InnerConfig(alpha=cfg.alpha, gamma_bar=cfg.gamma_bar,
                            entropy_coef=cfg.entropy_coef, unroll_length=cfg.unroll_length)

    r_box = _StreamBox(RecurrentState(ad.Tensor(worker.reward_state[0]),
                                      ad.Tensor(worker.reward_state[1])))
    v_box = _StreamBox(RecurrentState(ad.Tensor(worker.value_state[0]),
                                      ad.Tensor(worker.value_state[1])))
    value_preds = []

    feedforward = cfg.reward_input == "feedforward"

    def reward_fn(features):
        if feedforward:
            return feed_forward_reward_forward(eta, features, feat_arch)
        r, r_box.state = reward_forward(eta, features, r_box.state, feat_arch)
        return r

    def value_fn(features):
        v, v_box.state = value_forward(phi, features, v_box.state, feat_arch)
        value_preds.append(v)
        return v

    if worker.fresh:
        f0 = worker.runner.initial_features()
        if not feedforward:
            reward_fn(f0)  # advance the reward stream past the start state
        v_start, v_box.state = value_forward(phi, f0, v_box.state, feat_arch)
        worker.fresh = False
    else:
        v_start = ad.Tensor(np.asarray(worker.v_carry))

    steps = []
    for _ in range(cfg.outer_unroll):
        window = collect_window(theta, worker.runner, inner_cfg.unroll_length,
                                worker.rng, reward_fn, value_fn, scripted=scripted)
        returns = intrinsic_returns(window, inner_cfg.gamma_bar)
        loss = policy_loss(window, returns, inner_cfg.entropy_coef)
        theta = sgd_step_differentiable(theta, loss, inner_cfg.alpha)
        steps.extend(window.steps)
        if worker.runner.lifetime_done:
            break

    lifetime_done = worker.runner.lifetime_done
    rewards = [s.extrinsic_reward for s in steps]
    bootstrap = float(value_preds[-1].data)
    targets = lifetime_td_target(rewards, cfg.gamma, bootstrap, lifetime_done)

    if cfg.objective == "episodic":
        loss_meta = episodic_meta_loss(steps, cfg.gamma_bar)
    else:
        baselines = None
        if cfg.use_baseline:
            baselines = [float(v_start.data)] + [float(v.data) for v in value_preds[:-1]]
        loss_meta = meta_loss(steps, targets, baselines)
    if not np.isfinite(loss_meta.data):
        raise NonFiniteError("non-finite meta loss")
    eta_grad_map = None
    phi_grad_map = None
    if compute_grads:
        eta_grads = ad.backward(loss_meta, [eta[n] for n in eta])
        eta_grad_map = {n: g.data for n, g in zip(eta, eta_grads)}
        vloss = value_loss(value_preds, targets, v_start, targets[0])
        if vloss is not None:
            phi_grads = ad.backward(vloss, [phi[n] for n in phi])
            phi_grad_map = {n: g.data for n, g in zip(phi, phi_grads)}

    # truncation boundary: carry values forward, drop the tape
    worker.theta = values(theta)
    worker.reward_state = (r_box.state.hidden.data.copy(), r_box.state.cell.data.copy())
    worker.value_state = (v_box.state.hidden.data.copy(), v_box.state.cell.data.copy())
    worker.v_carry = bootstrap

    finished = [s for s in steps if s.done]
    return OuterResult(
        eta_grads=eta_grad_map,
        phi_grads=phi_grad_map,
        steps=len(steps),
        episodes=len(finished),
        intrinsic_sum=float(sum(float(s.intrinsic_reward.data) for s in steps)),
        entropy_sum=float(sum(float(s.entropy.data) for s in steps)),
        lifetime_return=worker.runner.lifetime_return,
        lifetime_done=lifetime_done,
        meta_loss_value=float(loss_meta.data),
    )


def average_grads(grad_maps):
    names = grad_maps[0].keys()
    return {n: np.mean([g[n] for g in grad_maps], axis=0) for n in names}


@dataclass
class TrainResult:
    eta: dict
    phi: dict
    metrics: list
    aborted_lifetimes: int = 0


def train(cfg, seed, metrics_cb=None, checkpoint_cb=None):
    """Meta-train the intrinsic reward on the configured domain.

    Returns the final reward/value parameters and the metrics rows. The
    whole loop is single-threaded and deterministic for a given seed.
    """
    policy_arch, feat_arch = build_architectures(cfg)
    init_rng = np.random.default_rng(np.random.SeedSequence((seed, 0xE7A)))
    if cfg.reward_input == "feedforward":
        eta = init_feedforward_reward_params(init_rng, feat_arch)
    else:
        eta = init_reward_params(init_rng, feat_arch)
    phi = init_value_params(init_rng, feat_arch)
    eta_opt = adam_init(eta)
    phi_opt = adam_init(phi)

    workers = [Worker(i, seed, cfg, policy_arch, feat_arch)
               for i in range(cfg.batch_lifetimes)]
    metrics = []
    aborted = 0
    started = 0
    acc = dict(episodes=0, ep_return=0.0, intrinsic=0.0, entropy=0.0, steps=0,
               lifetimes_done=0, lifetime_return=0.0)
    t0 = time.perf_counter()

    for update in range(cfg.meta_updates):
        eta_batch, phi_batch = [], []
        for worker in workers:
            if worker.needs_lifetime:
                worker.start_lifetime()
                started += 1
            before = len(worker.runner.episode_returns)
            try:
                result = run_outer_window(worker, eta, phi, cfg)
            except NonFiniteError:
                aborted += 1
                worker.runner = None  # restart this lifetime next round
                if started >= 10 and aborted > 0.1 * started:
                    raise RuntimeError(
                        f"{aborted}/{started} lifetimes aborted on non-finite values")
                continue
            eta_batch.append(result.eta_grads)
            if result.phi_grads is not None:
                phi_batch.append(result.phi_grads)
            new_returns = worker.runner.episode_returns[before:]
            acc["episodes"] += len(new_returns)
            acc["ep_return"] += float(sum(new_returns))
            acc["intrinsic"] += result.intrinsic_sum
            acc["entropy"] += result.entropy_sum
            acc["steps"] += result.steps
            if result.lifetime_done:
                acc["lifetimes_done"] += 1
                acc["lifetime_return"] += result.lifetime_return

        if eta_batch:
            eta, eta_opt = adam_update(eta, average_grads(eta_batch), eta_opt, cfg.eta_lr)
        if phi_batch:
            phi, phi_opt = adam_update(phi, average_grads(phi_batch), phi_opt, cfg.value_lr)

        if (update + 1) % cfg.log_interval == 0:
            wall = 0 if cfg.clock == "none" else int((time.perf_counter() - t0) * 1000)
            row = dict(
                phase="train", step=update + 1, lifetime=started, seed=seed,
                episode_return=acc["ep_return"] / max(1, acc["episodes"]),
                lifetime_return=acc["lifetime_return"] / max(1, acc["lifetimes_done"]),
                intrinsic_reward=acc["intrinsic"] / max(1, acc["steps"]),
                entropy=acc["entropy"] / max(1, acc["steps"]),
                wall_ms=wall,
            )
            metrics.append(row)
            if metrics_cb:
                metrics_cb(row)
            acc = {k: 0 if isinstance(v, int) else 0.0 for k, v in acc.items()}
        if checkpoint_cb and (update + 1) % cfg.checkpoint_interval == 0:
            checkpoint_cb(update + 1, eta, phi)

    return TrainResult(eta=eta, phi=phi, metrics=metrics, aborted_lifetimes=aborted)
