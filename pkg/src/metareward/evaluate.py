"""Evaluation: train fresh agents under a frozen reward signal.

A reward source maps each transition to the scalar the agent maximizes:
the learned intrinsic reward (parameters frozen, no meta-gradients), the
raw extrinsic reward, or extrinsic plus a count-based bonus. The agent is
either the same policy-gradient learner as the inner loop (first-order
only) or tabular-style Q-learning over the conv network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import envs
from .baselines import (HeuristicState, VisitCounts, count_bonus,
                        heuristic_policy)
from .inner import (LifetimeRunner, StepRecord, TrajectoryWindow,
                    discounted_returns_np, epsilon_greedy, q_learning_step)
from .meta import build_architectures, lifetime_rng, sample_lifetime_task
from .networks import (RecurrentState, feed_forward_reward_forward,
                       init_policy_params, leaves, policy_forward,
                       reward_forward, sample_action)

# Worker-index offset separating evaluation rng streams from training ones.
EVAL_STREAM = 10_000


# ---------------------------------------------------------------------------
# reward sources
# ---------------------------------------------------------------------------


class ExtrinsicSource:
    """The environment's own reward; the Extrinsic-EP/LIFE baselines."""

    def reset(self, runner):
        pass

    def step(self, features, runner):
        return features.extrinsic_reward


class CountBonusSource:
    """Extrinsic reward plus a per-lifetime count-based exploration bonus."""

    def __init__(self, beta):
        self.beta = beta
        self.counts = None

    def reset(self, runner):
        self.counts = VisitCounts()

    def step(self, features, runner):
        return features.extrinsic_reward + count_bonus(
            self.counts, runner.last_state_key, self.beta)


class IntrinsicSource:
    """Frozen learned reward; forward passes only, nothing recorded."""

    def __init__(self, eta_np, feat_arch, reward_input="lstm"):
        self.params = {n: ad.Tensor(v) for n, v in eta_np.items()}
        self.arch = feat_arch
        self.feedforward = reward_input == "feedforward"
        self.state = None

    def reset(self, runner):
        if self.feedforward:
            return
        z = np.zeros(self.arch.lstm_width, dtype=self.arch.dtype)
        self.state = RecurrentState(ad.Tensor(z), ad.Tensor(z.copy()))
        with ad.no_recording():
            _, self.state = reward_forward(self.params, runner.initial_features(),
                                           self.state, self.arch)

    def step(self, features, runner):
        with ad.no_recording():
            if self.feedforward:
                return float(feed_forward_reward_forward(
                    self.params, features, self.arch).data)
            r, self.state = reward_forward(self.params, features, self.state, self.arch)
        return float(r.data)


def make_source(method, cfg, eta_np=None, feat_arch=None):
    if method == "intrinsic":
        if eta_np is None:
            raise ValueError("intrinsic evaluation needs reward parameters")
        return IntrinsicSource(eta_np, feat_arch, cfg.reward_input)
    if method in ("extrinsic_ep", "extrinsic_life"):
        return ExtrinsicSource()
    if method == "count":
        return CountBonusSource(cfg.count_beta)
    raise ValueError(f"unknown reward source: {method}")


# ---------------------------------------------------------------------------
# lifetime rollouts
# ---------------------------------------------------------------------------


@dataclass
class LifetimeLog:
    episode_returns: list
    lifetime_return: float
    steps: int
    entropy_sum: float = 0.0
    reward_sum: float = 0.0
    box_openings: int = 0


def _collect(theta_t, runner, length, rng, source, policy_arch, heatmap,
             select_action=None):
    """Roll up to ``length`` steps; returns step records with source rewards."""
    records = []
    log_entropy = 0.0
    openings = 0
    for _ in range(length):
        obs = runner.obs
        if select_action is None:
            logits = policy_forward(theta_t, obs, policy_arch)
            action, log_prob, entropy = sample_action(logits, rng)
            log_entropy += float(entropy.data)
        else:
            action = select_action(obs)
            log_prob = entropy = None
        result, features = runner.env_step(action)
        if heatmap is not None:
            heatmap[runner.last_cell] += 1
        if result.episode_done and runner.last_terminal_object is not None:
            openings += 1
        r = source.step(features, runner)
        records.append(StepRecord(
            obs=obs, action=action, features=features, log_prob=log_prob,
            entropy=entropy, intrinsic_reward=r,
            extrinsic_reward=result.extrinsic_reward,
            done=float(result.episode_done), lifetime_done=result.lifetime_done,
            episode_index=runner.state.episode_index))
        if result.lifetime_done:
            break
    return records, log_entropy, openings


def _life_returns(rewards, gamma):
    """Discounted sums that ignore episode boundaries (Extrinsic-LIFE)."""
    out = np.zeros(len(rewards))
    running = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        running = rewards[t] + gamma * running
        out[t] = running
    return out


def run_pg_lifetime(task, cfg, rng, source, policy_arch, reset_at_dones=True,
                    gamma=None, heatmap=None):
    """One lifetime of the first-order policy-gradient agent."""
    gamma = cfg.gamma_bar if gamma is None else gamma
    theta = init_policy_params(rng, policy_arch)
    runner = LifetimeRunner(task, rng, policy_arch, feat_action_width=4,
                            action_mode=cfg.action_mode, dtype=cfg.dtype)
    source.reset(runner)
    if heatmap is not None:
        heatmap[runner.last_cell] += 1
    log = LifetimeLog([], 0.0, 0)
    while not runner.lifetime_done:
        tape = ad.Tape()
        theta_t = leaves(tape, theta)
        records, ent, openings = _collect(theta_t, runner, cfg.unroll_length, rng,
                                          source, policy_arch, heatmap)
        rewards = [r.intrinsic_reward for r in records]
        if reset_at_dones:
            returns = discounted_returns_np(rewards, [r.done for r in records], gamma)
        else:
            returns = _life_returns(rewards, gamma)
        if cfg.alpha > 0.0:
            total = None
            for rec, g in zip(records, returns):
                term = ad.scale(rec.log_prob, float(g))
                if cfg.entropy_coef:
                    term = ad.add(term, ad.scale(rec.entropy, cfg.entropy_coef))
                total = term if total is None else ad.add(total, term)
            loss = ad.scale(total, -1.0 / len(records))
            grads = ad.backward(loss, [theta_t[n] for n in theta])
            theta = {n: theta[n] - cfg.alpha * g.data for n, g in zip(theta, grads)}
        log.steps += len(records)
        log.entropy_sum += ent
        log.reward_sum += float(sum(rewards))
        log.box_openings += openings
    log.episode_returns = list(runner.episode_returns)
    log.lifetime_return = runner.lifetime_return
    return log


def run_q_lifetime(task, cfg, rng, source, policy_arch, heatmap=None):
    """One lifetime of an epsilon-greedy Q-learning agent."""
    q_params = init_policy_params(rng, policy_arch)
    runner = LifetimeRunner(task, rng, policy_arch, feat_action_width=4,
                            action_mode=cfg.action_mode, dtype=cfg.dtype)
    source.reset(runner)
    if heatmap is not None:
        heatmap[runner.last_cell] += 1
    log = LifetimeLog([], 0.0, 0)

    def select(obs):
        with ad.no_recording():
            q = policy_forward({n: ad.Tensor(v) for n, v in q_params.items()},
                               obs, policy_arch)
        return epsilon_greedy(q.data, cfg.epsilon, rng)

    while not runner.lifetime_done:
        records, _, openings = _collect(None, runner, cfg.unroll_length, rng, source,
                                        policy_arch, heatmap, select_action=select)
        q_params = q_learning_step(q_params, TrajectoryWindow(records),
                                   cfg.alpha_q, cfg.gamma_bar, policy_arch)
        log.steps += len(records)
        log.reward_sum += float(sum(r.intrinsic_reward for r in records))
        log.box_openings += openings
    log.episode_returns = list(runner.episode_returns)
    log.lifetime_return = runner.lifetime_return
    return log


def run_heuristic_lifetime_log(task, rng):
    """Heuristic rollout wrapped in the common per-lifetime log shape."""
    hs = HeuristicState()
    state, _ = envs.reset_episode(task, rng=rng)
    log = LifetimeLog([], 0.0, 0)
    ep_return = 0.0
    while not state.lifetime_done:
        ep = state.episode_index
        action = heuristic_policy(task, state, hs)
        result = envs.step(state, task, action)
        log.steps += 1
        ep_return += result.extrinsic_reward
        log.lifetime_return += result.extrinsic_reward
        if result.episode_done:
            terminal = next((name for name, cell in state.object_cells.items()
                             if cell == state.agent_cell), None)
            hs.observe(ep, terminal, result.extrinsic_reward)
            log.episode_returns.append(ep_return)
            ep_return = 0.0
            if not state.lifetime_done:
                state, _ = envs.reset_episode(task, state, rng)
    return log


# ---------------------------------------------------------------------------
# multi-lifetime evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalResult:
    episode_returns: np.ndarray    # (lifetimes, episodes), NaN-padded
    lifetime_returns: np.ndarray
    heatmap: np.ndarray
    mean_entropy: float
    mean_reward: float
    box_opening_rate: float

    def mean_curve(self):
        """Per-episode extrinsic return averaged across lifetimes."""
        return np.nanmean(self.episode_returns, axis=0)


def evaluate(cfg, method, seed, eta_np=None, lifetimes=None, agent=None):
    """Train ``lifetimes`` fresh agents under the given reward source.

    ``method`` is one of intrinsic, extrinsic_ep, extrinsic_life, count,
    heuristic. The reward parameters are never modified.
    """
    lifetimes = lifetimes if lifetimes is not None else cfg.eval_lifetimes
    agent = agent or cfg.agent_algo
    policy_arch, feat_arch = build_architectures(cfg)
    if method == "heuristic" and cfg.domain is not envs.Domain.RANDOM_ABC:
        raise ValueError("heuristic baseline is defined on random_abc only")

    grid = envs.layout_walls(sample_lifetime_task(cfg, np.random.default_rng(0))).shape
    heatmap = np.zeros(grid, dtype=np.int64)
    logs = []
    for k in range(lifetimes):
        rng = lifetime_rng(seed, EVAL_STREAM + k, 0)
        task = sample_lifetime_task(cfg, rng)
        if method == "heuristic":
            log = run_heuristic_lifetime_log(task, rng)
        else:
            source = make_source(method, cfg, eta_np, feat_arch)
            if agent == "q_learning":
                log = run_q_lifetime(task, cfg, rng, source, policy_arch, heatmap)
            else:
                log = run_pg_lifetime(
                    task, cfg, rng, source, policy_arch,
                    reset_at_dones=(method != "extrinsic_life"),
                    gamma=cfg.gamma if method == "extrinsic_life" else None,
                    heatmap=heatmap)
        logs.append(log)

    episodes = max(len(l.episode_returns) for l in logs)
    curve = np.full((lifetimes, episodes), np.nan)
    for i, l in enumerate(logs):
        curve[i, :len(l.episode_returns)] = l.episode_returns
    total_steps = sum(l.steps for l in logs)
    return EvalResult(
        episode_returns=curve,
        lifetime_returns=np.array([l.lifetime_return for l in logs]),
        heatmap=heatmap,
        mean_entropy=sum(l.entropy_sum for l in logs) / max(1, total_steps),
        mean_reward=sum(l.reward_sum for l in logs) / max(1, total_steps),
        box_opening_rate=sum(l.box_openings for l in logs) / max(1, sum(
            len(l.episode_returns) for l in logs)),
    )
