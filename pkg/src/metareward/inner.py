"""The agent's within-lifetime learner.

Collects fixed-length trajectory windows under the current policy,
computes discounted intrinsic returns that reset at episode boundaries,
and applies a policy-gradient step whose subtraction is itself on the
tape, so the updated policy parameters carry their dependence on the
reward parameters into the next window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import envs
from .networks import StepFeatures, one_hot, policy_forward, sample_action


class NonFiniteError(RuntimeError):
    """A gradient or loss stopped being finite; the lifetime is aborted."""


@dataclass
class InnerConfig:
    alpha: float = 0.1
    gamma_bar: float = 0.9
    entropy_coef: float = 0.01
    unroll_length: int = 4

    def __post_init__(self):
        if not (0.0 < self.gamma_bar <= 1.0):
            raise ValueError("gamma_bar must be in (0, 1]")
        if self.unroll_length < 1 or self.alpha < 0.0:
            raise ValueError("bad inner-loop configuration")


@dataclass
class StepRecord:
    obs: np.ndarray              # policy input at decision time
    action: int
    features: StepFeatures       # history element for the reward/value nets
    log_prob: ad.Tensor
    entropy: ad.Tensor
    intrinsic_reward: ad.Tensor | None
    extrinsic_reward: float
    done: float
    lifetime_done: bool
    episode_index: int


@dataclass
class TrajectoryWindow:
    steps: list

    def __len__(self):
        return len(self.steps)


class LifetimeRunner:
    """Owns one lifetime: task, live env state, and episode bookkeeping.

    Episodes auto-reset inside windows; the observation exposed after a
    done is the next episode's start state, matching the lifetime-history
    convention of feeding the stream (s, a, r, d, s', ...).
    """

    def __init__(self, task, rng, policy_arch, feat_action_width=None,
                 action_mode="standard", dtype=np.float64):
        self.task = task
        self.rng = rng
        self.policy_arch = policy_arch
        self.action_mode = action_mode
        self.dtype = dtype
        self.feat_action_width = feat_action_width or policy_arch.n_actions
        self.state, obs = envs.reset_episode(task, rng=rng)
        self.obs = obs.astype(dtype)
        self.lifetime_done = False
        self.episode_returns = []
        self._episode_return = 0.0
        self.lifetime_return = 0.0
        # pre-reset snapshot of the most recent transition (evaluation hooks)
        self.last_cell = self.state.agent_cell
        self.last_state_key = None
        self.last_terminal_object = None

    def initial_features(self):
        """Lifetime-start history element: start state, all-zero action."""
        return StepFeatures(self.obs, one_hot(None, self.feat_action_width, self.dtype), 0.0, 0.0)

    def env_step(self, action):
        permuted = self.action_mode == "permuted"
        effective = envs.permute_action(action) if permuted else envs.Action(action)
        result = envs.step(self.state, self.task, action, permuted=permuted)
        self.last_cell = self.state.agent_cell
        self.last_state_key = (self.state.agent_cell, self.state.has_key,
                               tuple(sorted(self.state.object_cells.items())))
        self.last_terminal_object = None
        if result.episode_done and (self.task.domain_id is not envs.Domain.KEY_BOX
                                    or self.state.has_key):
            for name, cell in self.state.object_cells.items():
                if name != "key" and cell == self.state.agent_cell:
                    self.last_terminal_object = name
        self._episode_return += result.extrinsic_reward
        self.lifetime_return += result.extrinsic_reward
        if result.episode_done:
            self.episode_returns.append(self._episode_return)
            self._episode_return = 0.0
            if result.lifetime_done:
                self.lifetime_done = True
                self.obs = result.observation.astype(self.dtype)
            else:
                self.state, obs = envs.reset_episode(self.task, self.state, self.rng)
                self.obs = obs.astype(self.dtype)
        else:
            self.obs = result.observation.astype(self.dtype)
        # the history feature encodes the effective movement direction
        feat_action = one_hot(int(effective), self.feat_action_width, self.dtype)
        features = StepFeatures(self.obs, feat_action, result.extrinsic_reward,
                                float(result.episode_done))
        return result, features


def collect_window(theta, runner, length, rng, reward_fn=None, value_fn=None,
                   scripted=None):
    """Run up to ``length`` steps under the current policy.

    ``reward_fn(features) -> Tensor`` supplies the per-step intrinsic
    reward on the active tape; ``value_fn`` is called for its side effect
    of advancing the value stream and its predictions are attached by the
    caller. ``scripted`` forces the action sequence (gradient checks).
    """
    if runner.lifetime_done:
        raise RuntimeError("collect_window on a finished lifetime")
    steps = []
    for _ in range(length):
        obs = runner.obs
        logits = policy_forward(theta, obs, runner.policy_arch)
        forced = next(scripted) if scripted is not None else None
        action, log_prob, entropy = sample_action(logits, rng, forced)
        result, features = runner.env_step(action)
        r_int = reward_fn(features) if reward_fn is not None else None
        if value_fn is not None:
            value_fn(features)
        steps.append(StepRecord(
            obs=obs, action=action, features=features, log_prob=log_prob,
            entropy=entropy, intrinsic_reward=r_int,
            extrinsic_reward=result.extrinsic_reward,
            done=float(result.episode_done), lifetime_done=result.lifetime_done,
            episode_index=runner.state.episode_index,
        ))
        if result.lifetime_done:
            break
    return TrajectoryWindow(steps)


def intrinsic_returns(window, gamma_bar):
    """Discounted sums of intrinsic rewards; reset at episode dones,
    truncated at the window edge with no bootstrap."""
    returns = [None] * len(window.steps)
    running = None
    for t in range(len(window.steps) - 1, -1, -1):
        step = window.steps[t]
        r = step.intrinsic_reward
        if step.done or running is None:
            running = r
        else:
            running = ad.add(r, ad.scale(running, gamma_bar))
        returns[t] = running
    return returns


def discounted_returns_np(rewards, dones, gamma):
    """Plain-number episodic returns with the same reset rule."""
    out = np.zeros(len(rewards))
    running = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        running = rewards[t] + (0.0 if dones[t] else gamma * running)
        out[t] = running
    return out


def policy_loss(window, returns, entropy_coef):
    """REINFORCE surrogate over the window, normalized by its length.

    The return coefficients stay on the tape: the reward parameters reach
    the updated policy through them.
    """
    terms = None
    for step, g in zip(window.steps, returns):
        term = ad.mul(g, step.log_prob)
        if entropy_coef:
            term = ad.add(term, ad.scale(step.entropy, entropy_coef))
        terms = term if terms is None else ad.add(terms, term)
    return ad.scale(terms, -1.0 / len(window.steps))


def sgd_step_differentiable(theta, loss, alpha):
    """One SGD step with tape-tracked gradients, so d(theta')/d(eta) exists."""
    names = list(theta)
    grads = ad.backward(loss, [theta[n] for n in names], create_graph=True)
    for g in grads:
        if not np.all(np.isfinite(g.data)):
            raise NonFiniteError("non-finite policy gradient")
    return {n: ad.sub(theta[n], ad.scale(g, alpha)) for n, g in zip(names, grads)}


def q_values(q_params, obs, arch):
    return policy_forward(q_params, obs, arch)


def q_learning_step(q_params, window, alpha_q, gamma_bar, arch):
    """One-step TD(0) toward the intrinsic-reward target on raw arrays.

    Not differentiated with respect to the reward parameters; used only
    when evaluating a frozen learned reward with a Q-learning agent.
    """
    if alpha_q == 0.0 or not window.steps:
        return q_params
    tape = ad.Tape()
    leaves_ = {n: tape.leaf(v) for n, v in q_params.items()}
    loss = None
    for step in window.steps:
        q_sa = ad.index_select(q_values(leaves_, step.obs, arch), step.action)
        r = step.intrinsic_reward
        if r is None:
            r = step.extrinsic_reward
        elif isinstance(r, ad.Tensor):
            r = float(r.data)
        target = r
        if not step.done:
            with ad.no_recording():
                nxt = q_values(leaves_, step.features.observation, arch)
            target += gamma_bar * float(nxt.data.max())
        err = ad.addc(q_sa, -target)
        term = ad.mul(err, err)
        loss = term if loss is None else ad.add(loss, term)
    loss = ad.scale(loss, 0.5 / len(window.steps))
    grads = ad.backward(loss, list(leaves_.values()))
    return {n: q_params[n] - alpha_q * g.data
            for n, g in zip(leaves_, grads)}


def epsilon_greedy(q_vec, epsilon, rng):
    if rng.random() < epsilon:
        return int(rng.integers(len(q_vec)))
    return int(np.argmax(q_vec))
