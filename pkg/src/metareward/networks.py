"""Function approximators: policy, intrinsic reward, and lifetime value.

The policy is conv + fc + linear head over action logits. The reward and
value networks share the same conv + fc trunk shape, feed the embedding
together with the previous action, extrinsic reward, and done flag into
an LSTM, and read a scalar off a linear head; the reward head is squashed
through arctan, the value head is left linear.

Parameters are plain dicts of numpy arrays; :func:`leaves` roots them on
a tape when gradients are needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

KERNEL = 3
PAD = 1


@dataclass(frozen=True)
class Architecture:
    obs_shape: tuple  # (C, H, W)
    n_actions: int
    conv_filters: int = 16
    fc_width: int = 64
    lstm_width: int = 64
    feat_actions: int | None = None  # one-hot width seen by reward/value nets
    dtype: type = np.float64

    @property
    def action_feature_width(self):
        return self.feat_actions if self.feat_actions is not None else self.n_actions

    @property
    def conv_in(self):
        return self.obs_shape[0] * KERNEL * KERNEL

    @property
    def flat_width(self):
        return self.conv_filters * self.obs_shape[1] * self.obs_shape[2]

    @property
    def lstm_in(self):
        return self.fc_width + self.action_feature_width + 2


@dataclass
class RecurrentState:
    hidden: ad.Tensor
    cell: ad.Tensor

    def detach(self):
        return RecurrentState(self.hidden.detach(), self.cell.detach())


@dataclass
class StepFeatures:
    observation: np.ndarray
    prev_action: np.ndarray  # one-hot, all-zero at lifetime start
    extrinsic_reward: float
    done: float


def _uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _trunk_params(rng, arch):
    return {
        "conv_w": _uniform(rng, (arch.conv_filters, arch.conv_in), arch.conv_in, arch.dtype),
        "conv_b": np.zeros(arch.conv_filters, dtype=arch.dtype),
        "fc_w": _uniform(rng, (arch.fc_width, arch.flat_width), arch.flat_width, arch.dtype),
        "fc_b": np.zeros(arch.fc_width, dtype=arch.dtype),
    }


def init_policy_params(rng, arch):
    params = _trunk_params(rng, arch)
    params["head_w"] = _uniform(rng, (arch.n_actions, arch.fc_width), arch.fc_width, arch.dtype)
    params["head_b"] = np.zeros(arch.n_actions, dtype=arch.dtype)
    return params


def init_recurrent_params(rng, arch):
    h = arch.lstm_width
    params = _trunk_params(rng, arch)
    params["lstm_wx"] = _uniform(rng, (4 * h, arch.lstm_in), arch.lstm_in, arch.dtype)
    params["lstm_wh"] = _uniform(rng, (4 * h, h), h, arch.dtype)
    params["lstm_b"] = np.zeros(4 * h, dtype=arch.dtype)
    params["head_w"] = _uniform(rng, (1, h), h, arch.dtype)
    params["head_b"] = np.zeros(1, dtype=arch.dtype)
    return params


def init_feedforward_reward_params(rng, arch):
    params = _trunk_params(rng, arch)
    width = arch.fc_width + arch.action_feature_width + 2
    params["head_w"] = _uniform(rng, (1, width), width, arch.dtype)
    params["head_b"] = np.zeros(1, dtype=arch.dtype)
    return params


def init_reward_params(rng, arch):
    return init_recurrent_params(rng, arch)


def init_value_params(rng, arch):
    return init_recurrent_params(rng, arch)


def leaves(tape, params):
    """Root a parameter dict on a tape as differentiable leaves."""
    return {name: tape.leaf(value) for name, value in params.items()}


def values(params):
    """Raw arrays of a parameter dict of tensors."""
    return {name: (t.data if isinstance(t, ad.Tensor) else t) for name, t in params.items()}


def zero_recurrent_state(arch):
    z = np.zeros(arch.lstm_width, dtype=arch.dtype)
    return RecurrentState(ad.Tensor(z), ad.Tensor(z.copy()))


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def _trunk(params, obs, arch):
    x = obs if isinstance(obs, ad.Tensor) else ad.Tensor(np.asarray(obs, dtype=arch.dtype))
    cols = ad.im2col(ad.pad2d(x, PAD), KERNEL, KERNEL)  # (H*W, C*9)
    conv = ad.add_colvec(ad.matmul(params["conv_w"], ad.transpose(cols)), params["conv_b"])
    flat = ad.reshape(ad.relu(conv), (arch.flat_width,))
    return ad.relu(ad.add(ad.matmul(params["fc_w"], flat), params["fc_b"]))


def policy_forward(params, obs, arch):
    """Logits over the action set."""
    h = _trunk(params, obs, arch)
    return ad.add(ad.matmul(params["head_w"], h), params["head_b"])


def sample_action(logits, rng, forced=None):
    """Sample from softmax(logits); returns (action, log_prob, entropy).

    ``forced`` bypasses sampling but keeps the tape-tracked log probability
    of the forced action (used for gradient checks with scripted actions).
    """
    log_probs = ad.softmax_log_probs(logits)
    probs = np.exp(log_probs.data)
    probs = probs / probs.sum()
    if forced is None:
        action = int(rng.choice(len(probs), p=probs))
    else:
        action = int(forced)
    log_prob = ad.index_select(log_probs, action)
    entropy = ad.neg(ad.sum_all(ad.mul(ad.exp(log_probs), log_probs)))
    return action, log_prob, entropy


def _lstm_step(params, inp, state, arch):
    h = arch.lstm_width
    z = ad.add(ad.add(ad.matmul(params["lstm_wx"], inp),
                      ad.matmul(params["lstm_wh"], state.hidden)),
               params["lstm_b"])
    i = ad.sigmoid(ad.narrow(z, 0, h))
    f = ad.sigmoid(ad.narrow(z, h, h))
    g = ad.tanh(ad.narrow(z, 2 * h, h))
    o = ad.sigmoid(ad.narrow(z, 3 * h, h))
    c = ad.add(ad.mul(f, state.cell), ad.mul(i, g))
    new_h = ad.mul(o, ad.tanh(c))
    return RecurrentState(new_h, c)


def _step_input(params, features, arch):
    embed = _trunk(params, features.observation, arch)
    extras = np.array([features.extrinsic_reward, features.done], dtype=arch.dtype)
    return ad.concat([embed,
                      ad.Tensor(np.asarray(features.prev_action, dtype=arch.dtype)),
                      ad.Tensor(extras)])


def _recurrent_scalar(params, features, state, arch):
    inp = _step_input(params, features, arch)
    new_state = _lstm_step(params, inp, state, arch)
    out = ad.add(ad.matmul(params["head_w"], new_state.hidden), params["head_b"])
    return ad.reshape(out, ()), new_state


def reward_forward(params, features, state, arch):
    """Intrinsic reward for the lifetime history so far; bounded by arctan."""
    raw, new_state = _recurrent_scalar(params, features, state, arch)
    return ad.arctan(raw), new_state


def value_forward(params, features, state, arch):
    """Lifetime value estimate; unbounded linear head."""
    return _recurrent_scalar(params, features, state, arch)


def feed_forward_reward_forward(params, features, arch):
    """Stateless reward over the current step only (ablation variant)."""
    embed = _trunk(params, features.observation, arch)
    extras = np.array([features.extrinsic_reward, features.done], dtype=arch.dtype)
    inp = ad.concat([embed,
                     ad.Tensor(np.asarray(features.prev_action, dtype=arch.dtype)),
                     ad.Tensor(extras)])
    out = ad.add(ad.matmul(params["head_w"], inp), params["head_b"])
    return ad.arctan(ad.reshape(out, ()))


def one_hot(index, width, dtype=np.float64):
    v = np.zeros(width, dtype=dtype)
    if index is not None and 0 <= index < width:
        v[index] = 1.0
    return v
