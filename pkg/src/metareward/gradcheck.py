"""Finite-difference validation of first- and second-order gradients.

These checks are the independent oracle for the tape: every primitive,
the recurrent networks over multi-step sequences, and (the cardinal
check) the full meta-gradient through unrolled inner policy updates on a
tiny scripted domain, all compared against central finite differences in
float64.
"""

from __future__ import annotations

import time

import numpy as np

from . import autodiff as ad
from .config import load_config
from .meta import Worker, run_outer_window
from .networks import (Architecture, RecurrentState, StepFeatures, leaves,
                       init_policy_params, init_reward_params, one_hot,
                       policy_forward, reward_forward, sample_action)

FD_EPS = 1e-5
PRIMITIVE_TOL = 1e-6
RECURRENT_TOL = 1e-5
SECOND_ORDER_TOL = 1e-5
META_TOL = 1e-4


def rel_err(analytic, fd):
    analytic = np.asarray(analytic, dtype=float).ravel()
    fd = np.asarray(fd, dtype=float).ravel()
    return float(np.max(np.abs(analytic - fd) / np.maximum(1.0, np.abs(fd)))) if fd.size else 0.0


def fd_gradient(func, x0, eps=FD_EPS):
    """Central finite differences of a scalar function of a flat vector."""
    x0 = np.asarray(x0, dtype=np.float64)
    grad = np.zeros_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xp[i] += eps
        xm = x0.copy()
        xm[i] -= eps
        grad[i] = (func(xp) - func(xm)) / (2.0 * eps)
    return grad


def _check(build, shapes, rng):
    """FD-check a scalar tape function of several flat inputs."""
    xs = [rng.normal(size=shape) for shape in shapes]
    sizes = [x.size for x in xs]

    def unflatten(v):
        out = []
        offset = 0
        for shape, size in zip(shapes, sizes):
            out.append(v[offset:offset + size].reshape(shape))
            offset += size
        return out

    flat0 = np.concatenate([x.ravel() for x in xs])

    def value(v):
        tape = ad.Tape()
        ts = [tape.leaf(x) for x in unflatten(v)]
        return float(build(*ts).data)

    tape = ad.Tape()
    ts = [tape.leaf(x) for x in xs]
    out = build(*ts)
    grads = ad.backward(out, ts)
    analytic = np.concatenate([g.data.ravel() for g in grads])
    return rel_err(analytic, fd_gradient(value, flat0))


def check_primitives(seed=0):
    """FD gradcheck of every differentiable primitive. Returns name -> err."""
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(3, 4))
    probe = {
        "add": (lambda a, b: ad.sum_all(ad.mul(ad.add(a, b), ad.add(a, b))), [(4,), (4,)]),
        "sub": (lambda a, b: ad.sum_all(ad.exp(ad.sub(a, b))), [(4,), (4,)]),
        "neg": (lambda a: ad.sum_all(ad.exp(ad.neg(a))), [(4,)]),
        "mul": (lambda a, b: ad.sum_all(ad.mul(ad.mul(a, b), a)), [(4,), (4,)]),
        "smul": (lambda a, s: ad.sum_all(ad.mul(ad.smul(a, ad.reshape(s, ())), a)), [(4,), (1,)]),
        "scale": (lambda a: ad.sum_all(ad.mul(ad.scale(a, 1.7), a)), [(4,)]),
        "addc": (lambda a: ad.sum_all(ad.exp(ad.addc(a, 0.3))), [(4,)]),
        "matmul": (lambda a, b: ad.sum_all(ad.mul(ad.matmul(a, b), ad.matmul(a, b))), [(3, 4), (4, 2)]),
        "matmul_vec": (lambda a, b: ad.sum_all(ad.tanh(ad.matmul(a, b))), [(3, 4), (4,)]),
        "transpose": (lambda a: ad.sum_all(ad.tanh(ad.matmul(ad.transpose(a), ad.Tensor(w)))),
                      [(3, 4)]),
        "reshape": (lambda a: ad.sum_all(ad.mul(ad.reshape(a, (2, 6)), ad.reshape(a, (2, 6)))),
                    [(3, 4)]),
        "relu": (lambda a: ad.sum_all(ad.mul(ad.relu(a), a)), [(6,)]),
        "clip_min": (lambda a: ad.sum_all(ad.mul(ad.clip_min(a, 0.1), a)), [(6,)]),
        "sigmoid": (lambda a: ad.sum_all(ad.mul(ad.sigmoid(a), a)), [(6,)]),
        "tanh": (lambda a: ad.sum_all(ad.mul(ad.tanh(a), a)), [(6,)]),
        "arctan": (lambda a: ad.sum_all(ad.mul(ad.arctan(a), a)), [(6,)]),
        "exp": (lambda a: ad.sum_all(ad.mul(ad.exp(a), a)), [(6,)]),
        "reciprocal": (lambda a: ad.sum_all(ad.mul(ad.reciprocal(ad.addc(ad.mul(a, a), 1.0)), a)),
                       [(6,)]),
        "sum": (lambda a: ad.mul(ad.sum_all(a), ad.sum_all(ad.mul(a, a))), [(6,)]),
        "mean": (lambda a: ad.mul(ad.mean_all(a), ad.mean_all(ad.mul(a, a))), [(6,)]),
        "index_select": (lambda a: ad.mul(ad.index_select(a, 2), ad.index_select(a, 0)), [(5,)]),
        "scatter_scalar": (lambda a: ad.sum_all(ad.mul(
            ad.scatter_scalar(ad.index_select(a, 1), 3, 5), a)), [(5,)]),
        "narrow": (lambda a: ad.sum_all(ad.mul(ad.narrow(a, 1, 3), ad.narrow(a, 2, 3))), [(6,)]),
        "embed": (lambda a: ad.sum_all(ad.mul(ad.embed(a, 2, 8), ad.embed(a, 1, 8))), [(4,)]),
        "concat": (lambda a, b: ad.sum_all(ad.mul(ad.concat([a, b]), ad.concat([b, a]))),
                   [(3,), (3,)]),
        "pad2d": (lambda a: ad.sum_all(ad.mul(ad.pad2d(a, 1), ad.pad2d(a, 1))), [(2, 3, 3)]),
        "crop2d": (lambda a: ad.sum_all(ad.mul(ad.crop2d(a, 1), ad.crop2d(a, 1))), [(2, 4, 4)]),
        "im2col": (lambda a: ad.sum_all(ad.mul(ad.im2col(a, 3, 3), ad.im2col(a, 3, 3))),
                   [(2, 5, 5)]),
        "col2im": (lambda a: ad.sum_all(ad.mul(ad.col2im(a, (1, 4, 4), 3, 3),
                                               ad.col2im(a, (1, 4, 4), 3, 3))), [(4, 9)]),
        "add_colvec": (lambda m, v: ad.sum_all(ad.tanh(ad.add_colvec(m, v))), [(3, 4), (3,)]),
        "sum_cols": (lambda m: ad.sum_all(ad.tanh(ad.sum_cols(m))), [(3, 4)]),
        "tile_cols": (lambda v: ad.sum_all(ad.tanh(ad.tile_cols(v, 3))), [(4,)]),
        "softmax_log_probs": (lambda a: ad.sum_all(ad.mul(ad.softmax_log_probs(a), a)), [(5,)]),
    }
    return {name: _check(build, shapes, rng) for name, (build, shapes) in probe.items()}


def check_second_order(seed=0):
    """FD of the analytic first gradient vs backward-of-backward."""
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(5, 5))
    x0 = rng.normal(size=5)

    def first_grad(v):
        tape = ad.Tape()
        p = tape.leaf(v)
        h = ad.tanh(ad.matmul(ad.Tensor(w), p))
        lp = ad.softmax_log_probs(ad.add(h, ad.arctan(p)))
        loss = ad.sum_all(ad.mul(lp, ad.sigmoid(p)))
        (g,) = ad.backward(loss, [p], create_graph=True)
        return tape, p, g

    tape, p, g = first_grad(x0)
    hess = np.stack([ad.backward(ad.index_select(g, i), [p])[0].data for i in range(5)])
    fd = np.stack([
        (first_grad(x0 + FD_EPS * np.eye(5)[i])[2].data
         - first_grad(x0 - FD_EPS * np.eye(5)[i])[2].data) / (2 * FD_EPS)
        for i in range(5)
    ])
    return rel_err(hess, fd)


def _tiny_arch(n_actions=4, hw=(5, 5)):
    return Architecture(obs_shape=(7, *hw), n_actions=n_actions, conv_filters=4,
                        fc_width=4, lstm_width=4, feat_actions=4, dtype=np.float64)


def check_lstm_bptt(seed=0, steps=6):
    """FD gradcheck of the recurrent reward network over a sequence."""
    rng = np.random.default_rng(seed)
    arch = _tiny_arch()
    params = init_reward_params(rng, arch)
    names = list(params)
    sizes = {n: params[n].size for n in names}
    feats = [StepFeatures(rng.random(arch.obs_shape), one_hot(int(rng.integers(4)), 4),
                          float(rng.normal()), float(rng.integers(2)))
             for _ in range(steps)]

    def unflatten(v):
        out = {}
        offset = 0
        for n in names:
            out[n] = v[offset:offset + sizes[n]].reshape(params[n].shape)
            offset += sizes[n]
        return out

    def run(p, tape=None):
        tape = tape or ad.Tape()
        ps = leaves(tape, p)
        state = RecurrentState(ad.Tensor(np.zeros(4)), ad.Tensor(np.zeros(4)))
        total = None
        for f in feats:
            r, state = reward_forward(ps, f, state, arch)
            total = r if total is None else ad.add(total, r)
        return ps, total

    flat0 = np.concatenate([params[n].ravel() for n in names])
    ps, total = run(params)
    grads = ad.backward(total, [ps[n] for n in names])
    analytic = np.concatenate([g.data.ravel() for g in grads])
    fd = fd_gradient(lambda v: float(run(unflatten(v))[1].data), flat0)
    return rel_err(analytic, fd)


def check_policy_loss(seed=0):
    """FD gradcheck of the REINFORCE surrogate with respect to the policy."""
    rng = np.random.default_rng(seed)
    arch = _tiny_arch()
    params = init_policy_params(rng, arch)
    names = list(params)
    obs = [rng.random(arch.obs_shape) for _ in range(4)]
    actions = [int(rng.integers(4)) for _ in range(4)]
    returns = rng.normal(size=4)

    def run(p):
        tape = ad.Tape()
        ps = leaves(tape, p)
        total = None
        for o, a, g in zip(obs, actions, returns):
            logits = policy_forward(ps, o, arch)
            _, log_prob, entropy = sample_action(logits, None, forced=a)
            term = ad.add(ad.scale(log_prob, float(g)), ad.scale(entropy, 0.01))
            total = term if total is None else ad.add(total, term)
        return ps, ad.scale(total, -0.25)

    flat0 = np.concatenate([params[n].ravel() for n in names])
    sizes = {n: params[n].size for n in names}

    def unflatten(v):
        out = {}
        offset = 0
        for n in names:
            out[n] = v[offset:offset + sizes[n]].reshape(params[n].shape)
            offset += sizes[n]
        return out

    ps, loss = run(params)
    grads = ad.backward(loss, [ps[n] for n in names])
    analytic = np.concatenate([g.data.ravel() for g in grads])
    fd = fd_gradient(lambda v: float(run(unflatten(v))[1].data), flat0)
    return rel_err(analytic, fd)


def check_value_loss(seed=0, steps=5):
    """FD gradcheck of the TD value loss through the recurrent stream."""
    from .meta import value_loss
    from .networks import init_value_params, value_forward

    rng = np.random.default_rng(seed)
    arch = _tiny_arch()
    params = init_value_params(rng, arch)
    names = list(params)
    sizes = {n: params[n].size for n in names}
    feats = [StepFeatures(rng.random(arch.obs_shape), one_hot(int(rng.integers(4)), 4),
                          float(rng.normal()), float(rng.integers(2)))
             for _ in range(steps)]
    targets = rng.normal(size=steps)
    start_target = float(rng.normal())

    def unflatten(v):
        out = {}
        offset = 0
        for n in names:
            out[n] = v[offset:offset + sizes[n]].reshape(params[n].shape)
            offset += sizes[n]
        return out

    def run(p):
        tape = ad.Tape()
        ps = leaves(tape, p)
        state = RecurrentState(ad.Tensor(np.zeros(4)), ad.Tensor(np.zeros(4)))
        v_start, state = value_forward(ps, feats[0], state, arch)
        preds = []
        for f in feats[1:]:
            v, state = value_forward(ps, f, state, arch)
            preds.append(v)
        return ps, value_loss(preds, targets, v_start, start_target)

    flat0 = np.concatenate([params[n].ravel() for n in names])
    ps, loss = run(params)
    grads = ad.backward(loss, [ps[n] for n in names])
    analytic = np.concatenate([g.data.ravel() for g in grads])
    fd = fd_gradient(lambda v: float(run(unflatten(v))[1].data), flat0)
    return rel_err(analytic, fd)


def tiny_meta_config():
    """3x3 single-room domain, 2 short episodes, N=2, width-4 networks."""
    return load_config(domain="fixed_abc", overrides=dict(
        room_size=3, episode_time_limit=5, episodes_per_lifetime=2,
        unroll_length=5, outer_unroll=2, batch_lifetimes=1,
        conv_filters=4, fc_width=4, lstm_width=4, precision="float64",
        use_baseline=False,
    ))


def check_meta_gradient(seed=0, corrupt=False):
    """Cardinal check: tape meta-gradient vs central FD over every reward
    parameter, on a scripted tiny lifetime unrolled through 2 inner updates."""
    from .meta import build_architectures
    from .networks import init_value_params

    cfg = tiny_meta_config()
    policy_arch, feat_arch = build_architectures(cfg)
    rng = np.random.default_rng(seed)
    eta0 = init_reward_params(rng, feat_arch)
    phi0 = init_value_params(rng, feat_arch)
    script = [int(a) for a in np.random.default_rng(seed + 1).integers(0, 4, size=64)]
    names = list(eta0)
    sizes = {n: eta0[n].size for n in names}

    def unflatten(v):
        out = {}
        offset = 0
        for n in names:
            out[n] = v[offset:offset + sizes[n]].reshape(eta0[n].shape)
            offset += sizes[n]
        return out

    def run(eta, compute_grads):
        worker = Worker(0, seed, cfg, policy_arch, feat_arch)
        worker.start_lifetime()
        return run_outer_window(worker, eta, phi0, cfg, scripted=iter(script),
                                compute_grads=compute_grads)

    result = run(eta0, True)
    analytic = np.concatenate([result.eta_grads[n].ravel() for n in names])
    if corrupt:
        analytic = analytic + 1.0  # negative-control hook
    flat0 = np.concatenate([eta0[n].ravel() for n in names])
    fd = fd_gradient(lambda v: run(unflatten(v), False).meta_loss_value, flat0)
    return rel_err(analytic, fd)


def run_all(scale="tiny", corrupt=False):
    """Run the full suite; print one line per check; return overall pass."""
    ok = True
    t0 = time.perf_counter()
    for name, err in check_primitives().items():
        good = err < PRIMITIVE_TOL
        ok &= good
        print(f"primitive {name:18s} max rel err {err:.3e}  {'ok' if good else 'FAIL'}")
    for name, fn, tol in (
        ("second-order", check_second_order, SECOND_ORDER_TOL),
        ("lstm bptt 6-step", check_lstm_bptt, RECURRENT_TOL),
        ("policy loss", check_policy_loss, PRIMITIVE_TOL),
        ("value loss", check_value_loss, RECURRENT_TOL),
    ):
        err = fn()
        good = err < tol
        ok &= good
        print(f"{name:28s} max rel err {err:.3e}  {'ok' if good else 'FAIL'}")
    err = check_meta_gradient(corrupt=corrupt)
    good = err < META_TOL
    ok &= good
    print(f"{'meta-gradient (cardinal)':28s} max rel err {err:.3e}  {'ok' if good else 'FAIL'}")
    print(f"total {time.perf_counter() - t0:.1f}s")
    return ok
