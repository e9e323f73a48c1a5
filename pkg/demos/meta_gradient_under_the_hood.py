"""How the meta-gradient flows through the agent's own learning step.

This walks the machinery at toy scale: a 3x3 room, two 5-step episodes,
two inner policy-gradient updates unrolled on one tape. The gradient of
the lifetime objective with respect to the *reward* parameters exists
only because the SGD update itself is on the tape - and we verify it
against central finite differences, which is the package's cardinal
correctness check.

Run:  python demos/meta_gradient_under_the_hood.py
"""

import numpy as np

from metareward import gradcheck
from metareward.meta import Worker, build_architectures, run_outer_window
from metareward.networks import init_reward_params, init_value_params

cfg = gradcheck.tiny_meta_config()
policy_arch, feat_arch = build_architectures(cfg)

rng = np.random.default_rng(0)
eta = init_reward_params(rng, feat_arch)
phi = init_value_params(rng, feat_arch)
n_eta = sum(v.size for v in eta.values())
print(f"reward network: {n_eta} parameters; policy updated "
      f"{cfg.outer_unroll}x inside the tape\n")

script = [int(a) for a in np.random.default_rng(1).integers(0, 4, size=64)]

worker = Worker(0, 0, cfg, policy_arch, feat_arch)
worker.start_lifetime()
result = run_outer_window(worker, eta, phi, cfg, scripted=iter(script))
print(f"meta loss over the unrolled window: {result.meta_loss_value:+.6f}")
print("eta-gradient norms per tensor:")
for name, g in result.eta_grads.items():
    print(f"  {name:10s} {np.linalg.norm(g):.3e}")

print("\nchecking one coordinate against central finite differences...")
name = "head_w"
idx = (0, 0)
eps = 1e-5
vals = []
for sign in (+1, -1):
    bumped = {k: v.copy() for k, v in eta.items()}
    bumped[name][idx] += sign * eps
    w = Worker(0, 0, cfg, policy_arch, feat_arch)
    w.start_lifetime()
    r = run_outer_window(w, bumped, phi, cfg, scripted=iter(script),
                         compute_grads=False)
    vals.append(r.meta_loss_value)
fd = (vals[0] - vals[1]) / (2 * eps)
print(f"  tape: {result.eta_grads[name][idx]:+.8f}   fd: {fd:+.8f}")

print("\nfull suite over every eta entry (takes ~10s):")
err = gradcheck.check_meta_gradient()
print(f"  max relative error: {err:.2e}  (threshold 1e-4)")
