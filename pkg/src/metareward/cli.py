"""Command-line harness: train, eval, baseline, gradcheck.

All subcommands exit nonzero with a message on configuration or numeric
failure; metrics and checkpoints land under ``--out`` (default from the
``METAREWARD_OUT`` environment variable, falling back to ./runs).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import checkpoint, evaluate, gradcheck, metrics
from .config import ConfigError, config_echo, load_config
from .meta import build_architectures, train
from .networks import init_reward_params

_AGENT_FLAGS = {"pg": "actor_critic_pg", "q": "q_learning"}


def _default_out():
    return os.environ.get("METAREWARD_OUT", "runs")


def _add_common(p):
    p.add_argument("--domain", help="domain preset name")
    p.add_argument("--config", help="path to a key = value config file")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--episodes", type=int, default=None,
                   help="episodes per lifetime override")
    p.add_argument("--clock", choices=("wall", "none"), default=None)


def _build_config(args, extra=None):
    overrides = dict(extra or {})
    if args.seed is not None:
        overrides["seeds"] = (args.seed,)
    if args.episodes is not None:
        overrides["episodes_per_lifetime"] = args.episodes
    if args.clock is not None:
        overrides["clock"] = args.clock
    if args.out is not None:
        overrides["output_dir"] = args.out
    return load_config(path=args.config, overrides=overrides, domain=args.domain)


def _outdir(cfg):
    path = cfg.output_dir or _default_out()
    os.makedirs(path, exist_ok=True)
    return path


def _rng_summary(cfg, seed):
    return f"philox counter streams: seed={seed} workers={cfg.batch_lifetimes}"


def cmd_train(args):
    extra = {}
    if args.meta_updates is not None:
        extra["meta_updates"] = args.meta_updates
    cfg = _build_config(args, extra)
    out = _outdir(cfg)
    for seed in cfg.seeds:
        metrics_path = os.path.join(out, f"metrics_train_seed{seed}.csv")
        final_path = os.path.join(out, f"checkpoint_seed{seed}_final.irf")

        def save_ckpt(step, eta, phi, path=None, seed=seed):
            path = path or os.path.join(out, f"checkpoint_seed{seed}_step{step}.irf")
            checkpoint.save(path, {"reward": eta, "value": phi},
                            config_echo(cfg), _rng_summary(cfg, seed))

        with metrics.MetricsWriter(metrics_path) as writer:
            result = train(cfg, seed, metrics_cb=writer.write,
                           checkpoint_cb=save_ckpt)
        save_ckpt(cfg.meta_updates, result.eta, result.phi, path=final_path)
        print(f"seed {seed}: wrote {metrics_path} and {final_path}")
    return 0


def cmd_eval(args):
    cfg = _build_config(args, {
        "action_mode": args.actions,
        "agent_algo": _AGENT_FLAGS[args.agent],
        "eval_lifetimes": args.lifetimes,
    })
    sections, _, _ = checkpoint.load(args.checkpoint)
    if "reward" not in sections:
        raise checkpoint.CheckpointError("checkpoint has no reward section")
    _, feat_arch = build_architectures(cfg)
    rng = np.random.default_rng(0)
    if cfg.reward_input == "feedforward":
        from .networks import init_feedforward_reward_params
        reference = init_feedforward_reward_params(rng, feat_arch)
    else:
        reference = init_reward_params(rng, feat_arch)
    eta = checkpoint.validate_shapes(sections["reward"], reference)
    seed = cfg.seeds[0]
    result = evaluate.evaluate(cfg, "intrinsic", seed, eta_np=eta)
    _write_eval_outputs(cfg, result, seed, tag="eval_intrinsic")
    return 0


def cmd_baseline(args):
    cfg = _build_config(args, {"eval_lifetimes": args.lifetimes})
    seed = cfg.seeds[0]
    result = evaluate.evaluate(cfg, args.method, seed)
    _write_eval_outputs(cfg, result, seed, tag=f"baseline_{args.method}")
    if args.method == "count":
        print(f"box-opening rate per episode: {result.box_opening_rate:.4f}")
    return 0


def _write_eval_outputs(cfg, result, seed, tag):
    out = _outdir(cfg)
    metrics_path = os.path.join(out, f"metrics_{tag}_seed{seed}.csv")
    heatmap_path = os.path.join(out, f"heatmap_{tag}_seed{seed}.csv")
    curve = result.mean_curve()
    mean_lifetime = float(result.lifetime_returns.mean())
    with metrics.MetricsWriter(metrics_path) as writer:
        for episode, value in enumerate(curve):
            if not np.isfinite(value):
                continue
            writer.write(dict(
                phase="eval", step=episode, lifetime=len(result.lifetime_returns),
                seed=seed, episode_return=float(value),
                lifetime_return=mean_lifetime,
                intrinsic_reward=result.mean_reward, entropy=result.mean_entropy,
                wall_ms=0))
    metrics.emit_heatmap(heatmap_path, result.heatmap)
    print(f"mean lifetime return {mean_lifetime:.4f}; wrote {metrics_path}")


def cmd_gradcheck(args):
    ok = gradcheck.run_all(scale=args.scale, corrupt=args.corrupt)
    return 0 if ok else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="metareward",
        description="meta-learned intrinsic rewards on gridworld lifetimes")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="meta-train the intrinsic reward")
    _add_common(p)
    p.add_argument("--meta-updates", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="train fresh agents under a frozen reward")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--lifetimes", type=int, default=30)
    p.add_argument("--agent", choices=sorted(_AGENT_FLAGS), default="pg")
    p.add_argument("--actions", choices=("standard", "permuted", "extended"),
                   default="standard")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="run a reference learner")
    _add_common(p)
    p.add_argument("--method", required=True,
                   choices=("extrinsic_ep", "extrinsic_life", "count", "heuristic"))
    p.add_argument("--lifetimes", type=int, default=30)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--scale", choices=("tiny",), default="tiny")
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, checkpoint.CheckpointError, metrics.MetricsError,
            ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FloatingPointError, RuntimeError) as exc:  # numeric failure
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
