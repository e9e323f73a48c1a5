"""Experiment configuration: domain presets, config files, overrides.

Config files are flat ``key = value`` text with one section per module
(INI syntax, stdlib parser). Unknown sections or keys are rejected with
the offending name.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields, replace

import numpy as np

from .envs import Domain


class ConfigError(ValueError):
    pass


# Per-domain hyperparameters (time limit, episodes, unroll, entropy).
DOMAIN_PRESETS = {
    "empty_rooms": dict(domain=Domain.EMPTY_ROOMS, episode_time_limit=100,
                        episodes_per_lifetime=200, unroll_length=8, entropy_coef=0.01),
    "fixed_abc": dict(domain=Domain.FIXED_ABC, episode_time_limit=10,
                      episodes_per_lifetime=200, unroll_length=4, entropy_coef=0.01),
    "random_abc": dict(domain=Domain.RANDOM_ABC, episode_time_limit=10,
                       episodes_per_lifetime=50, unroll_length=4, entropy_coef=0.01),
    "nonstationary_abc": dict(domain=Domain.NONSTATIONARY_ABC, episode_time_limit=10,
                              episodes_per_lifetime=1000, unroll_length=4, entropy_coef=0.05),
    "key_box": dict(domain=Domain.KEY_BOX, episode_time_limit=50,
                    episodes_per_lifetime=200, unroll_length=4, entropy_coef=0.01,
                    key_box_variant="primary"),
    # alternative published Key-Box variant
    "key_box_long": dict(domain=Domain.KEY_BOX, episode_time_limit=100,
                         episodes_per_lifetime=5000, unroll_length=16, entropy_coef=0.01,
                         key_box_variant="long"),
}


@dataclass
class ExperimentConfig:
    # experiment
    domain_preset: str = "fixed_abc"
    seeds: tuple = (0,)
    output_dir: str = "runs"
    meta_updates: int = 20000
    log_interval: int = 50
    checkpoint_interval: int = 5000
    clock: str = "wall"  # wall | none (deterministic zero timestamps)
    # env
    action_mode: str = "standard"  # standard | permuted | extended
    key_box_variant: str = "primary"
    room_size: int = 5
    episode_time_limit: int | None = None  # None = domain preset
    episodes_per_lifetime: int | None = None
    # inner loop
    alpha: float = 0.1
    gamma_bar: float = 0.9
    entropy_coef: float = 0.01
    unroll_length: int = 4
    # meta loop
    outer_unroll: int = 5
    gamma: float = 0.99
    eta_lr: float = 0.001
    value_lr: float = 0.001
    batch_lifetimes: int = 8
    objective: str = "lifetime"  # lifetime | episodic
    use_baseline: bool = False
    # networks
    reward_input: str = "lstm"  # lstm | feedforward
    conv_filters: int = 16
    fc_width: int = 64
    lstm_width: int = 64
    precision: str = "float32"  # float32 | float64
    # eval
    eval_lifetimes: int = 30
    agent_algo: str = "actor_critic_pg"  # actor_critic_pg | q_learning
    epsilon: float = 0.1
    alpha_q: float = 0.1
    count_beta: float = 0.1

    @property
    def domain(self):
        return DOMAIN_PRESETS[self.domain_preset]["domain"]

    @property
    def dtype(self):
        return np.float64 if self.precision == "float64" else np.float32

    def validate(self):
        if self.domain_preset not in DOMAIN_PRESETS:
            raise ConfigError(f"unknown domain preset: {self.domain_preset}")
        if self.action_mode not in ("standard", "permuted", "extended"):
            raise ConfigError(f"unknown action_mode: {self.action_mode}")
        if self.objective not in ("lifetime", "episodic"):
            raise ConfigError(f"unknown objective: {self.objective}")
        if self.reward_input not in ("lstm", "feedforward"):
            raise ConfigError(f"unknown reward_input: {self.reward_input}")
        if self.agent_algo not in ("actor_critic_pg", "q_learning"):
            raise ConfigError(f"unknown agent_algo: {self.agent_algo}")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"unknown precision: {self.precision}")
        if self.clock not in ("wall", "none"):
            raise ConfigError(f"unknown clock mode: {self.clock}")
        if self.outer_unroll < 1 or not (0 < self.gamma <= 1):
            raise ConfigError("bad meta-loop configuration")
        return self


_SECTION_KEYS = {
    "experiment": ("domain", "seeds", "output_dir", "meta_updates", "log_interval",
                   "checkpoint_interval", "clock"),
    "env": ("action_mode", "key_box_variant", "room_size", "episode_time_limit",
            "episodes_per_lifetime"),
    "inner": ("alpha", "gamma_bar", "entropy_coef", "unroll_length"),
    "meta": ("outer_unroll", "gamma", "eta_lr", "value_lr", "batch_lifetimes",
             "objective", "use_baseline", "meta_updates"),
    "networks": ("reward_input", "conv_filters", "fc_width", "lstm_width", "precision"),
    "eval": ("lifetimes", "agent_algo", "epsilon", "alpha_q", "count_beta"),
}

_KEY_TO_FIELD = {
    "domain": "domain_preset",
    "lifetimes": "eval_lifetimes",
}

_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _parse_value(field_name, raw):
    raw = raw.strip()
    if field_name == "seeds":
        return tuple(int(s) for s in raw.replace(",", " ").split())
    if field_name in ("episode_time_limit", "episodes_per_lifetime"):
        return None if raw.lower() in ("", "none") else int(raw)
    if field_name == "use_baseline":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"bad boolean for use_baseline: {raw!r}")
    current = getattr(ExperimentConfig(), field_name)
    if isinstance(current, bool):
        return raw.lower() in ("true", "1", "yes")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw


def apply_domain_preset(cfg):
    """Fill inner-loop fields left at their defaults from the domain preset."""
    preset = DOMAIN_PRESETS[cfg.domain_preset]
    updates = {}
    if "unroll_length" in preset:
        updates["unroll_length"] = preset["unroll_length"]
    if "entropy_coef" in preset:
        updates["entropy_coef"] = preset["entropy_coef"]
    if "key_box_variant" in preset:
        updates["key_box_variant"] = preset["key_box_variant"]
    return replace(cfg, **updates)


def load_config(path=None, overrides=None, domain=None, apply_preset=True):
    """Build a validated config from (preset defaults, file, overrides)."""
    values = {}
    if path is not None:
        parser = configparser.ConfigParser()
        with open(path) as fh:
            parser.read_file(fh)
        for section in parser.sections():
            if section not in _SECTION_KEYS:
                raise ConfigError(f"unknown config section: [{section}]")
            for key, raw in parser.items(section):
                if key not in _SECTION_KEYS[section]:
                    raise ConfigError(f"unknown config key: [{section}] {key}")
                field_name = _KEY_TO_FIELD.get(key, key)
                values[field_name] = _parse_value(field_name, raw)
    if domain is not None:
        values["domain_preset"] = domain
    cfg = ExperimentConfig(**values)
    if apply_preset:
        explicit = set(values)
        cfg = apply_domain_preset(cfg)
        # file/CLI values win over the preset
        for name in explicit - {"domain_preset"}:
            cfg = replace(cfg, **{name: values[name]})
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key: {key}")
        cfg = replace(cfg, **{key: value})
    return cfg.validate()


def config_echo(cfg):
    """Flat textual form of a config, embedded in checkpoints.

    The output directory is omitted: it names where artifacts land, not
    what was run, and identical runs must produce identical checkpoints.
    """
    lines = []
    for f in fields(cfg):
        if f.name == "output_dir":
            continue
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = " ".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def effective_episode_params(cfg):
    """(time limit, episodes per lifetime) after preset and overrides."""
    preset = DOMAIN_PRESETS[cfg.domain_preset]
    limit = cfg.episode_time_limit if cfg.episode_time_limit is not None else preset["episode_time_limit"]
    episodes = cfg.episodes_per_lifetime if cfg.episodes_per_lifetime is not None else preset["episodes_per_lifetime"]
    return limit, episodes
