"""Reference learners and oracles.

Extrinsic-EP and Extrinsic-LIFE reuse the inner loop with the extrinsic
reward in place of the learned one, differing only in whether the return
resets at episode boundaries. The count-based bonus and the two-probe
heuristic are hand-designed comparison points; the heuristic's expected
lifetime return doubles as a Monte-Carlo oracle for acceptance checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import envs
from .inner import InnerConfig


@dataclass
class VisitCounts:
    """Per-lifetime state visitation counts; reset at lifetime start."""

    counts: dict = field(default_factory=dict)

    def key(self, state):
        layout = tuple(sorted(state.object_cells.items()))
        return (state.agent_cell, state.has_key, hash(layout))


def count_bonus(counts, state_key, beta):
    """Exploration bonus beta / sqrt(visits), the current visit included,
    so the sequence over repeated visits is strictly decreasing from beta."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    n = counts.counts.get(state_key, 0) + 1
    counts.counts[state_key] = n
    return beta / np.sqrt(n)


def extrinsic_ep_config(alpha=0.1, gamma_bar=0.9, entropy_coef=0.01, unroll_length=4):
    """Inner loop on the raw extrinsic reward; returns reset at dones."""
    return InnerConfig(alpha=alpha, gamma_bar=gamma_bar,
                       entropy_coef=entropy_coef, unroll_length=unroll_length)


def extrinsic_life_config(alpha=0.1, gamma=0.99, entropy_coef=0.01, unroll_length=4):
    """Lifetime variant: the return ignores episode boundaries and uses the
    outer discount; pair with ``reset_at_dones=False`` when accumulating."""
    return InnerConfig(alpha=alpha, gamma_bar=gamma,
                       entropy_coef=entropy_coef, unroll_length=unroll_length)


@dataclass
class HeuristicState:
    """Two probe episodes (A then C), then commit to the better object."""

    reward_a: float | None = None
    reward_c: float | None = None

    def observe(self, episode_index, terminal_object, reward):
        if episode_index == 0 and terminal_object == "A":
            self.reward_a = reward
        elif episode_index == 1 and terminal_object == "C":
            self.reward_c = reward

    def target(self, episode_index):
        if episode_index == 0:
            return "A"
        if episode_index == 1:
            return "C"
        a = self.reward_a if self.reward_a is not None else 0.0
        c = self.reward_c if self.reward_c is not None else 0.0
        return "A" if a >= c else "C"  # ties toward A


def heuristic_policy(task, state, heuristic_state):
    """Greedy step along a shortest path to the current target object."""
    if task.domain_id is not envs.Domain.RANDOM_ABC:
        raise ValueError("heuristic is defined on the Random ABC domain only")
    target_name = heuristic_state.target(state.episode_index)
    target = state.object_cells[target_name]
    blocked = tuple(cell for name, cell in state.object_cells.items()
                    if name != target_name)
    walls = envs.layout_walls(task)
    best = None
    for action in envs.CARDINAL_ACTIONS:
        nxt = envs._move(walls, state.agent_cell, envs.action_delta(action))
        if nxt == state.agent_cell and nxt != target:
            continue
        if nxt in blocked and nxt != target:
            continue
        try:
            d = envs.shortest_path_oracle(task, nxt, target, blocked=blocked)
        except envs.Unreachable:
            continue
        if best is None or d < best[0]:
            best = (d, action)
    if best is None:
        raise envs.Unreachable(f"no route to {target_name}")
    return best[1]


def run_heuristic_lifetime(task, rng=None):
    """Roll out the heuristic for one lifetime; returns the lifetime return."""
    hs = HeuristicState()
    state, _ = envs.reset_episode(task, rng=rng)
    total = 0.0
    while not state.lifetime_done:
        ep = state.episode_index
        action = heuristic_policy(task, state, hs)
        result = envs.step(state, task, action)
        total += result.extrinsic_reward
        if result.episode_done:
            terminal = next((name for name, cell in state.object_cells.items()
                             if cell == state.agent_cell), None)
            hs.observe(ep, terminal, result.extrinsic_reward)
            if not result.lifetime_done:
                state, _ = envs.reset_episode(task, state, rng)
    return total


def heuristic_expected_lifetime_return(episodes, intervals=None, samples=10**6, seed=0):
    """Monte-Carlo oracle: E[r_A] + E[r_C] + (episodes-2) * E[max(r_A, r_C)].

    The first two episodes pay the probe rewards; every remaining episode
    pays the larger of the two draws.
    """
    intervals = intervals or envs._ABC_INTERVALS
    rng = np.random.default_rng(seed)
    a = rng.uniform(*intervals["A"], size=samples)
    c = rng.uniform(*intervals["C"], size=samples)
    per_lifetime = a + c + (episodes - 2) * np.maximum(a, c)
    return float(per_lifetime.mean()), float(per_lifetime.std(ddof=1) / np.sqrt(samples))
