"""Gridworld task distributions with lifetime/episode semantics.

Five task families share one deterministic movement rule and a
channels-first observation encoding. A lifetime is a fixed number of
episodes on a single sampled task; object rewards stay fixed within a
lifetime except for the scheduled swaps of the non-stationary variant.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum, IntEnum

import numpy as np

__all__ = [
    "Domain",
    "Action",
    "TaskSpec",
    "EnvState",
    "StepResult",
    "CARDINAL_ACTIONS",
    "EXTENDED_ACTIONS",
    "sample_task",
    "reset_episode",
    "step",
    "effective_rewards",
    "permute_action",
    "action_delta",
    "observation",
    "layout_walls",
    "floor_cells",
    "shortest_path_oracle",
    "Unreachable",
    "OBS_CHANNELS",
]


class Domain(Enum):
    EMPTY_ROOMS = "empty_rooms"
    FIXED_ABC = "fixed_abc"
    RANDOM_ABC = "random_abc"
    NONSTATIONARY_ABC = "nonstationary_abc"
    KEY_BOX = "key_box"


class Action(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3
    UP_LEFT = 4
    UP_RIGHT = 5
    DOWN_LEFT = 6
    DOWN_RIGHT = 7


CARDINAL_ACTIONS = tuple(Action(i) for i in range(4))
EXTENDED_ACTIONS = tuple(Action(i) for i in range(8))

_DELTAS = {
    Action.UP: (-1, 0),
    Action.DOWN: (1, 0),
    Action.LEFT: (0, -1),
    Action.RIGHT: (0, 1),
    Action.UP_LEFT: (-1, -1),
    Action.UP_RIGHT: (-1, 1),
    Action.DOWN_LEFT: (1, -1),
    Action.DOWN_RIGHT: (1, 1),
}

_PERMUTED = {
    Action.UP: Action.DOWN,
    Action.DOWN: Action.UP,
    Action.LEFT: Action.RIGHT,
    Action.RIGHT: Action.LEFT,
    Action.UP_LEFT: Action.DOWN_RIGHT,
    Action.UP_RIGHT: Action.DOWN_LEFT,
    Action.DOWN_LEFT: Action.UP_RIGHT,
    Action.DOWN_RIGHT: Action.UP_LEFT,
}

# observation planes: agent, wall, object A, object B, object C, key, carried-key flag
OBS_CHANNELS = 7
_PLANE_AGENT, _PLANE_WALL, _PLANE_A, _PLANE_B, _PLANE_C, _PLANE_KEY, _PLANE_HASKEY = range(7)


@dataclass(frozen=True)
class TaskSpec:
    domain_id: Domain
    object_rewards: dict
    episode_time_limit: int
    episodes_per_lifetime: int
    layout_seed: int
    goal_cell: tuple | None = None
    swap_period: int | None = None
    room_size: int = 5
    key_box_size: int = 6
    empty_rooms_room: int = 5  # each of the four rooms is this size on a side


@dataclass
class EnvState:
    agent_cell: tuple
    object_cells: dict
    has_key: bool
    episode_step: int
    episode_index: int
    lifetime_step: int
    episode_done: bool = False
    lifetime_done: bool = False


@dataclass(frozen=True)
class StepResult:
    observation: np.ndarray
    extrinsic_reward: float
    episode_done: bool
    lifetime_done: bool


class Unreachable(ValueError):
    pass


class ContractViolation(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# layout
# ---------------------------------------------------------------------------


def layout_walls(task):
    """Boolean wall mask for the task's grid (True = impassable)."""
    if task.domain_id is Domain.EMPTY_ROOMS:
        r = task.empty_rooms_room
        n = 2 * r + 1
        walls = np.zeros((n, n), dtype=bool)
        mid = r // 2
        walls[r, :] = True
        walls[:, r] = True
        # one door at the midpoint of each shared wall segment
        for door in (mid, r + 1 + mid):
            walls[r, door] = False
            walls[door, r] = False
        walls[r, r] = True
        return walls
    if task.domain_id is Domain.KEY_BOX:
        n = task.key_box_size
    else:
        n = task.room_size
    return np.zeros((n, n), dtype=bool)


def floor_cells(task):
    walls = layout_walls(task)
    return [(int(r), int(c)) for r, c in zip(*np.nonzero(~walls))]


def _abc_layout(task):
    n = task.room_size
    return {"A": (0, n - 1), "B": (n - 1, 0), "C": (n - 1, n - 1)}, (0, 0)


def _empty_rooms_start(task):
    r = task.empty_rooms_room
    return (r // 2, r // 2)


# ---------------------------------------------------------------------------
# task sampling
# ---------------------------------------------------------------------------

_ABC_INTERVALS = {"A": (-1.0, 1.0), "B": (-0.5, 0.0), "C": (0.0, 0.5)}

# Key-Box has two published variants; the primary preset is the first.
KEY_BOX_PRESETS = {
    "primary": dict(key_reward=-0.1, episode_time_limit=50, episodes_per_lifetime=200),
    "long": dict(key_reward=0.0, episode_time_limit=100, episodes_per_lifetime=5000),
}


def sample_task(domain_id, rng, *, room_size=5, key_box_variant="primary",
                episode_time_limit=None, episodes_per_lifetime=None):
    """Draw a task from the domain's distribution.

    ``episode_time_limit`` / ``episodes_per_lifetime`` override the domain
    preset (used for scaled-down runs and the long-lifetime study).
    """
    domain_id = Domain(domain_id)
    layout_seed = int(rng.integers(0, 2**31 - 1))
    if domain_id is Domain.EMPTY_ROOMS:
        base = TaskSpec(domain_id, {"goal": 1.0}, 100, 200, layout_seed)
        cells = floor_cells(base)
        goal = cells[int(rng.integers(len(cells)))]
        task = replace(base, goal_cell=goal)
    elif domain_id is Domain.FIXED_ABC:
        task = TaskSpec(domain_id, {"A": 1.0, "B": -0.5, "C": 0.5}, 10, 200,
                        layout_seed, room_size=room_size)
    elif domain_id is Domain.RANDOM_ABC:
        rewards = {k: float(rng.uniform(lo, hi)) for k, (lo, hi) in _ABC_INTERVALS.items()}
        task = TaskSpec(domain_id, rewards, 10, 50, layout_seed, room_size=room_size)
    elif domain_id is Domain.NONSTATIONARY_ABC:
        task = TaskSpec(domain_id, {"A": 1.0, "B": -0.5, "C": -1.0}, 10, 1000,
                        layout_seed, swap_period=250, room_size=room_size)
    elif domain_id is Domain.KEY_BOX:
        preset = KEY_BOX_PRESETS[key_box_variant]
        rewards = {k: float(rng.uniform(lo, hi)) for k, (lo, hi) in _ABC_INTERVALS.items()}
        rewards["key"] = preset["key_reward"]
        task = TaskSpec(domain_id, rewards, preset["episode_time_limit"],
                        preset["episodes_per_lifetime"], layout_seed)
    else:  # pragma: no cover
        raise ValueError(f"unknown domain {domain_id}")
    if episode_time_limit is not None:
        task = replace(task, episode_time_limit=int(episode_time_limit))
    if episodes_per_lifetime is not None:
        task = replace(task, episodes_per_lifetime=int(episodes_per_lifetime))
    return task


def effective_rewards(task, episode_index):
    """Object rewards in force at the given episode.

    Non-stationary ABC exchanges the A and C values on every odd swap
    block; all other domains are stationary.
    """
    if episode_index >= task.episodes_per_lifetime:
        raise ContractViolation("episode_index beyond the lifetime")
    rewards = dict(task.object_rewards)
    if task.domain_id is Domain.NONSTATIONARY_ABC and (episode_index // task.swap_period) % 2 == 1:
        rewards["A"], rewards["C"] = rewards["C"], rewards["A"]
    return rewards


# ---------------------------------------------------------------------------
# episode lifecycle
# ---------------------------------------------------------------------------


def reset_episode(task, state=None, rng=None):
    """Start the first episode of a lifetime or the next one after a done."""
    if state is not None and not state.episode_done:
        raise ContractViolation("reset_episode called on a live episode")
    if state is not None and state.lifetime_done:
        raise ContractViolation("reset_episode called on a finished lifetime")
    episode_index = 0 if state is None else state.episode_index + 1
    lifetime_step = 0 if state is None else state.lifetime_step

    if task.domain_id is Domain.EMPTY_ROOMS:
        agent = _empty_rooms_start(task)
        objects = {}
    elif task.domain_id is Domain.KEY_BOX:
        if rng is None:
            raise ContractViolation("Key-Box resets need an rng stream")
        cells = floor_cells(task)
        picks = rng.choice(len(cells), size=5, replace=False)
        key, a, b, c, agent = (cells[int(i)] for i in picks)
        objects = {"key": key, "A": a, "B": b, "C": c}
    else:
        objects, agent = _abc_layout(task)
        objects = dict(objects)

    new = EnvState(agent_cell=agent, object_cells=objects, has_key=False,
                   episode_step=0, episode_index=episode_index,
                   lifetime_step=lifetime_step)
    return new, observation(task, new)


def action_delta(action, permuted=False):
    if permuted:
        action = _PERMUTED[Action(action)]
    return _DELTAS[Action(action)]


def permute_action(action):
    """Reverse left/right and up/down semantics. Involution."""
    return _PERMUTED[Action(action)]


def _move(walls, cell, delta):
    h, w = walls.shape
    r, c = cell
    dr, dc = delta

    def open_(rr, cc):
        return 0 <= rr < h and 0 <= cc < w and not walls[rr, cc]

    nr = r + dr if dr and open_(r + dr, c) else r
    nc = c + dc if dc and open_(r, c + dc) else c
    if not open_(nr, nc):
        return (r, c)
    return (nr, nc)


def step(state, task, action, permuted=False):
    """Advance one environment step; deterministic movement."""
    if state.episode_done:
        raise ContractViolation("step called on a done episode")
    walls = layout_walls(task)
    state.agent_cell = _move(walls, state.agent_cell, action_delta(action, permuted))
    state.episode_step += 1
    state.lifetime_step += 1

    reward = 0.0
    done = False
    rewards = effective_rewards(task, state.episode_index)
    cell = state.agent_cell
    if task.domain_id is Domain.EMPTY_ROOMS:
        if cell == task.goal_cell:
            reward = rewards["goal"]
            done = True
    elif task.domain_id is Domain.KEY_BOX:
        if not state.has_key and cell == state.object_cells["key"]:
            state.has_key = True
            reward = rewards["key"]
        elif state.has_key:
            for name in ("A", "B", "C"):
                if cell == state.object_cells[name]:
                    reward = rewards[name]
                    done = True
                    break
    else:
        for name in ("A", "B", "C"):
            if cell == state.object_cells[name]:
                reward = rewards[name]
                done = True
                break

    if not done and state.episode_step >= task.episode_time_limit:
        done = True

    state.episode_done = done
    state.lifetime_done = done and state.episode_index == task.episodes_per_lifetime - 1
    return StepResult(observation(task, state), float(reward), done, state.lifetime_done)


def observation(task, state, dtype=np.float64):
    """One-hot occupancy planes; the Empty Rooms goal has no plane."""
    walls = layout_walls(task)
    h, w = walls.shape
    obs = np.zeros((OBS_CHANNELS, h, w), dtype=dtype)
    obs[_PLANE_AGENT][state.agent_cell] = 1.0
    obs[_PLANE_WALL] = walls
    for name, plane in (("A", _PLANE_A), ("B", _PLANE_B), ("C", _PLANE_C)):
        if name in state.object_cells:
            obs[plane][state.object_cells[name]] = 1.0
    if "key" in state.object_cells and not state.has_key:
        obs[_PLANE_KEY][state.object_cells["key"]] = 1.0
    if state.has_key:
        obs[_PLANE_HASKEY] = 1.0
    return obs


# ---------------------------------------------------------------------------
# test utility
# ---------------------------------------------------------------------------


def shortest_path_oracle(task, start_cell, target_cell, blocked=(), extended=False):
    """BFS distance under the same movement rules as :func:`step`.

    ``blocked`` cells are treated as impassable (used to route around
    terminating objects). Raises :class:`Unreachable` if no path exists.
    """
    walls = layout_walls(task).copy()
    for cell in blocked:
        walls[cell] = True
    actions = EXTENDED_ACTIONS if extended else CARDINAL_ACTIONS
    from collections import deque

    dist = {tuple(start_cell): 0}
    queue = deque([tuple(start_cell)])
    while queue:
        cell = queue.popleft()
        if cell == tuple(target_cell):
            return dist[cell]
        for a in actions:
            nxt = _move(walls, cell, _DELTAS[a])
            if nxt not in dist:
                dist[nxt] = dist[cell] + 1
                queue.append(nxt)
    raise Unreachable(f"no path from {start_cell} to {target_cell}")
