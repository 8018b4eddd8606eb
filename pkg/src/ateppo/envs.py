"""Multi-goal point mass and corridor-constrained 2-D navigation.

The agent observes only its position; which goal is active is the task id,
passed to the skill encoder as a one-hot vector.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

# absorbs rounding when a sequence of 0.1 steps lands exactly on the threshold
_EPS_SLACK = 1e-9


class EpisodeDone(RuntimeError):
    """Step requested on a finished episode."""


@dataclass(frozen=True)
class TaskId:
    index: int
    k: int

    def __post_init__(self):
        if not 0 <= self.index < self.k:
            raise ValueError(f"task index {self.index} outside [0, {self.k})")


def one_hot(t, k=None):
    """One-hot vector for a :class:`TaskId` or for integer index(es) with ``k``."""
    if isinstance(t, TaskId):
        index, k = t.index, t.k
    else:
        index = np.asarray(t)
        if k is None:
            raise ValueError("k is required for integer task indices")
        if np.any(index < 0) or np.any(index >= k):
            raise ValueError(f"task index out of range [0, {k})")
    return np.eye(k)[index]


@dataclass(frozen=True)
class EnvState:
    position: np.ndarray
    goal: np.ndarray
    step_count: int = 0
    done: bool = False


@dataclass(frozen=True)
class StepResult:
    next_state: EnvState
    reward: float
    done: bool


POINTMASS_REWARDS = ("sparse", "dense")


@dataclass(frozen=True)
class PointMassParams:
    """``reward="sparse"`` pays 1 on reaching the goal; ``"dense"`` pays ``-distance``."""

    a_max: float = 0.1
    eps: float = 0.1
    goal_distance: float = 1.0
    horizon: int = 100
    reward: str = "sparse"

    def __post_init__(self):
        if self.reward not in POINTMASS_REWARDS:
            raise ValueError(f"reward must be one of {POINTMASS_REWARDS}, got {self.reward!r}")


@dataclass(frozen=True)
class Nav2DParams:
    v_max: float = 0.1
    eps: float = 0.1
    corridor_exit: float = 0.5
    corridor_half_width: float = 0.2
    goal_radius: float = 1.0
    horizon: int = 100


def _check_live(s: EnvState):
    if s.done:
        raise EpisodeDone("episode already finished")


def pointmass_step(s: EnvState, a, params: PointMassParams = PointMassParams()) -> StepResult:
    _check_live(s)
    pos = pointmass_move(np.asarray(s.position, float)[None], np.asarray(a, float)[None], params)[0]
    dist = float(np.linalg.norm(pos - s.goal))
    success = dist <= params.eps + _EPS_SLACK
    count = s.step_count + 1
    done = success or count >= params.horizon
    reward = float(success) if params.reward == "sparse" else -dist
    return StepResult(replace(s, position=pos, step_count=count, done=done), reward, done)


def nav2d_step(s: EnvState, a, params: Nav2DParams = Nav2DParams()) -> StepResult:
    _check_live(s)
    pos = nav2d_move(np.asarray(s.position, float)[None], np.asarray(a, float)[None], params)[0]
    dist = float(np.linalg.norm(pos - s.goal))
    count = s.step_count + 1
    done = dist <= params.eps + _EPS_SLACK or count >= params.horizon
    return StepResult(replace(s, position=pos, step_count=count, done=done), -dist, done)


def pointmass_move(pos, a, params):
    return pos + np.clip(a, -params.a_max, params.a_max)


def nav2d_move(pos, a, params):
    new = pos + np.clip(a, -params.v_max, params.v_max)
    in_corridor = new[:, 0] < params.corridor_exit
    w = params.corridor_half_width
    new[:, 1] = np.where(in_corridor, np.clip(new[:, 1], -w, w), new[:, 1])
    return new


class MultiGoalEnv:
    """A task family sharing dynamics and differing only in the goal.

    ``step_batch`` advances many independent episodes at once; the scalar
    ``pointmass_step``/``nav2d_step`` functions are the reference semantics.
    """

    name = "base"
    obs_dim = 2
    action_dim = 2

    def __init__(self, goals, params):
        self.goals = np.asarray(goals, dtype=np.float64)
        self.params = params

    @property
    def k(self):
        return len(self.goals)

    @property
    def horizon(self):
        return self.params.horizon

    @property
    def action_limit(self):
        raise NotImplementedError

    def initial_state(self, task):
        return EnvState(np.zeros(2), self.goals[task].copy())

    def step(self, s, a):
        raise NotImplementedError

    def step_batch(self, pos, actions, tasks):
        """Return ``(new_pos, rewards, terminal)`` for a batch of live episodes."""
        raise NotImplementedError

    def describe(self):
        return {"env": self.name, "goals": self.goals.tolist(), **self.params.__dict__}


class PointMassEnv(MultiGoalEnv):
    name = "pointmass"

    @property
    def action_limit(self):
        return self.params.a_max

    def step(self, s, a):
        return pointmass_step(s, a, self.params)

    def step_batch(self, pos, actions, tasks):
        new = pointmass_move(pos, actions, self.params)
        dist = np.linalg.norm(new - self.goals[tasks], axis=1)
        success = dist <= self.params.eps + _EPS_SLACK
        reward = success.astype(np.float64) if self.params.reward == "sparse" else -dist
        return new, reward, success

    def success(self, pos, tasks):
        return np.linalg.norm(pos - self.goals[tasks], axis=1) <= self.params.eps + _EPS_SLACK


class Nav2DEnv(MultiGoalEnv):
    name = "nav2d"

    @property
    def action_limit(self):
        return self.params.v_max

    def step(self, s, a):
        return nav2d_step(s, a, self.params)

    def step_batch(self, pos, actions, tasks):
        new = nav2d_move(pos, actions, self.params)
        dist = np.linalg.norm(new - self.goals[tasks], axis=1)
        return new, -dist, dist <= self.params.eps + _EPS_SLACK

    def success(self, pos, tasks):
        return np.linalg.norm(pos - self.goals[tasks], axis=1) <= self.params.eps + _EPS_SLACK


def reward_range(env):
    """Width of the interval holding every per-step reward of ``env``.

    Distance rewards lie in ``[-D, 0]`` where ``D`` bounds how far the agent
    can be from a goal within one episode.
    """
    if isinstance(env, PointMassEnv) and env.params.reward == "sparse":
        return 1.0
    reach = env.horizon * env.action_limit * math.sqrt(env.action_dim)
    return float(np.max(np.linalg.norm(env.goals, axis=1)) + reach)


# goal angles (degrees) around the corridor mouth, by task count
NAV2D_PRESETS = {
    5: (0.0, 45.0, -45.0, 90.0, -90.0),
    3: (0.0, 90.0, -90.0),
}


def make_task_set(env, k=None, seed=0, **overrides):
    """Build the environment for a task family.

    ``env`` is ``"pointmass"`` or ``"nav2d"``. Goals are fixed presets; ``seed``
    is accepted for interface symmetry and does not perturb them.
    """
    del seed
    name = str(env).lower()
    if name == "pointmass":
        params = PointMassParams(**overrides)
        k = 4 if k is None else k
        if k != 4:
            raise ValueError("pointmass supports k=4 (goals on the +/-x and +/-y axes)")
        d = params.goal_distance
        goals = [(d, 0.0), (-d, 0.0), (0.0, d), (0.0, -d)]
        return PointMassEnv(goals, params)
    if name in ("nav2d", "navigation", "nav"):
        params = Nav2DParams(**overrides)
        k = 5 if k is None else k
        if k not in NAV2D_PRESETS:
            raise ValueError(f"nav2d supports k in {sorted(NAV2D_PRESETS)}")
        r, cx = params.goal_radius, params.corridor_exit
        goals = [
            (cx + r * math.cos(math.radians(deg)), r * math.sin(math.radians(deg)))
            for deg in NAV2D_PRESETS[k]
        ]
        return Nav2DEnv(goals, params)
    raise ValueError(f"unknown environment {env!r}; expected 'pointmass' or 'nav2d'")


TRAJECTORY_COLUMNS = ("episode", "t", "task", "x", "y", "ax", "ay", "reward")


def write_trajectories(path, trajectories):
    """Dump trajectories as CSV; ``(x, y)`` is the state the action was taken in."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for ep, tr in enumerate(trajectories):
            for t in range(len(tr.rewards)):
                w.writerow([ep, t, tr.task, repr(float(tr.states[t, 0])), repr(float(tr.states[t, 1])),
                            repr(float(tr.actions[t, 0])), repr(float(tr.actions[t, 1])),
                            repr(float(tr.rewards[t]))])


def read_trajectories(path):
    """Return a dict episode -> (task, positions array, rewards array)."""
    rows = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            ep = int(r["episode"])
            task, pts, rew = rows.setdefault(ep, (int(r["task"]), [], []))
            pts.append((float(r["x"]), float(r["y"])))
            rew.append(float(r["reward"]))
    return {ep: (task, np.array(pts), np.array(rew)) for ep, (task, pts, rew) in rows.items()}
