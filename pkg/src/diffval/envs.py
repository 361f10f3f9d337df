"""Desk-scale environments and dataset collectors.

Continuous Mountain Car follows the standard reference dynamics; the maze is
a damped point mass in a grid world with axis-separable wall collisions and
a breadth-first waypoint planner. Both come with families of data-collecting
controllers: an energy-pumping improvement path for the car and one planner
per goal for the mazes. All dynamics constants here are artifact choices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import EpisodeRecord

# --- Mountain Car ------------------------------------------------------------

MC_MIN_POS, MC_MAX_POS = -1.2, 0.6
MC_MAX_SPEED = 0.07
MC_GOAL_POS = 0.45
MC_HORIZON = 999
MC_FORCE = 0.0015
MC_GRAVITY = 0.0025


class MountainCar:
    """Continuous Mountain Car: 2-D state (position, velocity), 1-D action.

    Reward is -0.1 * action^2 per step plus 100 on reaching the goal. The
    left wall zeroes incoming velocity (standard reference behavior).
    """

    state_dim = 2
    action_dim = 1
    action_bound = 1.0
    horizon = MC_HORIZON

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        return np.array([rng.uniform(-0.6, -0.4), 0.0])

    def step(self, state: np.ndarray, action) -> tuple[np.ndarray, float, bool]:
        a = float(np.clip(np.asarray(action).reshape(-1)[0], -1.0, 1.0))
        pos, vel = float(state[0]), float(state[1])
        vel += MC_FORCE * a - MC_GRAVITY * math.cos(3.0 * pos)
        vel = min(max(vel, -MC_MAX_SPEED), MC_MAX_SPEED)
        pos += vel
        if pos < MC_MIN_POS:
            pos = MC_MIN_POS
            if vel < 0.0:
                vel = 0.0
        pos = min(pos, MC_MAX_POS)
        done = pos >= MC_GOAL_POS
        reward = -0.1 * a * a + (100.0 if done else 0.0)
        return np.array([pos, vel]), reward, done


def mc_energy(state: np.ndarray) -> float:
    """Mechanical energy of the car under the sinusoidal hill potential."""
    pos, vel = float(state[0]), float(state[1])
    return 0.5 * vel * vel + (MC_GRAVITY / 3.0) * math.sin(3.0 * pos)


class PumpController:
    """Bang-bang energy pumping, optionally diluted with random-sign actions.

    Every action has full magnitude, so all controllers pay the same action
    cost per step; competence varies purely through how often the sign
    matches the velocity. The improvement path lowers the exploration
    fraction: weak controllers wander the valley and never escape within the
    horizon, strong ones reach the goal in ~100 steps.
    """

    def __init__(self, strength: float = 1.0, explore: float = 0.0):
        self.strength = strength
        self.explore = explore

    def reset(self, state: np.ndarray) -> None:
        pass

    def act(self, state: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.explore and rng.random() < self.explore:
            sign = 1.0 if rng.random() < 0.5 else -1.0
        else:
            sign = 1.0 if state[1] >= 0.0 else -1.0
        a = sign * self.strength
        return np.array([min(max(a, -1.0), 1.0)])


def mc_improvement_path(n_policies: int) -> list[PumpController]:
    """Controllers of increasing competence, indexed by position in the path.

    The exploration fraction follows a cosine ramp from 1 (pure random signs,
    rarely escapes) to 0 (pure pumping), which spreads rollout returns fairly
    evenly across the path.
    """
    explores = np.cos(np.linspace(0.0, np.pi / 2.0, n_policies))
    return [PumpController(1.0, float(e)) for e in explores]


def mc_episode_budgets(n_policies: int, total_steps: int = 18000) -> list[int]:
    """Episode budgets that roughly balance collected steps per policy,
    compensating for weak controllers' long episodes."""
    explores = np.cos(np.linspace(0.0, np.pi / 2.0, n_policies))
    expected_len = 100.0 + 850.0 * explores**4
    per_policy = total_steps / n_policies
    return [max(2, int(round(per_policy / el))) for el in expected_len]


# --- Maze --------------------------------------------------------------------

MAZE_DAMPING = 0.9
MAZE_DT = 0.2
MAZE_ACTION_BOUND = 0.5
MAZE_HORIZON = 600
MAZE_CAPTURE_RADIUS = 0.4
_WALL_MARGIN = 1e-3


@dataclass
class MazeSpec:
    """Grid maze: walls[i, j] True for blocked cells; positions live in
    continuous coordinates with cell (i, j) spanning [j, j+1) x [i, i+1)."""

    walls: np.ndarray
    start: tuple[int, int]
    goals: list[tuple[int, int]]

    @property
    def rows(self) -> int:
        return self.walls.shape[0]

    @property
    def cols(self) -> int:
        return self.walls.shape[1]

    @classmethod
    def from_text(cls, text: str) -> "MazeSpec":
        lines = [ln for ln in text.strip("\n").splitlines() if ln]
        cols = max(len(ln) for ln in lines)
        walls = np.zeros((len(lines), cols), dtype=bool)
        start = None
        goals = []
        for i, line in enumerate(lines):
            for j in range(cols):
                ch = line[j] if j < len(line) else "#"
                if ch == "#":
                    walls[i, j] = True
                elif ch == "S":
                    start = (i, j)
                elif ch == "G":
                    goals.append((i, j))
                elif ch not in ". ":
                    raise ValueError(f"unknown maze cell {ch!r} at ({i},{j})")
        if start is None:
            raise ValueError("maze has no start cell")
        spec = cls(walls, start, goals)
        spec.validate()
        return spec

    @classmethod
    def from_file(cls, path: str | Path) -> "MazeSpec":
        return cls.from_text(Path(path).read_text())

    def validate(self) -> None:
        border = (
            self.walls[0, :].all()
            and self.walls[-1, :].all()
            and self.walls[:, 0].all()
            and self.walls[:, -1].all()
        )
        if not border:
            raise ValueError("maze boundary must be fully walled")
        for cell in [self.start, *self.goals]:
            if self.walls[cell]:
                raise ValueError(f"cell {cell} lies in a wall")

    def cell_center(self, cell: tuple[int, int]) -> np.ndarray:
        return np.array([cell[1] + 0.5, cell[0] + 0.5])

    def cell_of(self, pos: np.ndarray) -> tuple[int, int]:
        i = min(max(int(math.floor(pos[1])), 0), self.rows - 1)
        j = min(max(int(math.floor(pos[0])), 0), self.cols - 1)
        return (i, j)

    def is_free(self, cell: tuple[int, int]) -> bool:
        return not bool(self.walls[cell])


def bfs_distances(spec: MazeSpec, start_cell: tuple[int, int]) -> np.ndarray:
    """Hop distance from start over free cells; -1 for walls/unreachable."""
    dist = np.full(spec.walls.shape, -1, dtype=np.int64)
    if spec.walls[start_cell]:
        return dist
    dist[start_cell] = 0
    queue = [start_cell]
    while queue:
        i, j = queue.pop(0)
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ni, nj = i + di, j + dj
            if 0 <= ni < spec.rows and 0 <= nj < spec.cols:
                if not spec.walls[ni, nj] and dist[ni, nj] < 0:
                    dist[ni, nj] = dist[i, j] + 1
                    queue.append((ni, nj))
    return dist


def bfs_path(spec: MazeSpec, start: tuple[int, int], goal: tuple[int, int]):
    """Shortest free-cell path including both endpoints."""
    dist = bfs_distances(spec, goal)
    if dist[start] < 0:
        raise ValueError(f"goal {goal} unreachable from {start}")
    path = [start]
    cur = start
    while cur != goal:
        i, j = cur
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ni, nj = i + di, j + dj
            if 0 <= ni < spec.rows and 0 <= nj < spec.cols and dist[ni, nj] == dist[cur] - 1:
                cur = (ni, nj)
                break
        path.append(cur)
    return path


class MazeEnv:
    """Damped point mass: state (x, y, vx, vy), bounded 2-D force action."""

    state_dim = 4
    action_dim = 2
    action_bound = MAZE_ACTION_BOUND
    horizon = MAZE_HORIZON

    def __init__(self, spec: MazeSpec):
        self.spec = spec

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        center = self.spec.cell_center(self.spec.start)
        pos = center + rng.uniform(-0.2, 0.2, size=2)
        return np.array([pos[0], pos[1], 0.0, 0.0])

    def step(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        a = np.clip(np.asarray(action, dtype=np.float64), -MAZE_ACTION_BOUND, MAZE_ACTION_BOUND)
        x, y, vx, vy = (float(v) for v in state)
        vx = MAZE_DAMPING * vx + a[0] * MAZE_DT
        vy = MAZE_DAMPING * vy + a[1] * MAZE_DT

        new_x = x + vx * MAZE_DT
        i = int(math.floor(y))
        if vx != 0.0:
            j_new = int(math.floor(new_x))
            if j_new != int(math.floor(x)) and (
                not (0 <= j_new < self.spec.cols) or self.spec.walls[i, j_new]
            ):
                new_x = (j_new + 1 + _WALL_MARGIN) if vx < 0 else (j_new - _WALL_MARGIN)
                vx = 0.0
        x = new_x

        new_y = y + vy * MAZE_DT
        j = int(math.floor(x))
        if vy != 0.0:
            i_new = int(math.floor(new_y))
            if i_new != int(math.floor(y)) and (
                not (0 <= i_new < self.spec.rows) or self.spec.walls[i_new, j]
            ):
                new_y = (i_new + 1 + _WALL_MARGIN) if vy < 0 else (i_new - _WALL_MARGIN)
                vy = 0.0
        y = new_y
        return np.array([x, y, vx, vy])


class WaypointPolicy:
    """PD controller tracking the breadth-first path to one goal.

    Advances to the next waypoint inside the capture radius and regulates
    around the goal once reached, so the late part of every episode sits at
    the goal.
    """

    def __init__(self, spec: MazeSpec, goal_index: int, kp: float = 1.0, kd: float = 1.2,
                 noise: float = 0.05):
        if not 0 <= goal_index < len(spec.goals):
            raise ValueError(f"goal index {goal_index} out of range")
        self.spec = spec
        self.goal_index = goal_index
        self.kp, self.kd, self.noise = kp, kd, noise
        self.path = bfs_path(spec, spec.start, spec.goals[goal_index])
        self.waypoints = [spec.cell_center(c) for c in self.path]
        self._idx = 0

    def reset(self, state: np.ndarray) -> None:
        self._idx = 0

    def act(self, state: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        pos = state[:2]
        vel = state[2:]
        while (
            self._idx < len(self.waypoints) - 1
            and np.linalg.norm(self.waypoints[self._idx] - pos) < MAZE_CAPTURE_RADIUS
        ):
            self._idx += 1
        target = self.waypoints[self._idx]
        a = self.kp * (target - pos) - self.kd * vel
        if self.noise:
            a = a + self.noise * rng.standard_normal(2)
        return np.clip(a, -MAZE_ACTION_BOUND, MAZE_ACTION_BOUND)

    def at_goal(self, state: np.ndarray) -> bool:
        goal = self.spec.cell_center(self.spec.goals[self.goal_index])
        return bool(np.linalg.norm(goal - state[:2]) < MAZE_CAPTURE_RADIUS)


U_MAZE_TEXT = """\
#####
#G.G#
#.#.#
#S.G#
#####
"""

LARGE_MAZE_TEXT = """\
############
#....#..G..#
#.##.#.#.#.#
#......#...#
#.####.###.#
#..#.#....G#
##.#.#.#.###
#S.#...#.G.#
############
"""


def u_maze() -> MazeSpec:
    return MazeSpec.from_text(U_MAZE_TEXT)


def large_maze() -> MazeSpec:
    return MazeSpec.from_text(LARGE_MAZE_TEXT)


# --- Collection ---------------------------------------------------------------


def rollout_mc(env: MountainCar, controller, rng: np.random.Generator):
    """One Mountain Car episode; returns (states, actions, rewards)."""
    state = env.reset(rng)
    controller.reset(state)
    states, actions, rewards = [state], [], []
    for _ in range(env.horizon):
        a = controller.act(state, rng)
        state, r, done = env.step(state, a)
        states.append(state)
        actions.append(a)
        rewards.append(r)
        if done:
            break
    return np.array(states), np.array(actions), np.array(rewards)


def rollout_maze(env: MazeEnv, controller, rng: np.random.Generator, horizon: int | None = None):
    """One maze episode of fixed length; reward 1 inside the goal radius."""
    horizon = horizon or env.horizon
    state = env.reset(rng)
    controller.reset(state)
    states, actions, rewards = [state], [], []
    for _ in range(horizon):
        a = controller.act(state, rng)
        state = env.step(state, a)
        states.append(state)
        actions.append(a)
        rewards.append(1.0 if controller.at_goal(state) else 0.0)
    return np.array(states), np.array(actions), np.array(rewards)


def collect_episodes(
    env,
    controllers: list,
    episodes_per_policy: int | list[int],
    rng: np.random.Generator,
    with_actions: bool = True,
    with_rewards: bool = True,
) -> list[EpisodeRecord]:
    """Roll every controller for its episode budget and tag each episode
    with the controller's index as its policy id.

    A per-policy budget list lets callers balance step counts when episode
    lengths differ wildly across the improvement path.
    """
    if isinstance(episodes_per_policy, int):
        episodes_per_policy = [episodes_per_policy] * len(controllers)
    if len(episodes_per_policy) != len(controllers):
        raise ValueError("one episode budget per controller required")
    records = []
    eid = 0
    is_maze = isinstance(env, MazeEnv)
    for pid, (controller, budget) in enumerate(zip(controllers, episodes_per_policy)):
        for _ in range(budget):
            if is_maze:
                states, acts, rews = rollout_maze(env, controller, rng)
            else:
                states, acts, rews = rollout_mc(env, controller, rng)
            records.append(
                EpisodeRecord(
                    eid,
                    pid,
                    states,
                    acts if with_actions else None,
                    rews if with_rewards else None,
                )
            )
            eid += 1
    return records


def make_chain_episodes(
    points: np.ndarray,
    n_episodes: int,
    length: int,
    rng: np.random.Generator,
    rewards: np.ndarray | None = None,
) -> list[EpisodeRecord]:
    """Deterministic cyclic chain over fixed 1-D states, for oracle tests.

    State i deterministically transitions to state (i+1) mod k; the reward of
    a step is the reward attached to the state being left.
    """
    k = len(points)
    records = []
    for eid in range(n_episodes):
        start = int(rng.integers(0, k))
        idx = (start + np.arange(length + 1)) % k
        states = np.asarray(points, dtype=np.float64)[idx][:, None]
        rews = None if rewards is None else np.asarray(rewards, dtype=np.float64)[idx[:-1]]
        records.append(EpisodeRecord(eid, 0, states, None, rews))
    return records
