"""Environment dynamics, planners, and dataset collection."""

import math

import numpy as np
import pytest

from diffval.data import read_dataset, write_dataset
from diffval.envs import (
    MAZE_DAMPING,
    MAZE_DT,
    MazeEnv,
    MazeSpec,
    MountainCar,
    PumpController,
    WaypointPolicy,
    bfs_distances,
    bfs_path,
    collect_episodes,
    large_maze,
    mc_energy,
    mc_improvement_path,
    rollout_maze,
    rollout_mc,
    u_maze,
)


def test_mc_gravity_term():
    mc = MountainCar()
    state, _, _ = mc.step(np.array([-0.5, 0.0]), 0.0)
    assert state[1] == pytest.approx(-0.0025 * math.cos(-1.5), abs=1e-12)


def test_mc_velocity_clamped():
    mc = MountainCar()
    rng = np.random.default_rng(0)
    state = np.array([-0.5, 0.0])
    for _ in range(2000):
        state, _, _ = mc.step(state, rng.uniform(-1, 1))
        assert abs(state[1]) <= 0.07
        assert -1.2 <= state[0] <= 0.6


def test_mc_reward_convention():
    mc = MountainCar()
    _, r, done = mc.step(np.array([-0.5, 0.0]), 0.5)
    assert not done
    assert r == pytest.approx(-0.1 * 0.25)
    _, r, done = mc.step(np.array([0.449, 0.07]), 1.0)
    assert done
    assert r == pytest.approx(100.0 - 0.1)


def test_mc_bang_bang_reaches_goal():
    mc = MountainCar()
    controller = PumpController(1.0, 0.0)
    state = np.array([-0.5, 0.0])
    rng = np.random.default_rng(1)
    for t in range(999):
        state, _, done = mc.step(state, controller.act(state, rng))
        if done:
            break
    assert done and t < 999


def test_mc_energy_non_increasing_with_zero_action():
    # Symplectic integration wobbles by O(1e-5) per step; beyond that the
    # passive car never gains energy.
    mc = MountainCar()
    rng = np.random.default_rng(2)
    for _ in range(20):
        state = np.array([rng.uniform(-1.1, 0.4), rng.uniform(-0.05, 0.05)])
        e_prev = mc_energy(state)
        for _ in range(300):
            state, _, done = mc.step(state, 0.0)
            e = mc_energy(state)
            assert e - e_prev < 5e-5
            e_prev = e
            if done:
                break


def test_mc_improvement_path_orders_returns():
    mc = MountainCar()
    rng = np.random.default_rng(3)
    means = []
    for controller in mc_improvement_path(4):
        rets = [rollout_mc(mc, controller, rng)[2].sum() for _ in range(5)]
        means.append(np.mean(rets))
    assert means[0] < means[1] < means[-1]


def test_maze_zero_action_zero_velocity_fixed_point():
    env = MazeEnv(u_maze())
    state = np.array([1.5, 3.5, 0.0, 0.0])
    out = env.step(state, np.zeros(2))
    assert out == pytest.approx(state)


def test_maze_wall_collision_keeps_free_space():
    spec = u_maze()
    env = MazeEnv(spec)
    state = np.array([1.5, 3.5, 0.0, 0.0])
    for _ in range(200):
        state = env.step(state, np.array([0.5, 0.0]))  # drive into the east wall
        assert spec.is_free(spec.cell_of(state[:2]))
    assert state[0] < spec.cols


def test_maze_free_space_double_integrator_closed_form():
    # 40x40 open maze: no walls in reach, so the damped integrator recursion
    # is exact.
    text = "#" * 42 + "\n" + "\n".join("#" + "." * 40 + "#" for _ in range(40)) + "\n" + "#" * 42
    spec = MazeSpec.from_text(text.replace(".", "S", 1))
    env = MazeEnv(spec)
    a = np.array([0.3, -0.2])
    state = np.array([20.0, 20.0, 0.05, 0.1])
    p, v = state[:2].copy(), state[2:].copy()
    for _ in range(10):
        state = env.step(state, a)
        v = MAZE_DAMPING * v + a * MAZE_DT
        p = p + v * MAZE_DT
        assert state[:2] == pytest.approx(p, abs=1e-12)
        assert state[2:] == pytest.approx(v, abs=1e-12)


def test_maze_random_actions_never_enter_walls():
    spec = large_maze()
    env = MazeEnv(spec)
    rng = np.random.default_rng(4)
    state = env.reset(rng)
    for _ in range(100_000):
        state = env.step(state, rng.uniform(-0.5, 0.5, 2))
        assert spec.is_free(spec.cell_of(state[:2]))


def test_maze_determinism():
    spec = u_maze()
    env = MazeEnv(spec)
    s = np.array([1.3, 3.2, 0.02, -0.04])
    a = np.array([0.2, 0.1])
    assert np.array_equal(env.step(s, a), env.step(s, a))


def test_waypoint_paths_stay_in_free_cells():
    for spec in (u_maze(), large_maze()):
        for gi in range(len(spec.goals)):
            for cell in WaypointPolicy(spec, gi).path:
                assert spec.is_free(cell)


def test_waypoint_planner_reaches_goals_within_horizon():
    spec = u_maze()
    env = MazeEnv(spec)
    rng = np.random.default_rng(5)
    for gi in range(3):
        policy = WaypointPolicy(spec, gi)
        states, _, _ = rollout_maze(env, policy, rng)
        goal = spec.cell_center(spec.goals[gi])
        dists = np.linalg.norm(states[:, :2] - goal, axis=1)
        assert dists.min() < 0.4
        assert np.argmax(dists < 0.4) < 600


def test_waypoint_goals_terminate_in_distinct_regions():
    spec = u_maze()
    env = MazeEnv(spec)
    rng = np.random.default_rng(6)
    finals = []
    for gi in range(3):
        policy = WaypointPolicy(spec, gi)
        finals.append(
            np.mean([rollout_maze(env, policy, rng)[0][-1][:2] for _ in range(3)], axis=0)
        )
    finals = np.array(finals)
    for i in range(3):
        for j in range(i + 1, 3):
            assert np.linalg.norm(finals[i] - finals[j]) > 1.0


def test_waypoint_unreachable_goal_rejected():
    spec = MazeSpec.from_text("#####\n#S#G#\n#####")
    with pytest.raises(ValueError, match="unreachable"):
        bfs_path(spec, spec.start, spec.goals[0])


def test_bfs_distances_walls_are_negative():
    spec = u_maze()
    dist = bfs_distances(spec, spec.start)
    assert dist[spec.start] == 0
    assert np.all(dist[spec.walls] == -1)
    assert dist[2, 2] == -1  # the interior pillar


def test_maze_spec_requires_border():
    with pytest.raises(ValueError, match="boundary"):
        MazeSpec.from_text("####\n#S..\n####")


def test_maze_spec_file_roundtrip(tmp_path):
    path = tmp_path / "maze.txt"
    path.write_text("#####\n#G.S#\n#####\n")
    spec = MazeSpec.from_file(path)
    assert spec.start == (1, 3)
    assert spec.goals == [(1, 1)]


def test_collect_line_counts(tmp_path):
    mc = MountainCar()
    episodes = collect_episodes(mc, mc_improvement_path(2), 5, np.random.default_rng(7))
    path = tmp_path / "mc.csv"
    write_dataset(path, episodes)
    lines = path.read_text().splitlines()
    assert len(lines) == 1 + sum(ep.length + 1 for ep in episodes)


def test_collect_action_free(tmp_path):
    spec = u_maze()
    episodes = collect_episodes(
        MazeEnv(spec), [WaypointPolicy(spec, 0)], 1, np.random.default_rng(8),
        with_actions=False, with_rewards=False,
    )
    path = tmp_path / "free.csv"
    write_dataset(path, episodes)
    assert "a0" not in path.read_text().splitlines()[0]
    back = read_dataset(path)
    assert back[0].actions is None and back[0].rewards is None


def test_collect_deterministic_bytes(tmp_path):
    mc = MountainCar()
    out = []
    for name in ("a.csv", "b.csv"):
        episodes = collect_episodes(mc, mc_improvement_path(2), 2, np.random.default_rng(9))
        path = tmp_path / name
        write_dataset(path, episodes)
        out.append(path.read_bytes())
    assert out[0] == out[1]
