"""Evaluation studies: correlation of V with returns, conditional maze
sampling, and the discount sweep over sampled time offsets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.vq import kmeans2

from .data import sample_delta_ts, scalar_policy_embedding
from .diffusion import sample_future_states
from .envs import MazeEnv, MazeSpec, bfs_distances, rollout_mc
from .train import ModelBundle, make_env
from .value import estimate_v


class EvalError(ValueError):
    pass


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson r; nan when either side is constant (degenerate)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.std() == 0.0 or y.std() == 0.0:
        return float("nan")
    return float(np.corrcoef(x, y)[0, 1])


@dataclass
class CorrelationResult:
    r_returns_vs_v: float
    r_v_vs_reward: float
    episode_rows: list[dict] = field(default_factory=list)  # policy, episode, return, mean_v
    state_rows: list[dict] = field(default_factory=list)    # policy, v, mean_reward


def eval_correlation(
    bundle: ModelBundle,
    controllers: list,
    episodes_per_policy: int,
    seed: int,
    states_per_episode: int = 8,
) -> CorrelationResult:
    """Correlate rollout returns of each policy in the improvement path with
    the diffusion value estimates conditioned on that policy's index.

    Rolls each controller in the environment for Monte-Carlo returns, then
    estimates V at a spread of visited states with the scalar embedding of
    the controller's index, pooling (return, mean V) pairs per episode and
    (V, mean sampled reward) pairs per state.
    """
    if len(controllers) < 3:
        raise EvalError("correlation study needs at least 3 policies on the improvement path")
    if bundle.reward_model is None:
        raise EvalError("run has no reward model; train without pretrain_diffusion_only")
    env = make_env(bundle.config.env)
    if env is None or isinstance(env, MazeEnv):
        raise EvalError(
            f"correlation study needs a reward-emitting environment, not {bundle.config.env!r}"
        )
    cfg = bundle.config
    episode_rows, state_rows = [], []
    for pid, controller in enumerate(controllers):
        phi = scalar_policy_embedding(pid, cfg.phi_dim).value
        act_rng = np.random.default_rng([seed, pid, 1])

        def policy_fn(norm_states: np.ndarray) -> np.ndarray:
            raw = bundle.normalizer.denormalize(norm_states)
            return np.array([controller.act(s, act_rng) for s in raw])

        for ep in range(episodes_per_policy):
            roll_rng = np.random.default_rng([seed, pid, 2, ep])
            states, actions, rewards = rollout_mc(env, controller, roll_rng)
            ret = float(np.sum(rewards))
            length = states.shape[0] - 1
            picks = np.unique(np.linspace(0, max(length - 1, 0), states_per_episode).astype(int))
            v_rng = np.random.default_rng([seed, pid, 3, ep])
            v_values = []
            for t in picks:
                est = estimate_v(
                    bundle.normalizer.normalize(states[t]),
                    policy_fn,
                    bundle.reward_model,
                    bundle.denoiser,
                    bundle.schedule,
                    phi,
                    cfg.n_samples,
                    cfg.gamma,
                    env.horizon - int(t),
                    v_rng,
                )
                v_values.append(est.mean_value)
                state_rows.append(
                    {
                        "policy": pid,
                        "v": est.mean_value,
                        "mean_reward": float(np.mean(est.per_sample_rewards)),
                    }
                )
            episode_rows.append(
                {
                    "policy": pid,
                    "episode": ep,
                    "return": ret,
                    "mean_v": float(np.mean(v_values)),
                }
            )
    r1 = pearson(
        np.array([row["return"] for row in episode_rows]),
        np.array([row["mean_v"] for row in episode_rows]),
    )
    r2 = pearson(
        np.array([row["v"] for row in state_rows]),
        np.array([row["mean_reward"] for row in state_rows]),
    )
    return CorrelationResult(r1, r2, episode_rows, state_rows)


def fit_position_clusters(
    episodes,
    n_policies: int,
    k: int = 8,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-policy k-means over visited positions (raw coordinates).

    Returns (centroids, labels): stacked centroids and the policy index each
    centroid belongs to.
    """
    centroids, labels = [], []
    for pid in range(n_policies):
        pts = np.concatenate(
            [ep.states[:, :2] for ep in episodes if ep.policy_id == pid]
        )
        kk = min(k, pts.shape[0])
        cent, _ = kmeans2(pts, kk, minit="++", seed=seed + pid)
        centroids.append(cent)
        labels.append(np.full(cent.shape[0], pid))
    return np.concatenate(centroids), np.concatenate(labels)


@dataclass
class MazeConditioningResult:
    separation: float
    per_policy_fraction: list[float]
    samples_by_policy: list[np.ndarray]  # raw positions
    centroids: np.ndarray
    centroid_labels: np.ndarray


def eval_maze_conditioning(
    bundle: ModelBundle,
    spec: MazeSpec,
    episodes,
    policy_indices: list[int],
    n_per_index: int,
    seed: int,
    delta_max: int | None = None,
) -> MazeConditioningResult:
    """Sample future states from the start conditioned on each policy index
    and score how often the nearest ground-truth cluster matches.

    Offsets sweep the data horizon uniformly so the samples paint the whole
    conditional trajectory, mirroring the ground-truth distributions.
    """
    env = MazeEnv(spec)
    delta_max = delta_max or env.horizon
    centroids, labels = fit_position_clusters(episodes, len(policy_indices), seed=seed)
    start = np.array([*spec.cell_center(spec.start), 0.0, 0.0])
    s0 = bundle.normalizer.normalize(start)
    deltas = np.maximum(1, np.round(np.linspace(1, delta_max, n_per_index))).astype(np.int64)
    samples_by_policy, fractions = [], []
    for pid in policy_indices:
        phi = scalar_policy_embedding(pid, bundle.config.phi_dim).value
        rng = np.random.default_rng([seed, 11, pid])
        samples = sample_future_states(
            bundle.denoiser, bundle.schedule, s0, deltas, phi, n_per_index, rng
        )
        raw = bundle.normalizer.denormalize(samples)
        pos = raw[:, :2]
        d2 = ((pos[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        predicted = labels[np.argmin(d2, axis=1)]
        fractions.append(float(np.mean(predicted == pid)))
        samples_by_policy.append(raw)
    return MazeConditioningResult(
        float(np.mean(fractions)), fractions, samples_by_policy, centroids, labels
    )


def geodesic_distances(spec: MazeSpec, positions: np.ndarray) -> np.ndarray:
    """BFS hop distance from the start cell for each position; positions in
    wall cells fall back to the nearest free cell."""
    dist_map = bfs_distances(spec, spec.start)
    free = np.argwhere(~spec.walls)
    free_centers = free[:, ::-1] + 0.5  # (x, y) order
    free_dists = dist_map[free[:, 0], free[:, 1]]
    out = np.empty(positions.shape[0])
    for i, p in enumerate(positions):
        cell = spec.cell_of(p)
        if spec.is_free(cell) and dist_map[cell] >= 0:
            out[i] = dist_map[cell]
        else:
            nearest = np.argmin(((free_centers - p) ** 2).sum(axis=1))
            out[i] = free_dists[nearest]
    return out


@dataclass
class GammaSweepResult:
    gammas: list[float]
    mean_distances: list[float]
    samples_by_gamma: list[np.ndarray]  # raw positions


def eval_gamma_sweep(
    bundle: ModelBundle,
    spec: MazeSpec,
    gammas: list[float],
    policy_index: int,
    n: int,
    seed: int,
    horizon: int | None = None,
) -> GammaSweepResult:
    """For each discount, draw offsets from its truncated geometric, sample
    future states from the fixed start, and report the mean geodesic
    distance travelled."""
    if sorted(gammas) != list(gammas):
        raise EvalError("gammas must be sorted ascending")
    horizon = horizon or MazeEnv(spec).horizon
    start = np.array([*spec.cell_center(spec.start), 0.0, 0.0])
    s0 = bundle.normalizer.normalize(start)
    phi = scalar_policy_embedding(policy_index, bundle.config.phi_dim).value
    means, sample_sets = [], []
    for gi, gamma in enumerate(gammas):
        rng = np.random.default_rng([seed, 23, gi])
        deltas = sample_delta_ts(gamma, np.full(n, horizon), rng)
        samples = sample_future_states(
            bundle.denoiser, bundle.schedule, s0, deltas, phi, n, rng
        )
        raw = bundle.normalizer.denormalize(samples)
        dists = geodesic_distances(spec, raw[:, :2])
        means.append(float(np.mean(dists)))
        sample_sets.append(raw[:, :2])
    return GammaSweepResult(list(gammas), means, sample_sets)
