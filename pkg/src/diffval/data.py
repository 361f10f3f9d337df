"""Episode datasets and diffusion training tuples.

Datasets are stored as CSV, one step per line, grouped by episode:

    episode_id,policy_id,t,s0,...,a0,...,reward,done

The header declares the dimensions through its column names; action columns
and the reward column are omitted entirely for action-free / reward-free
exports. The final row of an episode carries the terminal state with empty
action/reward cells and done=1.

Tuple construction samples an anchor step uniformly and a time offset from
a truncated geometric in the discount, so the emitted (state, successor,
future state) triples follow the discounted occupancy weighting. States are
normalized per dimension to [-1, 1] before entering the diffusion model.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffusion import sinusoidal_embedding


class DatasetError(ValueError):
    pass


@dataclass
class EpisodeRecord:
    """One trajectory; states has length H+1, actions/rewards length H."""

    episode_id: int
    policy_id: int
    states: np.ndarray
    actions: np.ndarray | None = None
    rewards: np.ndarray | None = None

    @property
    def length(self) -> int:
        return self.states.shape[0] - 1

    def validate(self) -> None:
        if self.states.shape[0] < 2:
            raise DatasetError(f"episode {self.episode_id}: needs at least 2 states")
        if self.actions is not None and self.actions.shape[0] != self.length:
            raise DatasetError(f"episode {self.episode_id}: action count != length")
        if self.rewards is not None and self.rewards.shape[0] != self.length:
            raise DatasetError(f"episode {self.episode_id}: reward count != length")


def _fmt(x: float) -> str:
    return repr(float(x))


def write_dataset(path: str | Path, episodes: list[EpisodeRecord]) -> None:
    if not episodes:
        raise DatasetError("refusing to write an empty dataset")
    state_dim = episodes[0].states.shape[1]
    action_dim = 0 if episodes[0].actions is None else episodes[0].actions.shape[1]
    has_reward = episodes[0].rewards is not None
    header = ["episode_id", "policy_id", "t"]
    header += [f"s{i}" for i in range(state_dim)]
    header += [f"a{i}" for i in range(action_dim)]
    if has_reward:
        header.append("reward")
    header.append("done")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for ep in episodes:
                ep.validate()
                for t in range(ep.states.shape[0]):
                    row = [ep.episode_id, ep.policy_id, t]
                    row += [_fmt(v) for v in ep.states[t]]
                    terminal = t == ep.length
                    if action_dim:
                        row += [""] * action_dim if terminal else [_fmt(v) for v in ep.actions[t]]
                    if has_reward:
                        row.append("" if terminal else _fmt(ep.rewards[t]))
                    row.append(1 if terminal else 0)
                    writer.writerow(row)
    except OSError as exc:
        raise DatasetError(f"cannot write dataset {path}: {exc}") from exc


def read_dataset(path: str | Path) -> list[EpisodeRecord]:
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DatasetError(f"cannot read dataset {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DatasetError(f"{path}: missing header")
        state_cols = [i for i, name in enumerate(header) if name.startswith("s") and name[1:].isdigit()]
        action_cols = [i for i, name in enumerate(header) if name.startswith("a") and name[1:].isdigit()]
        reward_col = header.index("reward") if "reward" in header else None
        episodes: list[EpisodeRecord] = []
        cur_id = None
        states: list[list[float]] = []
        actions: list[list[float]] = []
        rewards: list[float] = []
        policy_id = 0

        def flush():
            if cur_id is None:
                return
            episodes.append(
                EpisodeRecord(
                    cur_id,
                    policy_id,
                    np.array(states, dtype=np.float64),
                    np.array(actions, dtype=np.float64) if action_cols else None,
                    np.array(rewards, dtype=np.float64) if reward_col is not None else None,
                )
            )

        for row in reader:
            eid = int(row[0])
            if eid != cur_id:
                flush()
                cur_id, states, actions, rewards = eid, [], [], []
                policy_id = int(row[1])
            states.append([float(row[i]) for i in state_cols])
            done = row[-1] == "1"
            if not done:
                if action_cols:
                    actions.append([float(row[i]) for i in action_cols])
                if reward_col is not None:
                    rewards.append(float(row[reward_col]))
        flush()
    if not episodes:
        raise DatasetError(f"{path}: no episodes")
    for ep in episodes:
        ep.validate()
    return episodes


class Normalizer:
    """Affine per-dimension map of the observed state range onto [-1, 1].

    Dimensions with zero range map to 0. Out-of-range inputs are clamped and
    counted rather than rejected.
    """

    def __init__(self, lo: np.ndarray, hi: np.ndarray):
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        if np.any(self.hi < self.lo):
            raise DatasetError("normalizer: max < min")
        self.degenerate = self.hi == self.lo
        self.clip_count = 0

    @classmethod
    def fit(cls, episodes: list[EpisodeRecord]) -> "Normalizer":
        if not episodes:
            raise DatasetError("cannot fit a normalizer on an empty dataset")
        lo = episodes[0].states.min(axis=0)
        hi = episodes[0].states.max(axis=0)
        for ep in episodes[1:]:
            lo = np.minimum(lo, ep.states.min(axis=0))
            hi = np.maximum(hi, ep.states.max(axis=0))
        return cls(lo, hi)

    def normalize(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        span = np.where(self.degenerate, 1.0, self.hi - self.lo)
        out = 2.0 * (s - self.lo) / span - 1.0
        out = np.where(self.degenerate, 0.0, out)
        clipped = np.clip(out, -1.0, 1.0)
        self.clip_count += int(np.sum(clipped != out))
        return clipped

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        span = self.hi - self.lo
        return np.where(self.degenerate, self.lo, self.lo + (z + 1.0) * 0.5 * span)


def sample_delta_t(gamma: float, remaining: int, rng: np.random.Generator) -> int:
    """Offset in {1..remaining} with probability proportional to gamma^(dt-1)."""
    return int(sample_delta_ts(gamma, np.array([remaining]), rng)[0])


def sample_delta_ts(gamma: float, remaining: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    remaining = np.asarray(remaining, dtype=np.int64)
    if np.any(remaining < 1):
        raise ValueError("remaining horizon must be at least 1")
    if gamma == 0.0:
        return np.ones_like(remaining)
    u = rng.random(remaining.shape)
    # Inverse CDF of the truncated geometric: F(k) = (1-gamma^k)/(1-gamma^R).
    mass = 1.0 - np.power(gamma, remaining.astype(np.float64))
    k = np.ceil(np.log1p(-u * mass) / np.log(gamma)).astype(np.int64)
    return np.clip(k, 1, remaining)


@dataclass
class PolicyEmbedding:
    mode: str  # "scalar" | "sequential"
    value: np.ndarray
    context_length: int


def scalar_policy_embedding(policy_index: int, dim: int) -> PolicyEmbedding:
    """Sinusoidal code of the policy's position in the improvement path."""
    if policy_index < 0:
        raise ValueError("policy index must be non-negative")
    return PolicyEmbedding("scalar", sinusoidal_embedding(policy_index, dim), 1)


class SequentialEmbedder:
    """Order-invariant pooled encoding of a rollout state window.

    Each state passes through a fixed seeded affine map to the embedding
    dimension and the window is mean-pooled, so variable-length contexts
    (up to ``max_window``) produce a fixed-size vector.
    """

    SEED = 240

    def __init__(self, state_dim: int, dim: int, max_window: int = 16):
        self.state_dim = state_dim
        self.dim = dim
        self.max_window = max_window
        rng = np.random.default_rng(self.SEED)
        self.weight = rng.normal(0.0, 1.0 / np.sqrt(state_dim), size=(dim, state_dim))
        self.bias = rng.normal(0.0, 0.1, size=dim)

    def embed(self, window: np.ndarray) -> PolicyEmbedding:
        window = np.asarray(window, dtype=np.float64)
        if window.ndim == 1:
            window = window[None, :]
        if window.shape[0] == 0:
            raise DatasetError("sequential policy embedding needs at least one state")
        if window.shape[0] > self.max_window:
            raise DatasetError(
                f"window of {window.shape[0]} states exceeds max {self.max_window}"
            )
        encoded = window @ self.weight.T + self.bias
        return PolicyEmbedding("sequential", encoded.mean(axis=0), window.shape[0])


@dataclass
class OccupancyTuple:
    """One diffusion training sample (normalized states)."""

    s_t: np.ndarray
    s_next: np.ndarray
    s_future: np.ndarray
    delta_t: int
    policy_id: int
    anchor: int
    episode_id: int
    window: np.ndarray | None = None


def make_tuples(
    episode: EpisodeRecord,
    normalizer: Normalizer,
    gamma: float,
    count: int,
    rng: np.random.Generator,
    window_size: int = 0,
) -> list[OccupancyTuple]:
    """Sample training tuples from one episode: uniform anchor, truncated
    geometric offset. Never touches actions or rewards."""
    H = episode.length
    if H < 1:
        raise DatasetError("episode too short for tuples")
    anchors = rng.integers(0, H, size=count)
    deltas = sample_delta_ts(gamma, H - anchors, rng)
    norm_states = normalizer.normalize(episode.states)
    out = []
    for t, dt in zip(anchors, deltas):
        window = None
        if window_size > 0:
            window = norm_states[max(0, t - window_size + 1): t + 1]
        out.append(
            OccupancyTuple(
                norm_states[t],
                norm_states[t + 1],
                norm_states[t + dt],
                int(dt),
                episode.policy_id,
                int(t),
                episode.episode_id,
                window,
            )
        )
    return out


@dataclass
class TrainBatch:
    """Array view of a tuple minibatch plus the anchor transition fields."""

    s_t: np.ndarray
    s_next: np.ndarray
    s_future: np.ndarray
    delta_t: np.ndarray
    phi: np.ndarray
    steps_remaining: np.ndarray
    policy_ids: np.ndarray
    actions: np.ndarray | None = None
    rewards: np.ndarray | None = None

    def __len__(self) -> int:
        return self.s_t.shape[0]


class TupleSampler:
    """Draws minibatches with anchors uniform over all (episode, step) pairs."""

    def __init__(
        self,
        episodes: list[EpisodeRecord],
        normalizer: Normalizer,
        gamma: float,
        phi_dim: int,
        embedding_mode: str = "scalar",
        max_window: int = 16,
    ):
        self.episodes = episodes
        self.normalizer = normalizer
        self.gamma = gamma
        self.phi_dim = phi_dim
        self.embedding_mode = embedding_mode
        self.norm_states = [normalizer.normalize(ep.states) for ep in episodes]
        lengths = np.array([ep.length for ep in episodes], dtype=np.int64)
        self.anchor_offsets = np.concatenate([[0], np.cumsum(lengths)])
        self.total_anchors = int(self.anchor_offsets[-1])
        self.sequential = SequentialEmbedder(episodes[0].states.shape[1], phi_dim, max_window)
        self._scalar_cache: dict[int, np.ndarray] = {}

    def _phi_scalar(self, policy_id: int) -> np.ndarray:
        if policy_id not in self._scalar_cache:
            self._scalar_cache[policy_id] = scalar_policy_embedding(policy_id, self.phi_dim).value
        return self._scalar_cache[policy_id]

    def phi_for(self, episode_idx: int, t: int) -> np.ndarray:
        ep = self.episodes[episode_idx]
        if self.embedding_mode == "scalar":
            return self._phi_scalar(ep.policy_id)
        window = self.norm_states[episode_idx][max(0, t - self.sequential.max_window + 1): t + 1]
        return self.sequential.embed(window).value

    def sample(self, count: int, rng: np.random.Generator) -> TrainBatch:
        flat = rng.integers(0, self.total_anchors, size=count)
        ep_idx = np.searchsorted(self.anchor_offsets, flat, side="right") - 1
        t = flat - self.anchor_offsets[ep_idx]
        lengths = np.array([self.episodes[i].length for i in ep_idx])
        deltas = sample_delta_ts(self.gamma, lengths - t, rng)

        d = self.episodes[0].states.shape[1]
        s_t = np.empty((count, d))
        s_next = np.empty((count, d))
        s_future = np.empty((count, d))
        phi = np.empty((count, self.phi_dim))
        pids = np.empty(count, dtype=np.int64)
        has_actions = all(ep.actions is not None for ep in self.episodes)
        has_rewards = all(ep.rewards is not None for ep in self.episodes)
        a_dim = self.episodes[0].actions.shape[1] if has_actions else 0
        actions = np.empty((count, a_dim)) if has_actions else None
        rewards = np.empty(count) if has_rewards else None
        for row, (i, ti, dt) in enumerate(zip(ep_idx, t, deltas)):
            ns = self.norm_states[i]
            s_t[row] = ns[ti]
            s_next[row] = ns[ti + 1]
            s_future[row] = ns[ti + dt]
            phi[row] = self.phi_for(int(i), int(ti))
            pids[row] = self.episodes[i].policy_id
            if has_actions:
                actions[row] = self.episodes[i].actions[ti]
            if has_rewards:
                rewards[row] = self.episodes[i].rewards[ti]
        return TrainBatch(
            s_t, s_next, s_future, deltas.astype(np.int64), phi,
            (lengths - t - 1).astype(np.int64), pids, actions, rewards,
        )
