"""Dataset format, normalization, offset sampling, policy embeddings."""

import numpy as np
import pytest
from scipy import stats

from diffval.data import (
    DatasetError,
    EpisodeRecord,
    Normalizer,
    SequentialEmbedder,
    make_tuples,
    read_dataset,
    sample_delta_t,
    sample_delta_ts,
    scalar_policy_embedding,
    write_dataset,
)
from diffval.envs import MazeEnv, WaypointPolicy, collect_episodes, u_maze


def test_normalizer_min_max():
    eps = [EpisodeRecord(0, 0, np.array([[0.0], [2.0]]))]
    norm = Normalizer.fit(eps)
    assert norm.lo == pytest.approx([0.0])
    assert norm.hi == pytest.approx([2.0])
    assert norm.normalize(np.array([0.0])) == pytest.approx([-1.0])
    assert norm.normalize(np.array([2.0])) == pytest.approx([1.0])
    assert norm.normalize(np.array([1.0])) == pytest.approx([0.0])


def test_normalizer_degenerate_dimension():
    eps = [EpisodeRecord(0, 0, np.array([[1.0, 5.0], [2.0, 5.0]]))]
    norm = Normalizer.fit(eps)
    assert norm.degenerate[1]
    out = norm.normalize(np.array([1.5, 5.0]))
    assert out[1] == 0.0


def test_normalizer_roundtrip_identity():
    rng = np.random.default_rng(0)
    states = rng.uniform(-3, 7, (50, 4))
    eps = [EpisodeRecord(0, 0, states)]
    norm = Normalizer.fit(eps)
    back = norm.denormalize(norm.normalize(states))
    assert np.max(np.abs(back - states)) < 1e-9


def test_normalizer_clamps_and_counts():
    eps = [EpisodeRecord(0, 0, np.array([[0.0], [1.0]]))]
    norm = Normalizer.fit(eps)
    out = norm.normalize(np.array([2.0]))
    assert out == pytest.approx([1.0])
    assert norm.clip_count == 1


def test_normalizer_rejects_empty():
    with pytest.raises(DatasetError):
        Normalizer.fit([])


def test_delta_t_renormalized_geometric():
    rng = np.random.default_rng(1)
    draws = sample_delta_ts(0.5, np.full(200_000, 2), rng)
    freq1 = np.mean(draws == 1)
    assert freq1 == pytest.approx(2.0 / 3.0, abs=0.005)
    assert set(np.unique(draws)) == {1, 2}


def test_delta_t_gamma_zero_always_one():
    rng = np.random.default_rng(2)
    assert all(sample_delta_t(0.0, r, rng) == 1 for r in [1, 5, 1000])


def test_delta_t_chi_square_against_analytic_pmf():
    gamma, remaining, n = 0.99, 1000, 100_000
    rng = np.random.default_rng(3)
    draws = sample_delta_ts(gamma, np.full(n, remaining), rng)
    pmf = gamma ** (np.arange(1, remaining + 1) - 1.0)
    pmf /= pmf.sum()
    # Bin the support so every expected count is comfortably large.
    edges = np.unique(np.concatenate([np.arange(1, 200, 10), [300, 450, 650, 1001]]))
    observed, expected = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        observed.append(np.sum((draws >= lo) & (draws < hi)))
        expected.append(pmf[lo - 1: hi - 1].sum() * n)
    chi2, p = stats.chisquare(observed, expected)
    assert p > 0.01


def test_delta_t_untruncated_mean():
    gamma = 0.9
    rng = np.random.default_rng(4)
    draws = sample_delta_ts(gamma, np.full(100_000, 1000), rng)
    assert draws.mean() == pytest.approx(1.0 / (1.0 - gamma), rel=0.02)


def test_make_tuples_length_two_episode():
    ep = EpisodeRecord(0, 3, np.array([[0.0], [1.0]]))
    norm = Normalizer.fit([ep])
    tuples = make_tuples(ep, norm, 0.9, 5, np.random.default_rng(0))
    for t in tuples:
        assert t.anchor == 0 and t.delta_t == 1
        assert t.s_t == pytest.approx([-1.0])
        assert t.s_next == pytest.approx([1.0])
        assert t.s_future == pytest.approx([1.0])
        assert t.policy_id == 3


def test_make_tuples_indices_in_range():
    rng = np.random.default_rng(5)
    for _ in range(10_000):
        H = int(rng.integers(1, 12))
        ep = EpisodeRecord(0, 0, rng.uniform(-1, 1, (H + 1, 1)))
        norm = Normalizer(np.array([-1.0]), np.array([1.0]))
        for t in make_tuples(ep, norm, 0.8, 2, rng):
            assert 0 <= t.anchor < H
            assert 1 <= t.delta_t <= H - t.anchor


def test_make_tuples_matches_anchor_mixture():
    # Length-5 episode: the Delta-t marginal is the uniform-anchor mixture of
    # truncated geometrics; enumerate it analytically.
    gamma, H = 0.5, 5
    analytic = np.zeros(H + 1)
    for t in range(H):
        R = H - t
        w = gamma ** (np.arange(1, R + 1) - 1.0)
        w /= w.sum()
        analytic[1: R + 1] += w / H
    ep = EpisodeRecord(0, 0, np.arange(H + 1, dtype=float)[:, None])
    norm = Normalizer.fit([ep])
    rng = np.random.default_rng(6)
    tuples = make_tuples(ep, norm, gamma, 200_000, rng)
    counts = np.bincount([t.delta_t for t in tuples], minlength=H + 1)
    freqs = counts / counts.sum()
    assert np.max(np.abs(freqs[1:] - analytic[1:])) < 0.01


def test_tuples_never_need_actions_or_rewards():
    ep = EpisodeRecord(0, 0, np.random.default_rng(7).uniform(-1, 1, (20, 2)))
    assert ep.actions is None and ep.rewards is None
    norm = Normalizer.fit([ep])
    tuples = make_tuples(ep, norm, 0.9, 50, np.random.default_rng(8))
    assert len(tuples) == 50


def test_scalar_embedding_zero_index():
    emb = scalar_policy_embedding(0, 8)
    assert emb.value == pytest.approx([0, 1, 0, 1, 0, 1, 0, 1])
    assert emb.mode == "scalar"


def test_scalar_embeddings_pairwise_distinct():
    embs = np.stack([scalar_policy_embedding(i, 16).value for i in range(10)])
    d = np.linalg.norm(embs[:, None] - embs[None, :], axis=2)
    d[np.diag_indices(10)] = np.inf
    assert d.min() > 1e-3


def test_scalar_embedding_deterministic():
    a = scalar_policy_embedding(4, 16).value
    b = scalar_policy_embedding(4, 16).value
    assert np.array_equal(a, b)


def test_sequential_embedding_identical_states_collapse():
    emb = SequentialEmbedder(3, 8)
    s = np.array([0.2, -0.4, 0.9])
    single = emb.embed(s[None, :]).value
    window = emb.embed(np.tile(s, (5, 1))).value
    assert window == pytest.approx(single, abs=1e-12)


def test_sequential_embedding_order_invariant():
    emb = SequentialEmbedder(2, 8)
    rng = np.random.default_rng(9)
    window = rng.uniform(-1, 1, (6, 2))
    a = emb.embed(window).value
    b = emb.embed(window[::-1]).value
    assert a == pytest.approx(b, abs=1e-12)


def test_sequential_embedding_rejects_empty_and_oversize():
    emb = SequentialEmbedder(2, 8, max_window=4)
    with pytest.raises(DatasetError):
        emb.embed(np.zeros((0, 2)))
    with pytest.raises(DatasetError):
        emb.embed(np.zeros((5, 2)))


def test_sequential_embedding_separates_maze_corridors():
    # Windows from different corridors should embed further apart than
    # windows from the same corridor.
    spec = u_maze()
    env = MazeEnv(spec)
    rng = np.random.default_rng(10)
    episodes = collect_episodes(env, [WaypointPolicy(spec, 0), WaypointPolicy(spec, 2)], 2, rng)
    norm = Normalizer.fit(episodes)
    emb = SequentialEmbedder(4, 8)

    def window(ep, lo):
        return emb.embed(norm.normalize(ep.states[lo: lo + 8])).value

    same = np.linalg.norm(window(episodes[0], 100) - window(episodes[1], 100))
    cross = np.linalg.norm(window(episodes[0], 100) - window(episodes[2], 100))
    assert cross > same


def test_dataset_roundtrip(tmp_path):
    rng = np.random.default_rng(11)
    episodes = [
        EpisodeRecord(0, 1, rng.uniform(-1, 1, (6, 2)), rng.uniform(-1, 1, (5, 1)), rng.uniform(-1, 1, 5)),
        EpisodeRecord(1, 2, rng.uniform(-1, 1, (4, 2)), rng.uniform(-1, 1, (3, 1)), rng.uniform(-1, 1, 3)),
    ]
    path = tmp_path / "d.csv"
    write_dataset(path, episodes)
    back = read_dataset(path)
    assert len(back) == 2
    for a, b in zip(episodes, back):
        assert a.episode_id == b.episode_id and a.policy_id == b.policy_id
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.actions, b.actions)
        assert np.array_equal(a.rewards, b.rewards)


def test_dataset_action_free_export(tmp_path):
    episodes = [EpisodeRecord(0, 0, np.random.default_rng(0).uniform(-1, 1, (5, 2)))]
    path = tmp_path / "sf.csv"
    write_dataset(path, episodes)
    header = path.read_text().splitlines()[0]
    assert "a0" not in header and "reward" not in header
    back = read_dataset(path)
    assert back[0].actions is None and back[0].rewards is None


def test_dataset_header_declares_dimensions(tmp_path):
    episodes = [
        EpisodeRecord(
            0, 0, np.zeros((3, 3)), np.zeros((2, 2)), np.zeros(2)
        )
    ]
    path = tmp_path / "dims.csv"
    write_dataset(path, episodes)
    header = path.read_text().splitlines()[0].split(",")
    assert header == ["episode_id", "policy_id", "t", "s0", "s1", "s2", "a0", "a1", "reward", "done"]


def test_dataset_missing_file_error():
    with pytest.raises(DatasetError, match="cannot read"):
        read_dataset("/nonexistent/foo.csv")
