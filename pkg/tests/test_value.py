"""Monte-Carlo value estimation against analytic and DP oracles."""

import numpy as np
import pytest

from diffval import nn
from diffval.data import Normalizer, TupleSampler
from diffval.diffusion import Denoiser, build_schedule, diffusion_loss
from diffval.envs import make_chain_episodes
from diffval.value import estimate_q, estimate_v, estimate_v_batch, horizon_factor


class StubDenoiser:
    """Reverse chains end wherever the noise takes them; enough for tests
    that do not care about sample quality."""

    def __init__(self, state_dim):
        self.state_dim = state_dim
        self.eval_count = 0

    def predict(self, x, s_t, t_d, delta_t, phi, s_next=None):
        self.eval_count += x.shape[0]
        return np.zeros_like(x)


class StubReward:
    def __init__(self, fn):
        self.fn = fn
        self.action_dim = 0

    def predict(self, states, actions=None):
        return np.apply_along_axis(self.fn, -1, np.atleast_2d(states))


def test_horizon_factor_geometric_sum():
    assert horizon_factor(0.5, 3) == pytest.approx(1.75, abs=1e-15)


def test_horizon_factor_zero_steps():
    assert horizon_factor(0.9, 0) == 0.0


def test_horizon_factor_long_horizon():
    oracle = sum(0.99**k for k in range(1000))
    assert horizon_factor(0.99, 1000) == pytest.approx(oracle, rel=1e-12)
    assert horizon_factor(0.99, 1000) == pytest.approx(99.9957, abs=1e-3)


def test_horizon_factor_infinite_mode():
    assert horizon_factor(0.99, None) == pytest.approx(100.0)


def test_horizon_factor_rejects_bad_inputs():
    with pytest.raises(ValueError):
        horizon_factor(1.0, 5)
    with pytest.raises(ValueError):
        horizon_factor(0.5, -1)


def test_constant_reward_exactness():
    c = 2.375
    schedule = build_schedule(4, 1e-3, 0.05)
    est = estimate_v(
        np.zeros(2), None, StubReward(lambda s: c), StubDenoiser(2), schedule,
        np.zeros(4), 8, 0.5, 3, np.random.default_rng(0),
    )
    assert est.factor == horizon_factor(0.5, 3)
    assert est.mean_value == est.factor * c  # bit-exact: mean of identical values


def test_gamma_zero_single_step_sample():
    schedule = build_schedule(4, 1e-3, 0.05)
    seen = {}

    class RecordingDenoiser(StubDenoiser):
        def predict(self, x, s_t, t_d, delta_t, phi, s_next=None):
            seen["delta"] = np.array(delta_t)
            return super().predict(x, s_t, t_d, delta_t, phi, s_next)

    reward = StubReward(lambda s: float(s[0]))
    est = estimate_v(
        np.zeros(2), None, reward, RecordingDenoiser(2), schedule,
        np.zeros(4), 1, 0.0, 10, np.random.default_rng(1),
    )
    assert np.all(seen["delta"] == 1)
    assert est.mean_value == pytest.approx(float(est.per_sample_rewards[0]))


def test_estimate_q_values():
    assert estimate_q(None, None, 1.0, 10.0, 0.99) == pytest.approx(10.9)
    assert estimate_q(None, None, 1.7, 10.0, 0.0) == pytest.approx(1.7)


def test_q_action_gradient_equals_reward_gradient():
    # v_next is action-independent, so finite differences through Q and
    # through r must agree to machine precision.
    def r(s, a):
        return float(np.sin(a[0]) + 0.5 * a[0] ** 2)

    s = np.zeros(1)
    # eps large enough that rounding of the (r + gamma*v) sums stays below
    # the 1e-10 bar; truncation cancels exactly (same r evaluations on both
    # sides).
    v_next, gamma, eps = 7.3, 0.97, 1e-4
    for a0 in [-0.8, 0.0, 1.1]:
        ap, am = np.array([a0 + eps]), np.array([a0 - eps])
        dq = (estimate_q(s, ap, r(s, ap), v_next, gamma) - estimate_q(s, am, r(s, am), v_next, gamma)) / (2 * eps)
        dr = (r(s, ap) - r(s, am)) / (2 * eps)
        assert abs(dq - dr) < 1e-10


def test_variance_shrinks_like_one_over_n():
    schedule = build_schedule(4, 1e-3, 0.05)
    reward = StubReward(lambda s: float(s[0]))

    def run(n, seed):
        est = estimate_v(
            np.zeros(2), None, reward, StubDenoiser(2), schedule,
            np.zeros(4), n, 0.9, 100, np.random.default_rng(seed),
        )
        return est.mean_value

    v4 = np.var([run(4, s) for s in range(100)])
    v64 = np.var([run(64, s + 1000) for s in range(100)])
    assert 8.0 <= v4 / v64 <= 32.0


def test_estimate_v_batch_matches_shapes_and_counter():
    schedule = build_schedule(4, 1e-3, 0.05)
    model = StubDenoiser(2)
    vals = estimate_v_batch(
        np.zeros((5, 2)), None, StubReward(lambda s: 1.0), model, schedule,
        np.zeros((5, 4)), 8, 0.9, np.array([10, 10, 0, 10, 10]),
        np.random.default_rng(2),
    )
    assert vals.shape == (5,)
    assert vals[2] == 0.0  # terminal state: zero remaining horizon
    assert model.eval_count == 4 * 8 * schedule.T


def _train_chain_model(points, gamma, seed=0, steps=700):
    episodes = make_chain_episodes(np.array(points), 8, 60, np.random.default_rng(seed))
    norm = Normalizer.fit(episodes)
    sampler = TupleSampler(episodes, norm, gamma, 4)
    schedule = build_schedule(16, 1e-3, 0.08)
    model = Denoiser.create(1, np.random.default_rng(seed + 1), embed_dim=8, phi_dim=4, hidden=(64,))
    adam = nn.AdamState.for_params(model.params)
    rng = np.random.default_rng(seed + 2)
    for _ in range(steps):
        batch = sampler.sample(128, rng)
        _, grads = diffusion_loss(
            model, batch.s_t, batch.s_future, batch.delta_t, batch.phi, schedule, rng
        )
        nn.clip_global_norm(grads, 100.0)
        nn.adam_step(model.params, grads, adam, 1e-3)
    return model, schedule, norm, sampler


def test_two_state_chain_unbiased_at_any_n():
    # Deterministic 2-cycle with known rewards; DP gives the exact value.
    points = [-0.8, 0.8]
    rewards = {0: 1.0, 1: 2.0}
    gamma, H = 0.9, 60
    model, schedule, norm, sampler = _train_chain_model(points, gamma)

    def reward_fn(s):
        raw = norm.denormalize(s)[0]
        return rewards[int(np.argmin([abs(raw - p) for p in points]))]

    reward = StubReward(reward_fn)
    # DP oracle: starting in state 0, the next-step chain visits 1,0,1,...
    dp = sum(gamma ** (k - 1) * rewards[k % 2] for k in range(1, H + 1))
    phi = sampler.phi_for(0, 0)
    s0 = norm.normalize(np.array([points[0]]))

    means = []
    for n, runs in [(1, 300), (32, 20)]:
        vals = [
            estimate_v(
                s0, None, reward, model, schedule, phi, n, gamma, H,
                np.random.default_rng(10_000 + n * 97 + i),
            ).mean_value
            for i in range(runs)
        ]
        means.append(np.mean(vals))
    for m in means:
        assert abs(m - dp) / dp < 0.05
