"""Monte-Carlo value estimation from occupancy samples.

A state's value is the horizon factor (1 - gamma^k) / (1 - gamma) times the
mean predicted reward over n future states drawn from the diffusion model,
each with its own truncated-geometric time offset. The one-step action value
is r(s, a) + gamma * V(s'), whose action gradient is the reward gradient
alone because V(s') does not depend on the action.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import sample_delta_ts
from .diffusion import Denoiser, NoiseSchedule, sample_future_states
from .reward import RewardModel

_UNTRUNCATED = 10**9


def horizon_factor(gamma: float, steps_remaining: int | None) -> float:
    """Mass of the discounted offset weights; None means infinite horizon."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must be in [0, 1)")
    if steps_remaining is None:
        return 1.0 / (1.0 - gamma)
    if steps_remaining < 0:
        raise ValueError("steps_remaining must be non-negative")
    if gamma == 0.0:
        return 0.0 if steps_remaining == 0 else 1.0
    return (1.0 - gamma**steps_remaining) / (1.0 - gamma)


@dataclass
class ValueEstimate:
    mean_value: float
    per_sample_rewards: np.ndarray
    n: int
    factor: float


def estimate_v(
    state: np.ndarray,
    policy: Callable[[np.ndarray], np.ndarray] | None,
    reward_model: RewardModel,
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    phi: np.ndarray,
    n: int,
    gamma: float,
    steps_remaining: int | None,
    rng: np.random.Generator,
) -> ValueEstimate:
    """Estimate V(state) with n occupancy samples.

    Each sample draws its own offset from the truncated geometric over the
    remaining horizon, generates a future state conditioned on (state,
    offset, phi), asks the policy for an action there, and scores the pair
    with the reward model.
    """
    if n < 1:
        raise ValueError("need at least one Monte-Carlo sample")
    factor = horizon_factor(gamma, steps_remaining)
    if steps_remaining is not None and steps_remaining == 0:
        return ValueEstimate(0.0, np.zeros(0), n, 0.0)
    remaining = _UNTRUNCATED if steps_remaining is None else steps_remaining
    deltas = sample_delta_ts(gamma, np.full(n, remaining), rng)
    samples = sample_future_states(denoiser, schedule, state, deltas, phi, n, rng)
    actions = policy(samples) if policy is not None else None
    rewards = np.atleast_1d(reward_model.predict(samples, actions))
    return ValueEstimate(factor * float(np.mean(rewards)), rewards, n, factor)


def estimate_v_batch(
    states: np.ndarray,
    policy: Callable[[np.ndarray], np.ndarray] | None,
    reward_model: RewardModel,
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    phis: np.ndarray,
    n: int,
    gamma: float,
    steps_remaining: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Vectorized estimate_v over k states: one reverse pass drives all k*n
    chains, so the evaluation counter still advances by exactly k*n*T."""
    states = np.atleast_2d(states)
    k = states.shape[0]
    steps_remaining = np.asarray(steps_remaining, dtype=np.int64)
    factors = np.array([horizon_factor(gamma, int(s)) for s in steps_remaining])
    live = steps_remaining > 0
    values = np.zeros(k)
    if not np.any(live):
        return values
    idx = np.where(live)[0]
    rep_states = np.repeat(states[idx], n, axis=0)
    rep_phis = np.repeat(np.atleast_2d(phis)[idx], n, axis=0)
    rep_remaining = np.repeat(steps_remaining[idx], n)
    deltas = sample_delta_ts(gamma, rep_remaining, rng)
    samples = sample_future_states(
        denoiser, schedule, rep_states, deltas, rep_phis, rep_states.shape[0], rng
    )
    actions = policy(samples) if policy is not None else None
    rewards = reward_model.predict(samples, actions).reshape(len(idx), n)
    values[idx] = factors[idx] * rewards.mean(axis=1)
    return values


def estimate_q(
    state: np.ndarray,
    action: np.ndarray,
    reward_or_model,
    v_next: float,
    gamma: float,
) -> float:
    """One-step unrolled action value r(s, a) + gamma * v_next."""
    if isinstance(reward_or_model, RewardModel):
        r = float(reward_or_model.predict(state, action))
    elif callable(reward_or_model):
        r = float(reward_or_model(state, action))
    else:
        r = float(reward_or_model)
    return r + gamma * v_next
