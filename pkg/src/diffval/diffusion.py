"""Denoising-diffusion machinery over normalized state vectors.

The forward process corrupts a future state with Gaussian noise under a
linear beta schedule; the denoiser is a dense-skip MLP that predicts the
injected noise from the corrupted state plus conditioning (current state,
time offset, policy embedding, diffusion timestep). Reverse sampling runs
the standard ancestral chain with fixed variance beta(t), so generating a
future state costs exactly T denoiser evaluations regardless of the time
offset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import MlpGrads, MlpParams, NumericError


class ConfigError(ValueError):
    pass


@dataclass
class NoiseSchedule:
    """Per-step variance tables; index 0 holds diffusion timestep 1."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return self.beta.shape[0]


def build_schedule(T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    if T < 1:
        raise ConfigError("schedule needs at least one step")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(f"invalid beta range [{beta_start}, {beta_end}]")
    beta = np.linspace(beta_start, beta_end, T)
    alpha = 1.0 - beta
    return NoiseSchedule(beta, alpha, np.cumprod(alpha))


def _check_td(t_d, T: int) -> None:
    t = np.asarray(t_d)
    if np.any(t < 1) or np.any(t > T):
        raise ValueError(f"diffusion timestep {t_d} outside 1..{T}")


def corrupt(x0: np.ndarray, t_d, epsilon: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form forward marginal: sqrt(abar)*x0 + sqrt(1-abar)*eps."""
    _check_td(t_d, schedule.T)
    abar = schedule.alpha_bar[np.asarray(t_d) - 1]
    if np.ndim(x0) == 2 and np.ndim(abar) == 1:
        abar = abar[:, None]
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * epsilon


def sinusoidal_embedding(t, dim: int) -> np.ndarray:
    """Interleaved sin/cos over a geometric frequency ladder; t may be an array."""
    if dim % 2 != 0:
        raise ConfigError("embedding dimension must be even")
    half = dim // 2
    freqs = np.power(10000.0, -np.arange(half) * 2.0 / dim)
    t = np.asarray(t, dtype=np.float64)
    angles = t[..., None] * freqs
    emb = np.empty(t.shape + (dim,))
    emb[..., 0::2] = np.sin(angles)
    emb[..., 1::2] = np.cos(angles)
    return emb


def encode_conditioning(
    x: np.ndarray,
    s_t: np.ndarray,
    t_d,
    delta_t,
    phi: np.ndarray,
    embed_dim: int,
    s_next: np.ndarray | None = None,
) -> np.ndarray:
    """Concatenate the denoiser input: noisy state, conditioning state,
    sinusoidal codes for the diffusion timestep and time offset, and the
    policy embedding. Works on single vectors or batches."""
    parts = [x, s_t]
    if s_next is not None:
        parts.append(s_next)
    parts.append(sinusoidal_embedding(t_d, embed_dim))
    parts.append(sinusoidal_embedding(delta_t, embed_dim))
    parts.append(phi)
    batched = any(np.ndim(p) == 2 for p in parts)
    if batched:
        rows = max(p.shape[0] for p in parts if np.ndim(p) == 2)
        parts = [np.broadcast_to(p, (rows, p.shape[-1])) if np.ndim(p) == 1 else p for p in parts]
        return np.concatenate(parts, axis=1)
    return np.concatenate(parts)


class Denoiser:
    """Noise-prediction network with conditioning by concatenation.

    Counts every row it evaluates in ``eval_count`` so sampling cost can be
    asserted exactly.
    """

    def __init__(
        self,
        state_dim: int,
        embed_dim: int,
        phi_dim: int,
        params: MlpParams,
        condition_on_next: bool = False,
    ):
        self.state_dim = state_dim
        self.embed_dim = embed_dim
        self.phi_dim = phi_dim
        self.params = params
        self.condition_on_next = condition_on_next
        self.eval_count = 0

    @classmethod
    def create(
        cls,
        state_dim: int,
        rng: np.random.Generator,
        embed_dim: int = 16,
        phi_dim: int = 16,
        hidden: tuple[int, ...] = (256, 256),
        condition_on_next: bool = False,
    ) -> "Denoiser":
        d_in = cls.input_dim(state_dim, embed_dim, phi_dim, condition_on_next)
        params = nn.init_mlp(d_in, hidden, state_dim, rng)
        return cls(state_dim, embed_dim, phi_dim, params, condition_on_next)

    @staticmethod
    def input_dim(state_dim: int, embed_dim: int, phi_dim: int, condition_on_next: bool) -> int:
        n_states = 3 if condition_on_next else 2
        return n_states * state_dim + 2 * embed_dim + phi_dim

    def _encode(self, x, s_t, t_d, delta_t, phi, s_next):
        if self.condition_on_next:
            if s_next is None:
                raise ValueError("denoiser was built to condition on the successor state")
        else:
            s_next = None
        return encode_conditioning(x, s_t, t_d, delta_t, phi, self.embed_dim, s_next)

    def predict(self, x, s_t, t_d, delta_t, phi, s_next=None) -> np.ndarray:
        enc = self._encode(x, s_t, t_d, delta_t, phi, s_next)
        self.eval_count += enc.shape[0] if enc.ndim == 2 else 1
        out, _ = nn.mlp_forward(self.params, enc)
        return out

    def predict_with_cache(self, x, s_t, t_d, delta_t, phi, s_next=None):
        enc = self._encode(x, s_t, t_d, delta_t, phi, s_next)
        self.eval_count += enc.shape[0] if enc.ndim == 2 else 1
        out, cache = nn.mlp_forward(self.params, enc)
        return out, cache


def diffusion_loss(
    model: Denoiser,
    s_t: np.ndarray,
    s_future: np.ndarray,
    delta_t: np.ndarray,
    phi: np.ndarray,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    s_next: np.ndarray | None = None,
) -> tuple[float, MlpGrads]:
    """Simplified denoising loss over a tuple batch.

    Draws one uniform diffusion timestep and one noise vector per tuple,
    corrupts the future state, and returns the batch-mean squared error
    between the injected and predicted noise together with exact parameter
    gradients.
    """
    B = s_future.shape[0]
    if B == 0:
        raise ValueError("empty batch")
    t_d = rng.integers(1, schedule.T + 1, size=B)
    eps = rng.standard_normal(s_future.shape)
    x_noisy = corrupt(s_future, t_d, eps, schedule)
    pred, cache = model.predict_with_cache(x_noisy, s_t, t_d, delta_t, phi, s_next)
    resid = pred - eps
    loss = float(np.mean(np.sum(resid * resid, axis=1)))
    if not np.isfinite(loss):
        bad = ~np.isfinite(np.sum(resid, axis=1))
        raise NumericError(
            "non-finite diffusion loss; offending t_d="
            f"{t_d[bad][:5].tolist()}, alpha_bar="
            f"{schedule.alpha_bar[t_d[bad][:5] - 1].tolist()}"
        )
    grads, _ = nn.mlp_backward(model.params, cache, 2.0 * resid / B)
    return loss, grads


def reverse_step(
    x: np.ndarray,
    t_d: int,
    predicted_eps: np.ndarray,
    schedule: NoiseSchedule,
    z: np.ndarray,
) -> np.ndarray:
    """One ancestral sampling step; sigma(t)^2 = beta(t), z must be zero at t_d=1."""
    _check_td(t_d, schedule.T)
    alpha = schedule.alpha[t_d - 1]
    abar = schedule.alpha_bar[t_d - 1]
    beta = schedule.beta[t_d - 1]
    mean = (x - ((1.0 - alpha) / np.sqrt(1.0 - abar)) * predicted_eps) / np.sqrt(alpha)
    return mean + np.sqrt(beta) * z


def sample_future_states(
    model,
    schedule: NoiseSchedule,
    s_t: np.ndarray,
    delta_t,
    phi: np.ndarray,
    n: int,
    rng: np.random.Generator,
    s_next: np.ndarray | None = None,
) -> np.ndarray:
    """Draw n future states by running the reverse chain from pure noise.

    Conditioning arguments may be single vectors (shared by all chains) or
    per-chain arrays of leading dimension n. Costs exactly n*T denoiser
    evaluations; outputs are clamped to the normalized state box [-1, 1].
    """
    if n < 1:
        raise ValueError("need at least one sample")
    d = model.state_dim
    s_t = np.broadcast_to(np.asarray(s_t, dtype=np.float64), (n, d)) if np.ndim(s_t) == 1 else s_t
    phi = np.broadcast_to(np.asarray(phi, dtype=np.float64), (n, phi.shape[-1])) if np.ndim(phi) == 1 else phi
    delta = np.broadcast_to(np.asarray(delta_t, dtype=np.float64), (n,)) if np.ndim(delta_t) == 0 else np.asarray(delta_t, dtype=np.float64)
    if s_next is not None and np.ndim(s_next) == 1:
        s_next = np.broadcast_to(np.asarray(s_next, dtype=np.float64), (n, d))

    x = rng.standard_normal((n, d))
    for t_d in range(schedule.T, 0, -1):
        t_arr = np.full(n, t_d)
        eps_pred = model.predict(x, s_t, t_arr, delta, phi, s_next)
        if not np.all(np.isfinite(eps_pred)):
            raise NumericError(f"non-finite denoiser prediction at t_d={t_d}")
        z = rng.standard_normal((n, d)) if t_d > 1 else np.zeros((n, d))
        x = reverse_step(x, t_d, eps_pred, schedule, z)
    return np.clip(x, -1.0, 1.0)
