"""Squashed-Gaussian policy decoded against the diffusion value estimate.

The policy net maps a normalized state to per-dimension mean and log-std;
actions are tanh-squashed and scaled to the action bound. Decoding minimizes
E[alpha * log pi(a|s) - Q(s, a)] with Q = r(s, a) + gamma * V(s'), where the
action gradient flows through the reward model only (V(s') is treated as
action-independent), plus a behavior-cloning anchor on the policy mean.

Also hosts the standalone behavior-cloning baseline.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .nn import AdamState, MlpParams, NumericError
from .reward import RewardModel

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
_TANH_EPS = 1e-6


class GaussianPolicy:
    def __init__(self, state_dim: int, action_dim: int, bound, params: MlpParams):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.bound = np.broadcast_to(np.asarray(bound, dtype=np.float64), (action_dim,)).copy()
        self.params = params
        self.adam = AdamState.for_params(params)

    @classmethod
    def create(
        cls,
        state_dim: int,
        action_dim: int,
        bound,
        rng: np.random.Generator,
        hidden: tuple[int, ...] = (256, 256),
    ) -> "GaussianPolicy":
        params = nn.init_mlp(state_dim, hidden, 2 * action_dim, rng)
        return cls(state_dim, action_dim, bound, params)

    def _heads(self, states: np.ndarray):
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        out, cache = nn.mlp_forward(self.params, states)
        mu = out[:, : self.action_dim]
        log_std_raw = out[:, self.action_dim:]
        log_std = np.clip(log_std_raw, LOG_STD_MIN, LOG_STD_MAX)
        return mu, log_std_raw, log_std, cache

    def sample(self, states: np.ndarray, rng: np.random.Generator):
        """Reparameterized actions with tanh-corrected log densities."""
        single = np.ndim(states) == 1
        mu, _, log_std, _ = self._heads(states)
        sigma = np.exp(log_std)
        z = rng.standard_normal(mu.shape)
        u = mu + sigma * z
        tanh_u = np.tanh(u)
        actions = self.bound * tanh_u
        jac = self.bound * (1.0 - tanh_u**2) + _TANH_EPS
        log_prob = np.sum(-0.5 * z * z - log_std - _LOG_SQRT_2PI - np.log(jac), axis=1)
        if single:
            return actions[0], float(log_prob[0])
        return actions, log_prob

    def mean_action(self, states: np.ndarray) -> np.ndarray:
        single = np.ndim(states) == 1
        mu, _, _, _ = self._heads(states)
        actions = self.bound * np.tanh(mu)
        return actions[0] if single else actions

    def act(self, raw_state: np.ndarray, normalizer, rng=None) -> np.ndarray:
        """Evaluation endpoint: normalizes the raw environment state first."""
        norm = normalizer.normalize(raw_state)
        if rng is None:
            return self.mean_action(norm)
        action, _ = self.sample(norm, rng)
        return action


def policy_loss_and_grads(
    policy: GaussianPolicy,
    states: np.ndarray,
    reward_model: RewardModel,
    v_next: np.ndarray,
    gamma: float,
    alpha_ent: float,
    bc_coef: float,
    rng: np.random.Generator,
    dataset_actions: np.ndarray | None = None,
):
    """Exact gradients of the decoding objective.

    The Q term is r(s, a) + gamma * v_next with v_next held constant, so its
    action gradient equals the reward gradient; entropy and squashing terms
    are differentiated analytically through the reparameterized sample.
    """
    states = np.atleast_2d(states)
    B = states.shape[0]
    A = policy.action_dim
    bound = policy.bound
    mu, log_std_raw, log_std, cache = policy._heads(states)
    sigma = np.exp(log_std)
    z = rng.standard_normal(mu.shape)
    u = mu + sigma * z
    tanh_u = np.tanh(u)
    actions = bound * tanh_u
    sech2 = 1.0 - tanh_u**2
    jac = bound * sech2 + _TANH_EPS
    log_prob = np.sum(-0.5 * z * z - log_std - _LOG_SQRT_2PI - np.log(jac), axis=1)

    r, dr_da = reward_model.reward_and_action_grad(states, actions)
    q = r + gamma * np.asarray(v_next, dtype=np.float64)
    loss_main = float(np.mean(alpha_ent * log_prob - q))

    # d log pi / du through the squashing correction; the Gaussian part is
    # constant in u once z is fixed.
    dlp_du = 2.0 * bound * tanh_u * sech2 / jac
    da_du = bound * sech2
    dq_du = dr_da * da_du
    g_u = (alpha_ent * dlp_du - dq_du) / B
    g_mu = g_u.copy()
    g_log_std = g_u * sigma * z - alpha_ent / B  # -1 from d log pi / d log_std

    loss_bc = 0.0
    if bc_coef != 0.0:
        if dataset_actions is None:
            raise ValueError("behavior cloning requires dataset actions")
        mean_act = bound * np.tanh(mu)
        diff = mean_act - dataset_actions
        loss_bc = float(np.mean(np.sum(diff * diff, axis=1)))
        g_mu += bc_coef * (2.0 / B) * diff * bound * (1.0 - np.tanh(mu) ** 2)

    clip_mask = (log_std_raw > LOG_STD_MIN) & (log_std_raw < LOG_STD_MAX)
    grad_out = np.concatenate([g_mu, g_log_std * clip_mask], axis=1)
    grads, _ = nn.mlp_backward(policy.params, cache, grad_out)
    loss = loss_main + bc_coef * loss_bc
    if not np.isfinite(loss):
        bad = int(np.argmax(~np.isfinite(alpha_ent * log_prob - q)))
        raise NumericError(f"non-finite policy loss at batch index {bad}")
    return loss, grads, {"loss_main": loss_main, "loss_bc": loss_bc, "actions": actions}


def policy_train_step(
    policy: GaussianPolicy,
    states: np.ndarray,
    reward_model: RewardModel,
    v_next: np.ndarray,
    gamma: float,
    alpha_ent: float,
    bc_coef: float,
    lr: float,
    rng: np.random.Generator,
    dataset_actions: np.ndarray | None = None,
    max_grad_norm: float = 100.0,
) -> float:
    loss, grads, _ = policy_loss_and_grads(
        policy, states, reward_model, v_next, gamma, alpha_ent, bc_coef, rng, dataset_actions
    )
    nn.clip_global_norm(grads, max_grad_norm)
    nn.adam_step(policy.params, grads, policy.adam, lr)
    return loss


class BcPolicy:
    """Deterministic behavior-cloning baseline: plain regression of dataset
    actions on states, clamped to bounds at rollout time."""

    def __init__(self, state_dim: int, action_dim: int, bound, params: MlpParams):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.bound = np.broadcast_to(np.asarray(bound, dtype=np.float64), (action_dim,)).copy()
        self.params = params
        self.adam = AdamState.for_params(params)

    @classmethod
    def create(
        cls,
        state_dim: int,
        action_dim: int,
        bound,
        rng: np.random.Generator,
        hidden: tuple[int, ...] = (256, 256),
    ) -> "BcPolicy":
        params = nn.init_mlp(state_dim, hidden, action_dim, rng)
        return cls(state_dim, action_dim, bound, params)

    def predict(self, states: np.ndarray) -> np.ndarray:
        single = np.ndim(states) == 1
        out, _ = nn.mlp_forward(self.params, np.atleast_2d(states))
        out = np.clip(out, -self.bound, self.bound)
        return out[0] if single else out

    def train_step(self, states, actions, lr: float, max_grad_norm: float = 100.0) -> float:
        states = np.atleast_2d(states)
        actions = np.atleast_2d(actions)
        out, cache = nn.mlp_forward(self.params, states)
        diff = out - actions
        loss = float(np.mean(np.sum(diff * diff, axis=1)))
        grads, _ = nn.mlp_backward(self.params, cache, 2.0 * diff / states.shape[0])
        nn.clip_global_norm(grads, max_grad_norm)
        nn.adam_step(self.params, grads, self.adam, lr)
        return loss

    def act(self, raw_state: np.ndarray, normalizer) -> np.ndarray:
        return self.predict(normalizer.normalize(raw_state))
