"""Reward regression in symlog space.

The regressor is a dense-skip MLP over the concatenated (normalized state,
action) pair whose scalar output lives in symlog space; predictions apply
symexp on the way out. Targets are symlog-compressed rather than rescaled,
which keeps sparse large rewards and dense small penalties on a comparable
footing.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .nn import AdamState, MlpParams, NumericError


def symlog(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.sign(x) * np.log1p(np.abs(x))
    return float(out) if out.ndim == 0 else out


def symexp(y):
    y = np.asarray(y, dtype=np.float64)
    out = np.sign(y) * np.expm1(np.abs(y))
    return float(out) if out.ndim == 0 else out


def symexp_grad(y):
    return np.exp(np.abs(np.asarray(y, dtype=np.float64)))


class RewardModel:
    """r(s, a) regressor; set action_dim=0 for state-only scoring."""

    def __init__(self, state_dim: int, action_dim: int, params: MlpParams):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.params = params
        self.adam = AdamState.for_params(params)

    @classmethod
    def create(
        cls,
        state_dim: int,
        action_dim: int,
        rng: np.random.Generator,
        hidden: tuple[int, ...] = (256, 256),
    ) -> "RewardModel":
        params = nn.init_mlp(state_dim + action_dim, hidden, 1, rng)
        return cls(state_dim, action_dim, params)

    def _join(self, states: np.ndarray, actions: np.ndarray | None) -> np.ndarray:
        states = np.asarray(states, dtype=np.float64)
        if self.action_dim == 0:
            return states
        if actions is None:
            raise ValueError("this reward model requires actions")
        actions = np.asarray(actions, dtype=np.float64)
        return np.concatenate([states, actions], axis=-1)

    def predict(self, states: np.ndarray, actions: np.ndarray | None = None) -> np.ndarray:
        """Predicted reward (real scale) for one pair or a batch."""
        out, _ = nn.mlp_forward(self.params, self._join(states, actions))
        return symexp(out[..., 0])

    def reward_and_action_grad(
        self, states: np.ndarray, actions: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Batch rewards plus d reward / d action, for policy decoding."""
        joined = self._join(states, actions)
        out, cache = nn.mlp_forward(self.params, joined)
        y = out[:, 0]
        _, input_grad = nn.mlp_backward(self.params, cache, np.ones_like(out))
        d_action = input_grad[:, self.state_dim:] * symexp_grad(y)[:, None]
        return symexp(y), d_action

    def train_step(
        self,
        states: np.ndarray,
        actions: np.ndarray | None,
        rewards: np.ndarray,
        lr: float,
        max_grad_norm: float = 100.0,
    ) -> float:
        """One Adam step on mean squared error against symlog targets."""
        rewards = np.asarray(rewards, dtype=np.float64)
        if not np.all(np.isfinite(rewards)):
            raise NumericError("non-finite reward target")
        joined = self._join(states, actions)
        out, cache = nn.mlp_forward(self.params, joined)
        resid = out[:, 0] - symlog(rewards)
        loss = float(np.mean(resid * resid))
        if not np.isfinite(loss):
            raise NumericError("non-finite reward loss")
        grads, _ = nn.mlp_backward(
            self.params, cache, (2.0 * resid / resid.shape[0])[:, None]
        )
        nn.clip_global_norm(grads, max_grad_norm)
        nn.adam_step(self.params, grads, self.adam, lr)
        return loss
