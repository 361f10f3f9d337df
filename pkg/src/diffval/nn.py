"""Minimal dense-network substrate with exact backpropagation.

Networks are MLPs with concatenative skip connections: every hidden layer
receives the network input together with the outputs of all preceding hidden
layers. Hidden layers apply layer normalization (learnable gain/shift,
eps 1e-5) followed by a GELU nonlinearity; the output layer is affine.

All math is float64 numpy. Forward passes accept a single vector ``(d,)`` or
a batch ``(B, d)``; gradients over a batch are summed, so callers scale the
output gradient (e.g. by 1/B for a mean loss).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

LAYERNORM_EPS = 1e-5
# Smooth nonlinearity used between all hidden layers.
HIDDEN_NONLINEARITY = "gelu"

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class ShapeError(ValueError):
    """Structural mismatch between parameters, caches, or inputs."""


class NumericError(FloatingPointError):
    """Non-finite values encountered where finiteness is required."""


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return cdf + x * pdf


@dataclass
class Layer:
    """One layer: affine map plus optional layer norm (hidden layers only)."""

    weight: np.ndarray  # (out, in_total)
    bias: np.ndarray    # (out,)
    ln_gain: np.ndarray | None = None   # (out,), None on the output layer
    ln_shift: np.ndarray | None = None  # (out,)

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    def arrays(self) -> list[np.ndarray]:
        out = [self.weight, self.bias]
        if self.ln_gain is not None:
            out += [self.ln_gain, self.ln_shift]
        return out


@dataclass
class MlpParams:
    """Parameters of a dense-skip MLP.

    Layer k of the hidden stack consumes ``input_dim + sum(hidden_dims[:k])``
    features; the output layer consumes the input plus every hidden output.
    """

    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    layers: list[Layer] = field(default_factory=list)

    def arrays(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for layer in self.layers:
            out.extend(layer.arrays())
        return out

    def num_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def copy(self) -> "MlpParams":
        layers = [
            Layer(
                l.weight.copy(),
                l.bias.copy(),
                None if l.ln_gain is None else l.ln_gain.copy(),
                None if l.ln_shift is None else l.ln_shift.copy(),
            )
            for l in self.layers
        ]
        return MlpParams(self.input_dim, self.hidden_dims, self.output_dim, layers)


def init_mlp(
    input_dim: int,
    hidden_dims: tuple[int, ...],
    output_dim: int,
    rng: np.random.Generator,
    output_scale: float = 0.1,
) -> MlpParams:
    """Fan-in-scaled uniform init; the output layer is shrunk by output_scale
    to keep early denoiser predictions small."""
    layers = []
    widths_so_far = 0
    for h in hidden_dims:
        fan_in = input_dim + widths_so_far
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(h, fan_in))
        b = np.zeros(h)
        layers.append(Layer(w, b, np.ones(h), np.zeros(h)))
        widths_so_far += h
    fan_in = input_dim + widths_so_far
    bound = output_scale / np.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(output_dim, fan_in))
    layers.append(Layer(w, np.zeros(output_dim)))
    return MlpParams(input_dim, tuple(hidden_dims), output_dim, layers)


@dataclass
class ForwardCache:
    """Intermediates from one forward pass, sufficient for exact backprop.

    Per hidden layer: the concatenated input, pre-norm activation, normalized
    activation, inverse std of the norm, and the post-GELU output. The output
    layer stores only its concatenated input.
    """

    concat_inputs: list[np.ndarray]
    pre_norm: list[np.ndarray]
    normalized: list[np.ndarray]
    inv_std: list[np.ndarray]
    hidden_out: list[np.ndarray]
    output: np.ndarray
    batched: bool


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], False
    if x.ndim == 2:
        return x, True
    raise ShapeError(f"input must be 1-D or 2-D, got shape {x.shape}")


def mlp_forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Run the network; returns (output, cache).

    Raises ShapeError when the input width disagrees with the parameters and
    NumericError if the output is non-finite.
    """
    xb, batched = _as_batch(x)
    if xb.shape[1] != params.input_dim:
        raise ShapeError(
            f"input width {xb.shape[1]} != network input width {params.input_dim}"
        )
    cache = ForwardCache([], [], [], [], [], np.empty(0), batched)
    feats = xb
    n_hidden = len(params.layers) - 1
    for k in range(n_hidden):
        layer = params.layers[k]
        if feats.shape[1] != layer.in_dim:
            raise ShapeError(
                f"layer {k}: concat width {feats.shape[1]} != weight width {layer.in_dim}"
            )
        z = feats @ layer.weight.T + layer.bias
        mu = z.mean(axis=1, keepdims=True)
        d = z - mu
        var = (d * d).mean(axis=1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + LAYERNORM_EPS)
        x_hat = d * inv_std
        u = x_hat * layer.ln_gain + layer.ln_shift
        h = gelu(u)
        cache.concat_inputs.append(feats)
        cache.pre_norm.append(z)
        cache.normalized.append(x_hat)
        cache.inv_std.append(inv_std)
        cache.hidden_out.append(h)
        feats = np.concatenate([feats, h], axis=1)
    out_layer = params.layers[-1]
    if feats.shape[1] != out_layer.in_dim:
        raise ShapeError(
            f"output layer: concat width {feats.shape[1]} != weight width {out_layer.in_dim}"
        )
    cache.concat_inputs.append(feats)
    y = feats @ out_layer.weight.T + out_layer.bias
    cache.output = y
    if not np.all(np.isfinite(y)):
        raise NumericError("non-finite activation in forward pass")
    return (y if batched else y[0]), cache


def replay_forward(params: MlpParams, cache: ForwardCache) -> np.ndarray:
    """Recompute the output from the cached layer inputs (bit-exact)."""
    out_layer = params.layers[-1]
    y = cache.concat_inputs[-1] @ out_layer.weight.T + out_layer.bias
    return y if cache.batched else y[0]


@dataclass
class LayerGrads:
    weight: np.ndarray
    bias: np.ndarray
    ln_gain: np.ndarray | None = None
    ln_shift: np.ndarray | None = None

    def arrays(self) -> list[np.ndarray]:
        out = [self.weight, self.bias]
        if self.ln_gain is not None:
            out += [self.ln_gain, self.ln_shift]
        return out


@dataclass
class MlpGrads:
    layers: list[LayerGrads]

    def arrays(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for layer in self.layers:
            out.extend(layer.arrays())
        return out

    def __iadd__(self, other: "MlpGrads") -> "MlpGrads":
        for a, b in zip(self.arrays(), other.arrays()):
            a += b
        return self

    def scale(self, c: float) -> "MlpGrads":
        for a in self.arrays():
            a *= c
        return self


def zeros_like_grads(params: MlpParams) -> MlpGrads:
    layers = []
    for l in params.layers:
        layers.append(
            LayerGrads(
                np.zeros_like(l.weight),
                np.zeros_like(l.bias),
                None if l.ln_gain is None else np.zeros_like(l.ln_gain),
                None if l.ln_shift is None else np.zeros_like(l.ln_shift),
            )
        )
    return MlpGrads(layers)


def mlp_backward(
    params: MlpParams, cache: ForwardCache, grad_output: np.ndarray
) -> tuple[MlpGrads, np.ndarray]:
    """Exact gradients of sum(output * grad_output) w.r.t. parameters and input.

    grad_output must match the cached batch shape. Per-parameter gradients are
    summed over the batch; the returned input gradient is per-sample.
    """
    go, batched = _as_batch(grad_output)
    if go.shape != cache.output.shape:
        raise ShapeError(
            f"grad_output shape {go.shape} does not match cached output {cache.output.shape}"
        )
    n_hidden = len(params.layers) - 1
    grads = zeros_like_grads(params)

    out_layer = params.layers[-1]
    feats = cache.concat_inputs[-1]
    grads.layers[-1].weight[:] = go.T @ feats
    grads.layers[-1].bias[:] = go.sum(axis=0)
    grad_feats = go @ out_layer.weight  # (B, input + sum hidden)

    # grad_feats holds d/d(concat of input and all hidden outputs); peel the
    # hidden blocks from the back, accumulating skip contributions.
    input_dim = params.input_dim
    splits = [input_dim]
    for k in range(n_hidden):
        splits.append(splits[-1] + params.layers[k].out_dim)

    for k in reversed(range(n_hidden)):
        layer = params.layers[k]
        dh = grad_feats[:, splits[k]:splits[k + 1]]
        u = cache.normalized[k] * layer.ln_gain + layer.ln_shift
        du = dh * gelu_grad(u)
        grads.layers[k].ln_gain[:] = (du * cache.normalized[k]).sum(axis=0)
        grads.layers[k].ln_shift[:] = du.sum(axis=0)
        dxhat = du * layer.ln_gain
        x_hat = cache.normalized[k]
        inv_std = cache.inv_std[k]
        mean_dxhat = dxhat.mean(axis=1, keepdims=True)
        mean_dxhat_xhat = (dxhat * x_hat).mean(axis=1, keepdims=True)
        dz = inv_std * (dxhat - mean_dxhat - x_hat * mean_dxhat_xhat)
        grads.layers[k].weight[:] = dz.T @ cache.concat_inputs[k]
        grads.layers[k].bias[:] = dz.sum(axis=0)
        grad_feats = grad_feats[:, : splits[k]].copy()
        grad_feats += dz @ layer.weight

    input_grad = grad_feats
    return grads, (input_grad if batched else input_grad[0])


def global_grad_norm(grads: MlpGrads | list[MlpGrads]) -> float:
    groups = grads if isinstance(grads, list) else [grads]
    total = 0.0
    for g in groups:
        for a in g.arrays():
            total += float(np.sum(a * a))
    return float(np.sqrt(total))


def clip_global_norm(grads: MlpGrads | list[MlpGrads], max_norm: float):
    """Scale all gradients jointly so their global L2 norm is at most max_norm."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_grad_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        groups = grads if isinstance(grads, list) else [grads]
        for g in groups:
            for a in g.arrays():
                a *= scale
    return grads


@dataclass
class AdamState:
    """First/second moment accumulators congruent to the parameters."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: MlpParams) -> "AdamState":
        arrays = params.arrays()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_step(
    params: MlpParams,
    grads: MlpGrads,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place.

    Aborts (NumericError) without touching parameters or state when any
    gradient is non-finite.
    """
    garrays = grads.arrays()
    parrays = params.arrays()
    if len(garrays) != len(parrays):
        raise ShapeError("gradient structure does not match parameters")
    for g, p in zip(garrays, parrays):
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient; update aborted")
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for p, g, m, v in zip(parrays, garrays, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
