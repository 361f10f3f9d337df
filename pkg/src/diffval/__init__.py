"""Diffusion-based occupancy models for value estimation and offline control.

Learns a generative model of where a policy will be Delta-t steps in the
future, scores those futures with a symlog-space reward regressor to form a
Monte-Carlo value estimate, and decodes a bounded Gaussian policy against
the resulting one-step action value.
"""

from .config import RunConfig, load_config
from .data import (
    EpisodeRecord,
    Normalizer,
    OccupancyTuple,
    PolicyEmbedding,
    SequentialEmbedder,
    make_tuples,
    read_dataset,
    sample_delta_t,
    scalar_policy_embedding,
    write_dataset,
)
from .diffusion import (
    Denoiser,
    NoiseSchedule,
    build_schedule,
    corrupt,
    diffusion_loss,
    encode_conditioning,
    reverse_step,
    sample_future_states,
)
from .nn import (
    AdamState,
    ForwardCache,
    MlpGrads,
    MlpParams,
    adam_step,
    clip_global_norm,
    init_mlp,
    mlp_backward,
    mlp_forward,
)
from .policy import BcPolicy, GaussianPolicy, policy_train_step
from .reward import RewardModel, symexp, symlog
from .train import ModelBundle, load_bundle, run_training, save_bundle
from .value import ValueEstimate, estimate_q, estimate_v, horizon_factor

__all__ = [
    "AdamState",
    "BcPolicy",
    "Denoiser",
    "EpisodeRecord",
    "ForwardCache",
    "GaussianPolicy",
    "MlpGrads",
    "MlpParams",
    "ModelBundle",
    "NoiseSchedule",
    "Normalizer",
    "OccupancyTuple",
    "PolicyEmbedding",
    "RewardModel",
    "RunConfig",
    "SequentialEmbedder",
    "ValueEstimate",
    "adam_step",
    "build_schedule",
    "clip_global_norm",
    "corrupt",
    "diffusion_loss",
    "encode_conditioning",
    "estimate_q",
    "estimate_v",
    "horizon_factor",
    "init_mlp",
    "load_bundle",
    "load_config",
    "make_tuples",
    "mlp_backward",
    "mlp_forward",
    "policy_train_step",
    "read_dataset",
    "reverse_step",
    "run_training",
    "sample_delta_t",
    "sample_future_states",
    "save_bundle",
    "scalar_policy_embedding",
    "symexp",
    "symlog",
    "write_dataset",
]
