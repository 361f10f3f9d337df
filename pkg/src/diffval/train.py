"""Interleaved training loop and checkpoint plumbing.

Each step draws one tuple minibatch and, in order: updates the denoiser on
the noise-prediction loss, updates the reward regressor on the anchor
transitions, estimates V at a subsample of successor states from fresh
occupancy samples, forms Q = r + gamma * V, and updates the policy. The V
offset is action-independent, so estimating it on a subsample leaves policy
gradients exact while keeping the per-step sampling cost bounded.

Runs are deterministic per seed: every consumer owns a spawned child
generator, and metrics are written with repr-stable formatting.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import nn
from .config import ConfigError, RunConfig
from .data import Normalizer, TupleSampler, read_dataset
from .diffusion import Denoiser, NoiseSchedule, build_schedule, diffusion_loss
from .envs import MazeEnv, MountainCar, large_maze, u_maze
from .policy import BcPolicy, GaussianPolicy, policy_train_step
from .reward import RewardModel
from .value import estimate_v_batch

METRICS_FIELDS = [
    "step",
    "diffusion_loss",
    "reward_loss",
    "policy_loss",
    "mean_v",
    "eval_return",
    "wall_clock",
]


def make_env(env_id: str):
    if env_id == "mountain-car":
        return MountainCar()
    if env_id == "maze-umaze":
        return MazeEnv(u_maze())
    if env_id == "maze-large":
        return MazeEnv(large_maze())
    return None


def action_bound_for(env_id: str, action_dim: int) -> np.ndarray:
    env = make_env(env_id)
    bound = env.action_bound if env is not None else 1.0
    return np.full(action_dim, float(bound))


@dataclass
class ModelBundle:
    """Everything needed to evaluate a run."""

    config: RunConfig
    denoiser: Denoiser
    schedule: NoiseSchedule
    normalizer: Normalizer
    reward_model: RewardModel | None = None
    policy: GaussianPolicy | None = None


def save_bundle(path: str | Path, bundle: ModelBundle, step: int) -> None:
    cfg = bundle.config
    meta = {
        "step": step,
        "state_dim": bundle.denoiser.state_dim,
        "action_dim": bundle.reward_model.action_dim if bundle.reward_model else 0,
        "config": cfg.to_dict(),
    }
    sections = {
        "meta": ckpt.encode_meta(meta),
        "denoiser": ckpt.encode_network(bundle.denoiser.params),
        "schedule": ckpt.encode_schedule(bundle.schedule.T, bundle.schedule.beta),
        "normalizer": ckpt.encode_normalizer(bundle.normalizer.lo, bundle.normalizer.hi),
    }
    if bundle.reward_model is not None:
        sections["reward"] = ckpt.encode_network(bundle.reward_model.params)
    if bundle.policy is not None:
        sections["policy"] = ckpt.encode_network(bundle.policy.params)
    ckpt.write_checkpoint(path, sections)


def load_bundle(path: str | Path) -> ModelBundle:
    sections = ckpt.read_checkpoint(path)
    meta = ckpt.decode_meta(sections["meta"])
    cfg = RunConfig.from_dict(meta["config"])
    T, beta = ckpt.decode_schedule(sections["schedule"])
    alpha = 1.0 - beta
    schedule = NoiseSchedule(beta, alpha, np.cumprod(alpha))
    lo, hi = ckpt.decode_normalizer(sections["normalizer"])
    normalizer = Normalizer(lo, hi)
    denoiser = Denoiser(
        meta["state_dim"], cfg.embed_dim, cfg.phi_dim,
        ckpt.decode_network(sections["denoiser"]), cfg.condition_on_next,
    )
    reward_model = None
    if "reward" in sections:
        reward_model = RewardModel(
            meta["state_dim"], meta["action_dim"], ckpt.decode_network(sections["reward"])
        )
    policy = None
    if "policy" in sections:
        bound = action_bound_for(cfg.env, meta["action_dim"])
        policy = GaussianPolicy(
            meta["state_dim"], meta["action_dim"], bound, ckpt.decode_network(sections["policy"])
        )
    return ModelBundle(cfg, denoiser, schedule, normalizer, reward_model, policy)


def rollout_policy(env, act_fn, rng: np.random.Generator, horizon: int | None = None):
    """Roll a raw-state policy in the environment; returns (states, return)."""
    horizon = horizon or env.horizon
    state = env.reset(rng)
    states = [state]
    total = 0.0
    for _ in range(horizon):
        action = act_fn(state)
        if isinstance(env, MazeEnv):
            state = env.step(state, action)
            reward, done = 0.0, False
        else:
            state, reward, done = env.step(state, action)
        states.append(state)
        total += reward
        if done:
            break
    return np.array(states), total


@dataclass
class RunResult:
    out_dir: Path
    metrics_path: Path
    checkpoint_paths: list[Path]
    bundle: ModelBundle


def _fmt_metric(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


def run_training(config: RunConfig, out_dir: str | Path) -> RunResult:
    """Execute one run: normalize once, train per the interleaved loop,
    checkpoint on the configured cadence, and emit the metrics CSV."""
    config.validate()
    if not config.dataset:
        raise ConfigError("config.dataset is required")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(config.to_json())

    episodes = read_dataset(config.dataset)
    state_dim = episodes[0].states.shape[1]
    has_actions = all(ep.actions is not None for ep in episodes)
    has_rewards = all(ep.rewards is not None for ep in episodes)
    action_dim = episodes[0].actions.shape[1] if has_actions else 0
    train_actor = not config.pretrain_diffusion_only and has_actions and has_rewards
    if not config.pretrain_diffusion_only and not (has_actions and has_rewards):
        raise ConfigError(
            "dataset lacks actions or rewards; use pretrain_diffusion_only for state-only data"
        )

    normalizer = Normalizer.fit(episodes)
    schedule = build_schedule(config.diffusion_steps, config.beta_start, config.beta_end)
    seeds = np.random.SeedSequence(config.seed).spawn(5)
    init_rng, data_rng, diff_rng, value_rng, policy_rng = (
        np.random.default_rng(s) for s in seeds
    )

    denoiser = Denoiser.create(
        state_dim, init_rng, config.embed_dim, config.phi_dim,
        config.hidden, config.condition_on_next,
    )
    denoiser_adam = nn.AdamState.for_params(denoiser.params)
    reward_model = policy = None
    if train_actor:
        reward_model = RewardModel.create(state_dim, action_dim, init_rng, config.hidden)
        bound = action_bound_for(config.env, action_dim)
        policy = GaussianPolicy.create(state_dim, action_dim, bound, init_rng, config.hidden)

    sampler = TupleSampler(
        episodes, normalizer, config.gamma, config.phi_dim,
        config.policy_embedding, config.max_window,
    )
    bundle = ModelBundle(config, denoiser, schedule, normalizer, reward_model, policy)
    env = make_env(config.env)

    def eval_return(step: int) -> float | None:
        if policy is None or env is None:
            return None
        rng = np.random.default_rng([config.seed, 0xE7A1, step])
        _, ret = rollout_policy(env, lambda s: policy.act(s, normalizer), rng)
        return ret

    metrics_path = out / "metrics.csv"
    checkpoint_paths: list[Path] = []

    def save_step(step: int) -> None:
        path = out / f"ckpt_{step:06d}.bin"
        save_bundle(path, bundle, step)
        checkpoint_paths.append(path)

    start = time.perf_counter()
    save_step(0)
    mean_v_running = 0.0
    with open(metrics_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_FIELDS)
        for step in range(1, config.steps + 1):
            batch = sampler.sample(config.batch_size, data_rng)
            s_next_cond = batch.s_next if config.condition_on_next else None
            dloss, dgrads = diffusion_loss(
                denoiser, batch.s_t, batch.s_future, batch.delta_t,
                batch.phi, schedule, diff_rng, s_next_cond,
            )
            nn.clip_global_norm(dgrads, config.max_grad_norm)
            nn.adam_step(denoiser.params, dgrads, denoiser_adam, config.learning_rate)

            rloss = ploss = mean_v = None
            if train_actor:
                rloss = reward_model.train_step(
                    batch.s_t, batch.actions, batch.rewards, config.learning_rate,
                    config.max_grad_norm,
                )
                k = min(config.v_states_per_step, len(batch))
                idx = value_rng.choice(len(batch), size=k, replace=False)
                v_sub = estimate_v_batch(
                    batch.s_next[idx], policy.mean_action, reward_model, denoiser,
                    schedule, batch.phi[idx], config.n_samples, config.gamma,
                    batch.steps_remaining[idx], value_rng,
                )
                mean_v = float(np.mean(v_sub)) if k else 0.0
                mean_v_running = mean_v
                v_next = np.full(len(batch), mean_v_running)
                v_next[idx] = v_sub
                ploss = policy_train_step(
                    policy, batch.s_t, reward_model, v_next, config.gamma,
                    config.alpha_ent, config.bc_coef, config.learning_rate,
                    policy_rng, batch.actions, config.max_grad_norm,
                )

            at_checkpoint = step % config.checkpoint_every == 0 or step == config.steps
            ret = eval_return(step) if at_checkpoint else None
            writer.writerow(
                [
                    step,
                    _fmt_metric(dloss),
                    _fmt_metric(rloss),
                    _fmt_metric(ploss),
                    _fmt_metric(mean_v),
                    _fmt_metric(ret),
                    f"{time.perf_counter() - start:.3f}",
                ]
            )
            if at_checkpoint:
                save_step(step)
    return RunResult(out, metrics_path, checkpoint_paths, bundle)


def train_bc_baseline(
    dataset_path: str | Path,
    env_id: str,
    steps: int,
    seed: int,
    batch_size: int = 128,
    learning_rate: float = 3e-4,
    hidden: tuple[int, ...] = (256, 256),
) -> tuple[BcPolicy, Normalizer, list[float]]:
    """Behavior cloning on dataset actions; returns the policy and losses."""
    episodes = read_dataset(dataset_path)
    if any(ep.actions is None for ep in episodes):
        raise ConfigError("behavior cloning requires a dataset with actions")
    normalizer = Normalizer.fit(episodes)
    state_dim = episodes[0].states.shape[1]
    action_dim = episodes[0].actions.shape[1]
    states = np.concatenate([normalizer.normalize(ep.states[:-1]) for ep in episodes])
    actions = np.concatenate([ep.actions for ep in episodes])
    rng = np.random.default_rng(seed)
    bc = BcPolicy.create(state_dim, action_dim, action_bound_for(env_id, action_dim), rng, hidden)
    losses = []
    for _ in range(steps):
        idx = rng.integers(0, states.shape[0], size=min(batch_size, states.shape[0]))
        losses.append(bc.train_step(states[idx], actions[idx], learning_rate))
    return bc, normalizer, losses
