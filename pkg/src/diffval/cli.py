"""Command-line entry point.

Subcommands cover the full experiment surface: dataset collection, training,
the correlation study, conditional maze sampling, the discount sweep, figure
regeneration, and the behavior-cloning baseline. Exit codes: 0 success,
2 configuration/input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, apply_overrides, load_config
from .data import DatasetError, read_dataset, write_dataset
from .envs import (
    MazeEnv,
    MountainCar,
    WaypointPolicy,
    bfs_distances,
    collect_episodes,
    large_maze,
    mc_episode_budgets,
    mc_improvement_path,
    u_maze,
)
from .evals import (
    EvalError,
    eval_correlation,
    eval_gamma_sweep,
    eval_maze_conditioning,
)
from .nn import NumericError
from .plots import (
    emit_run_figures,
    plot_gamma_sweep,
    plot_maze_samples,
    write_csv,
)
from .train import load_bundle, make_env, rollout_policy, run_training, train_bc_baseline

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _controllers_for(env_id: str, n_policies: int):
    if env_id == "mountain-car":
        return MountainCar(), mc_improvement_path(n_policies)
    if env_id in ("maze-umaze", "maze-large"):
        spec = u_maze() if env_id == "maze-umaze" else large_maze()
        if n_policies > len(spec.goals):
            raise ConfigError(f"{env_id} has only {len(spec.goals)} goals")
        return MazeEnv(spec), [WaypointPolicy(spec, i) for i in range(n_policies)]
    raise ConfigError(f"unknown environment {env_id!r}")


def cmd_collect(args) -> int:
    env, controllers = _controllers_for(args.env, args.policies)
    rng = np.random.default_rng(args.seed)
    spec = args.episodes_per_policy
    if spec == "auto" and args.env == "mountain-car":
        budgets = mc_episode_budgets(args.policies)
    elif "," in spec:
        budgets = [int(v) for v in spec.split(",")]
        if len(budgets) != len(controllers):
            raise ConfigError(
                f"{len(budgets)} budgets given for {len(controllers)} policies"
            )
    else:
        budgets = int(spec) if spec != "auto" else 10
    episodes = collect_episodes(
        env,
        controllers,
        budgets,
        rng,
        with_actions=not args.no_actions,
        with_rewards=not args.no_rewards,
    )
    write_dataset(args.out, episodes)
    n_steps = sum(ep.length for ep in episodes)
    print(f"wrote {len(episodes)} episodes ({n_steps} steps) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    if args.config:
        config = load_config(args.config, args.set)
    else:
        config = apply_overrides(RunConfig(), args.set or [])
    if args.dataset:
        config.dataset = args.dataset
    if args.pretrain_diffusion_only:
        config.pretrain_diffusion_only = True
    result = run_training(config, args.out)
    print(f"run complete: {len(result.checkpoint_paths)} checkpoints in {result.out_dir}")
    return EXIT_OK


def _latest_checkpoint(run_dir: Path) -> Path:
    ckpts = sorted(run_dir.glob("ckpt_*.bin"))
    if not ckpts:
        raise ConfigError(f"no checkpoints under {run_dir}")
    return ckpts[-1]


def _load_run(args):
    run_dir = Path(args.run)
    path = Path(args.checkpoint) if args.checkpoint else _latest_checkpoint(run_dir)
    return run_dir, load_bundle(path)


def cmd_eval_corr(args) -> int:
    run_dir, bundle = _load_run(args)
    dataset = read_dataset(bundle.config.dataset)
    n_policies = len({ep.policy_id for ep in dataset})
    _, controllers = _controllers_for(bundle.config.env, n_policies)
    result = eval_correlation(bundle, controllers, args.episodes_per_policy, args.seed)
    out = Path(args.out) if args.out else run_dir / "eval"
    write_csv(
        out / "correlation_episodes.csv",
        ["policy", "episode", "return", "mean_v"],
        result.episode_rows,
    )
    write_csv(
        out / "correlation_states.csv",
        ["policy", "v", "mean_reward"],
        result.state_rows,
    )
    write_csv(
        out / "correlation_summary.csv",
        ["r_returns_vs_v", "r_v_vs_reward"],
        [{"r_returns_vs_v": result.r_returns_vs_v, "r_v_vs_reward": result.r_v_vs_reward}],
    )
    emit_run_figures(run_dir, out / "figures")
    print(f"pearson(returns, V) = {result.r_returns_vs_v:.4f}")
    print(f"pearson(V, future reward) = {result.r_v_vs_reward:.4f}")
    return EXIT_OK


def _maze_spec_for(env_id: str):
    if env_id == "maze-umaze":
        return u_maze()
    if env_id == "maze-large":
        return large_maze()
    raise ConfigError(f"{env_id!r} is not a maze environment")


def cmd_eval_maze(args) -> int:
    run_dir, bundle = _load_run(args)
    spec = _maze_spec_for(bundle.config.env)
    episodes = read_dataset(bundle.config.dataset)
    indices = list(range(len(spec.goals)))
    result = eval_maze_conditioning(bundle, spec, episodes, indices, args.samples, args.seed)
    out = Path(args.out) if args.out else run_dir / "eval"
    rows = []
    for pid, samples in zip(indices, result.samples_by_policy):
        for x, y in samples[:, :2]:
            rows.append({"policy": pid, "x": repr(float(x)), "y": repr(float(y))})
    write_csv(out / "maze_samples.csv", ["policy", "x", "y"], rows)
    write_csv(
        out / "maze_separation.csv",
        ["separation"] + [f"policy_{i}" for i in indices],
        [{"separation": result.separation,
          **{f"policy_{i}": f for i, f in zip(indices, result.per_policy_fraction)}}],
    )
    plot_maze_samples(
        spec,
        [s[:, :2] for s in result.samples_by_policy],
        out / "figures" / "maze_conditional_samples.svg",
        title=f"separation = {result.separation:.3f}",
    )
    print(f"separation score = {result.separation:.4f}")
    return EXIT_OK


def cmd_eval_gamma(args) -> int:
    run_dir, bundle = _load_run(args)
    spec = _maze_spec_for(bundle.config.env)
    gammas = [float(g) for g in args.gammas.split(",")]
    policy_index = args.policy_index
    if policy_index < 0:
        dist = bfs_distances(spec, spec.start)
        policy_index = int(np.argmax([dist[g] for g in spec.goals]))
    result = eval_gamma_sweep(bundle, spec, gammas, policy_index, args.samples, args.seed)
    out = Path(args.out) if args.out else run_dir / "eval"
    write_csv(
        out / "gamma_sweep.csv",
        ["gamma", "mean_geodesic_distance"],
        [{"gamma": g, "mean_geodesic_distance": d}
         for g, d in zip(result.gammas, result.mean_distances)],
    )
    plot_gamma_sweep(
        spec, result.gammas, result.samples_by_gamma,
        out / "figures" / "gamma_sweep.svg",
    )
    for g, d in zip(result.gammas, result.mean_distances):
        print(f"gamma {g}: mean geodesic distance {d:.3f} cells")
    return EXIT_OK


def cmd_plot(args) -> int:
    out = Path(args.out) if args.out else Path(args.run) / "figures"
    written = emit_run_figures(args.run, out)
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_baseline_bc(args) -> int:
    bc, normalizer, losses = train_bc_baseline(
        args.dataset, args.env, args.steps, args.seed
    )
    print(f"final BC loss: {losses[-1]:.6f}")
    env = make_env(args.env)
    if env is not None and args.eval_episodes > 0:
        rets = []
        for ep in range(args.eval_episodes):
            rng = np.random.default_rng([args.seed, 99, ep])
            _, ret = rollout_policy(env, lambda s: bc.act(s, normalizer), rng)
            rets.append(ret)
        print(f"mean return over {args.eval_episodes} episodes: {np.mean(rets):.3f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(
            out / "bc_losses.csv",
            ["step", "loss"],
            [{"step": i, "loss": repr(l)} for i, l in enumerate(losses)],
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffval")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="roll data-collecting policies and write a dataset")
    p.add_argument("--env", required=True)
    p.add_argument("--out", required=True)
    p.add_argument(
        "--episodes-per-policy", default="10",
        help="int, comma list (one budget per policy), or 'auto' to balance steps",
    )
    p.add_argument("--policies", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-actions", action="store_true")
    p.add_argument("--no-rewards", action="store_true")
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train", help="run the interleaved training loop")
    p.add_argument("--config")
    p.add_argument("--dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--pretrain-diffusion-only", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-corr", help="returns-vs-value correlation study")
    p.add_argument("--run", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--episodes-per-policy", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_corr)

    p = sub.add_parser("eval-maze", help="policy-conditioned maze sampling")
    p.add_argument("--run", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--samples", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_maze)

    p = sub.add_parser("eval-gamma", help="discount sweep over sampled offsets")
    p.add_argument("--run", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--gammas", default="0.5,0.9,0.99")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--policy-index", type=int, default=-1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_gamma)

    p = sub.add_parser("plot", help="regenerate figures from run CSVs")
    p.add_argument("--run", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("baseline-bc", help="behavior-cloning baseline")
    p.add_argument("--dataset", required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-episodes", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_baseline_bc)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetError, EvalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
