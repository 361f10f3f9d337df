"""Figure and CSV emission.

All figures are written as SVG with a fixed hash salt and stripped date
metadata, so regenerating from the same inputs is byte-identical. Every
figure writes its underlying data next to it as CSV.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "diffval"

_POLICY_COLORS = ["tab:blue", "tab:orange", "tab:green", "tab:red", "tab:purple", "tab:brown"]


def save_figure(fig, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def write_csv(path: str | Path, fieldnames: list[str], rows: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def plot_loss_curves(metrics_rows: list[dict], out_path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for key, label in [
        ("diffusion_loss", "diffusion"),
        ("reward_loss", "reward"),
        ("policy_loss", "policy"),
    ]:
        ys = [(int(r["step"]), float(r[key])) for r in metrics_rows if r.get(key)]
        if ys:
            ax.plot([s for s, _ in ys], [v for _, v in ys], label=label, linewidth=1)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    save_figure(fig, out_path)


def plot_scatter(
    x: list[float],
    y: list[float],
    xlabel: str,
    ylabel: str,
    out_path: str | Path,
    labels: list[int] | None = None,
) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    if labels is None:
        ax.scatter(x, y, s=24, alpha=0.8)
    else:
        labels_arr = list(labels)
        for pid in sorted(set(labels_arr)):
            xs = [xi for xi, l in zip(x, labels_arr) if l == pid]
            ys = [yi for yi, l in zip(y, labels_arr) if l == pid]
            ax.scatter(xs, ys, s=24, alpha=0.8,
                       color=_POLICY_COLORS[pid % len(_POLICY_COLORS)], label=f"policy {pid}")
        ax.legend(fontsize=8)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    save_figure(fig, out_path)


def _draw_walls(ax, walls) -> None:
    rows, cols = walls.shape
    for i in range(rows):
        for j in range(cols):
            if walls[i, j]:
                ax.add_patch(plt.Rectangle((j, i), 1, 1, color="0.25"))
    ax.set_xlim(0, cols)
    ax.set_ylim(rows, 0)
    ax.set_aspect("equal")
    ax.set_xticks([])
    ax.set_yticks([])


def plot_maze_samples(
    spec,
    samples_by_policy: list,
    out_path: str | Path,
    title: str = "",
) -> None:
    """Scatter sampled positions over the wall grid, one color per policy."""
    fig, ax = plt.subplots(figsize=(5, 5 * spec.rows / spec.cols))
    _draw_walls(ax, spec.walls)
    for pid, samples in enumerate(samples_by_policy):
        ax.scatter(
            samples[:, 0], samples[:, 1], s=8, alpha=0.6,
            color=_POLICY_COLORS[pid % len(_POLICY_COLORS)], label=f"policy {pid}",
        )
    for g in spec.goals:
        c = spec.cell_center(g)
        ax.plot(c[0], c[1], marker="*", color="gold", markersize=12, markeredgecolor="k")
    sc = spec.cell_center(spec.start)
    ax.plot(sc[0], sc[1], marker="o", color="white", markersize=8, markeredgecolor="k")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8, loc="upper right")
    fig.tight_layout()
    save_figure(fig, out_path)


def plot_gamma_sweep(spec, gammas, samples_by_gamma, out_path: str | Path) -> None:
    n = len(gammas)
    fig, axes = plt.subplots(1, n, figsize=(4 * n, 4 * spec.rows / spec.cols))
    if n == 1:
        axes = [axes]
    for ax, gamma, samples in zip(axes, gammas, samples_by_gamma):
        _draw_walls(ax, spec.walls)
        ax.scatter(samples[:, 0], samples[:, 1], s=8, alpha=0.6, color="tab:blue")
        sc = spec.cell_center(spec.start)
        ax.plot(sc[0], sc[1], marker="o", color="white", markersize=8, markeredgecolor="k")
        ax.set_title(f"gamma = {gamma}")
    fig.tight_layout()
    save_figure(fig, out_path)


def emit_run_figures(run_dir: str | Path, out_dir: str | Path) -> list[Path]:
    """Render every figure the run's CSV artifacts support; returns paths."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    metrics = run_dir / "metrics.csv"
    if metrics.exists():
        rows = read_csv(metrics)
        if rows:
            path = out_dir / "loss_curves.svg"
            plot_loss_curves(rows, path)
            written.append(path)

    corr_eps = run_dir / "eval" / "correlation_episodes.csv"
    if corr_eps.exists():
        rows = read_csv(corr_eps)
        path = out_dir / "returns_vs_value.svg"
        plot_scatter(
            [float(r["return"]) for r in rows],
            [float(r["mean_v"]) for r in rows],
            "episode return",
            "mean value estimate",
            path,
            labels=[int(r["policy"]) for r in rows],
        )
        written.append(path)

    corr_states = run_dir / "eval" / "correlation_states.csv"
    if corr_states.exists():
        rows = read_csv(corr_states)
        path = out_dir / "value_vs_future_reward.svg"
        plot_scatter(
            [float(r["v"]) for r in rows],
            [float(r["mean_reward"]) for r in rows],
            "value estimate",
            "mean sampled future reward",
            path,
            labels=[int(r["policy"]) for r in rows],
        )
        written.append(path)
    return written
