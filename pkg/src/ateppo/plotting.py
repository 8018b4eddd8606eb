"""SVG figures for learning curves and trajectories.

Output is byte-stable for identical inputs: the SVG id salt is fixed and no
creation date is written.
"""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .envs import read_trajectories  # noqa: E402
from .trainer import read_curve  # noqa: E402

_SVG_META = {"Date": None}
_RC = {"svg.hashsalt": "ateppo", "svg.fonttype": "path"}


def aggregate_curves(curves, key="mean_return"):
    """Epochs, mean and population std of ``key`` across runs.

    Runs are truncated to the shortest one so every epoch has all seeds.
    """
    curves = [c for c in curves if c is not None]
    if not curves:
        return np.zeros(0, dtype=int), np.zeros(0), np.zeros(0)
    n = min(len(c) for c in curves)
    epochs = np.array([r["epoch"] for r in curves[0][:n]], dtype=int)
    vals = np.array([[r[key] for r in c[:n]] for c in curves], dtype=np.float64).reshape(len(curves), n)
    return epochs, vals.mean(axis=0), vals.std(axis=0)


def _save(fig, path):
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def plot_learning_curve(curves, path, *, key="mean_return", labels=None, title=None):
    """One line per group of runs with a mean +/- std band.

    ``curves`` is a list of groups; each group is a list of curve row lists.
    Returns the aggregated ``(epochs, mean, std)`` of every group.
    """
    stats = []
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for gi, group in enumerate(curves):
            epochs, mean, std = aggregate_curves(group, key)
            stats.append((epochs, mean, std))
            if len(epochs) == 0:
                continue
            label = labels[gi] if labels else None
            if len(epochs) == 1:
                ax.plot(epochs, mean, "o", label=label)
            else:
                (line,) = ax.plot(epochs, mean, label=label)
                if len(group) > 1:
                    ax.fill_between(epochs, mean - std, mean + std, alpha=0.25,
                                    color=line.get_color(), linewidth=0)
        ax.set_xlabel("epoch")
        ax.set_ylabel(key.replace("_", " "))
        if title:
            ax.set_title(title)
        if labels and any(len(s[0]) for s in stats):
            ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)
    return stats


def plot_trajectories(episodes, path, *, goals=None, title=None):
    """2-D paths coloured by task; ``episodes`` maps id -> (task, positions, rewards)."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 4.5))
        cmap = plt.get_cmap("tab10")
        seen = set()
        for ep in sorted(episodes):
            task, pts, _ = episodes[ep]
            label = f"task {task}" if task not in seen else None
            seen.add(task)
            ax.plot(pts[:, 0], pts[:, 1], color=cmap(task % 10), lw=1.2, label=label)
        if goals is not None:
            goals = np.asarray(goals)
            ax.plot(goals[:, 0], goals[:, 1], "k*", ms=10, label="goals")
        ax.plot([0], [0], "ko", ms=4)
        ax.set_aspect("equal", adjustable="datalim")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        if title:
            ax.set_title(title)
        if seen or goals is not None:
            ax.legend(frameon=False, fontsize=8)
        fig.tight_layout()
        _save(fig, path)


def emit_plots(run_dirs, out_dir=None, *, key="mean_return", goals=None):
    """Render ``learning_curve.svg`` and ``trajectories.svg`` from run directories.

    Several run directories are aggregated into one curve with a std band;
    trajectories come from the first directory that has them. Returns the
    written paths.
    """
    run_dirs = [run_dirs] if isinstance(run_dirs, (str, os.PathLike)) else list(run_dirs)
    if not run_dirs:
        raise ValueError("no run directories given")
    out_dir = out_dir or run_dirs[0]
    os.makedirs(out_dir, exist_ok=True)
    curves, traj_path = [], None
    for d in run_dirs:
        if not os.path.isdir(d):
            raise FileNotFoundError(f"run directory not found: {d}")
        cp = os.path.join(d, "curve.csv")
        if os.path.exists(cp):
            curves.append(read_curve(cp))
        tp = os.path.join(d, "trajectories.csv")
        if traj_path is None and os.path.exists(tp):
            traj_path = tp
    if not curves and traj_path is None:
        raise FileNotFoundError(f"no curve.csv or trajectories.csv under {run_dirs[0]}")
    written = []
    if curves:
        p = os.path.join(out_dir, "learning_curve.svg")
        plot_learning_curve([curves], p, key=key)
        written.append(p)
    if traj_path is not None:
        p = os.path.join(out_dir, "trajectories.svg")
        plot_trajectories(read_trajectories(traj_path), p, goals=goals)
        written.append(p)
    return written
