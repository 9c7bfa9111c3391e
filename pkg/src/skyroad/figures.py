"""Figure rendering for the report paths: every command that writes a
delimited table can drop a matplotlib PNG next to it.

Rendering never touches the CSV contents; runs can disable it entirely with
the CLI's --no-figures flag.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .scenario import RoadGraph

_SAVE_KW = dict(dpi=120, metadata={"Software": "skyroad"})


def _floats(rows, key):
    return np.array([float(r[key]) for r in rows])


def save_training_curves(rows, path, window: int = 50) -> Path:
    """Reward and loss curves over updates (one row per global update)."""
    path = Path(path)
    updates = _floats(rows, "update")
    reward = _floats(rows, "mean_reward")
    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax0.plot(updates, reward, alpha=0.3, lw=0.8, label="per update")
    if len(reward) >= window:
        kernel = np.ones(window) / window
        smooth = np.convolve(reward, kernel, mode="valid")
        ax0.plot(updates[window - 1:], smooth, lw=1.8, label=f"rolling mean ({window})")
    ax0.set_ylabel("mean reward")
    ax0.legend(loc="lower right", fontsize=8)
    ax1.plot(updates, _floats(rows, "actor_loss"), lw=0.8, label="actor loss")
    ax1.plot(updates, _floats(rows, "critic_loss"), lw=0.8, label="critic loss")
    ax1.set_xlabel("update")
    ax1.set_ylabel("loss")
    ax1.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def save_meta_curves(rows, path) -> Path:
    """Pre- vs post-adaptation reward over meta-iterations."""
    path = Path(path)
    it = _floats(rows, "iteration")
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(it, _floats(rows, "pre_reward"), lw=1.0, label="pre-adaptation")
    ax.plot(it, _floats(rows, "post_reward"), lw=1.0, label="post-adaptation")
    ax.set_xlabel("meta-iteration")
    ax.set_ylabel("mean episode reward")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def save_trajectory(rows, graph: RoadGraph, path) -> Path:
    """3D view of vehicle tracks over the road graph plus the user layout."""
    path = Path(path)
    fig = plt.figure(figsize=(7, 6))
    ax = fig.add_subplot(projection="3d")
    for eid in range(graph.num_edges):
        a, b = graph.edge_endpoints(eid)
        ax.plot([a[0], b[0]], [a[1], b[1]], [0, 0], color="0.7", lw=1.0)
    by_entity: dict[tuple[str, str], list] = {}
    for r in rows:
        by_entity.setdefault((r["entity"], str(r["id"])), []).append(r)
    users_x, users_y = [], []
    for (entity, _eid), track in sorted(by_entity.items()):
        track.sort(key=lambda r: int(r["slot"]))
        xs = [float(r["x"]) for r in track]
        ys = [float(r["y"]) for r in track]
        zs = [float(r["z"]) for r in track]
        if entity == "uav":
            ax.plot(xs, ys, zs, lw=1.4, marker="^", markersize=3)
        elif entity == "ugv":
            ax.plot(xs, ys, zs, lw=1.2, ls=":", marker="o", markersize=3)
        else:
            users_x.extend(xs)
            users_y.extend(ys)
    if users_x:
        ax.scatter(users_x, users_y, np.zeros(len(users_x)), marker="x", s=12,
                   color="0.4", alpha=0.7)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_zlabel("z (m)")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def save_eval_sweep(rows, path) -> Path:
    """Mean sum rate (with spread) against the number of users."""
    path = Path(path)
    users = _floats(rows, "num_users")
    mean = _floats(rows, "mean_sum_rate") / 1e6
    std = _floats(rows, "std_sum_rate") / 1e6
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(users, mean, yerr=std, marker="o", capsize=3)
    ax.set_xlabel("number of users")
    ax.set_ylabel("sum rate (Mbit/s)")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def save_bench(rows, path) -> Path:
    """Mean episode wall time per (algorithm, configuration)."""
    path = Path(path)
    labels = [f"{r['algo']}\n{r['config']}" for r in rows]
    mean = _floats(rows, "mean_s")
    std = _floats(rows, "std_s")
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(range(len(rows)), mean, yerr=std, capsize=3)
    ax.set_xticks(range(len(rows)), labels, fontsize=8)
    ax.set_ylabel("episode wall time (s)")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path
