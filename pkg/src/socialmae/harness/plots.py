"""Static figures for training and evaluation runs (rendered off-screen)."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..metrics import precision_recall  # noqa: E402
from ..scene import Scene  # noqa: E402


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def loss_curve(rows: Sequence[dict], path: Path) -> Path:
    """Train loss per epoch from parsed log rows."""
    train = [r for r in rows if r["split"] == "train" and r["metric"] == "loss"]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([int(r["epoch"]) for r in train], [float(r["value"]) for r in train], marker=".")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def vim_bars(values: Sequence[float], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    steps = np.arange(1, len(values) + 1)
    ax.bar(steps, values)
    ax.set_xlabel("future timestep")
    ax.set_ylabel("VIM")
    fig.tight_layout()
    return _save(fig, path)


def pr_curves(curves: dict[str, tuple[np.ndarray, np.ndarray]], path: Path) -> Path:
    """One precision-recall curve per label; ``curves`` maps label to ``(scores, hits[, positives])``."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, (scores, hits, *rest) in curves.items():
        if len(scores) == 0:
            continue
        precision, recall = precision_recall(scores, hits, rest[0] if rest else None)
        ax.step(np.r_[0.0, recall], np.r_[precision[:1], precision], where="post", label=label)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


def group_overlay(scene: Scene, predicted: Sequence[Sequence[int]], path: Path, frame: int = -1) -> Path:
    """Top-down view of one frame: marker colour is the predicted group, outline the true group."""
    fig, ax = plt.subplots(figsize=(5, 5))
    pts = scene.trajectories[:, :, frame, :2]
    pred_of = {i: g for g, members in enumerate(predicted) for i in members}
    true_of = {i: g for g, members in enumerate(scene.real_groups()) for i in members}
    cmap = plt.get_cmap("tab10")
    for i in range(scene.num_persons):
        if scene.padded[i]:
            continue
        vis = scene.visibility[i, :, frame]
        if not vis.any():
            continue
        xy = pts[i, vis]
        ax.scatter(
            xy[:, 0],
            xy[:, 1],
            s=30,
            color=cmap(pred_of.get(i, 0) % 10),
            edgecolors=cmap(true_of.get(i, 0) % 10),
            linewidths=2,
        )
        ax.annotate(str(scene.person_ids[i]), xy[0], fontsize=8)
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_title("fill: predicted group, edge: true group", fontsize=9)
    fig.tight_layout()
    return _save(fig, path)


def sweep_plot(axis: str, values: Sequence, metric: str, scores: Sequence[float], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    labels = [str(v) for v in values]
    ax.plot(labels, scores, marker="o")
    ax.set_xlabel(axis)
    ax.set_ylabel(metric)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)
