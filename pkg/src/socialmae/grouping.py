"""Social grouping: pairwise features, spectral loss, and partition extraction."""
from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .metrics import components
from .scene import Scene

NO_OVERLAP_DISTANCE = 1e3


def trajectory_distances(scene: Scene, no_overlap: float = NO_OVERLAP_DISTANCE) -> tuple[np.ndarray, np.ndarray]:
    """Mean pelvis distance over co-visible frames for every pair.

    Returns ``(distances [N, N], flagged [N, N])``; pairs never visible together
    are flagged and get ``no_overlap``.
    """
    pel = scene.trajectories[:, scene.pelvis_index]  # [N, T, D]
    vis = scene.visibility[:, scene.pelvis_index]  # [N, T]
    n = scene.num_persons
    dist = np.zeros((n, n))
    flagged = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for k in range(i + 1, n):
            both = vis[i] & vis[k]
            if not both.any():
                dist[i, k] = dist[k, i] = no_overlap
                flagged[i, k] = flagged[k, i] = True
                continue
            d = np.linalg.norm(pel[i, both] - pel[k, both], axis=-1).mean()
            dist[i, k] = dist[k, i] = d
    return dist, flagged


def pose_box(points: np.ndarray, inflate: float = 0.1) -> np.ndarray:
    """Axis-aligned ``(x0, y0, x1, y1)`` around 2D points, grown by ``inflate`` per side length."""
    lo, hi = points.min(axis=0), points.max(axis=0)
    center, half = (lo + hi) / 2, (hi - lo) / 2 * (1 + inflate)
    return np.r_[center - half, center + half]


def giou(a: np.ndarray, b: np.ndarray) -> float:
    inter_w = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    inter_h = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = inter_w * inter_h
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    union = area_a + area_b - inter
    hull = (max(a[2], b[2]) - min(a[0], b[0])) * (max(a[3], b[3]) - min(a[1], b[1]))
    if hull <= 0:
        return 1.0 if np.allclose(a, b) else -1.0
    iou = inter / union if union > 0 else 0.0
    return iou - (hull - union) / hull


def giou_distances(scene: Scene, no_overlap: float = 2.0) -> np.ndarray:
    """``1 - GIoU`` of pose boxes at each pair's last co-visible frame (2D scenes only)."""
    if scene.coord_dim != 2:
        raise ValueError("GIoU distances are defined for 2D scenes only")
    n = scene.num_persons
    any_vis = scene.visibility.any(axis=1)  # [N, T]
    out = np.zeros((n, n))
    for i in range(n):
        for k in range(i + 1, n):
            frames = np.flatnonzero(any_vis[i] & any_vis[k])
            if frames.size == 0:
                out[i, k] = out[k, i] = no_overlap
                continue
            t = frames[-1]
            box_i = pose_box(scene.trajectories[i, scene.visibility[i, :, t], t])
            box_k = pose_box(scene.trajectories[k, scene.visibility[k, :, t], t])
            out[i, k] = out[k, i] = 1.0 - giou(box_i, box_k)
    return out


def distance_features(scene: Scene) -> np.ndarray:
    """Scene-derived pair features ``[N, N, F]``: trajectory distance, plus GIoU distance in 2D."""
    traj, _ = trajectory_distances(scene)
    feats = [traj]
    if scene.coord_dim == 2:
        feats.append(giou_distances(scene))
    return np.stack(feats, axis=-1)


def embedding_distances(pooled: torch.Tensor) -> torch.Tensor:
    """``|z_i - z_j|`` for every pair, ``[N, N, D]``."""
    return (pooled[:, None, :] - pooled[None, :, :]).abs()


def pairwise_features(pooled: torch.Tensor, scene: Scene, projection: torch.nn.Module) -> torch.Tensor:
    """Projected embedding distance concatenated with the scene distance features."""
    emb = projection(embedding_distances(pooled))
    dist = torch.as_tensor(distance_features(scene), dtype=emb.dtype)
    return torch.cat([emb, dist], dim=-1)


# --------------------------------------------------------------------------- losses


def indicator_matrix(groups: Sequence[Sequence[int]], n: int, dtype=torch.float64) -> torch.Tensor:
    """Columns are unit-norm group indicator vectors."""
    if not groups:
        raise ValueError("ground-truth partition is empty")
    e = torch.zeros(n, len(groups), dtype=dtype)
    for c, g in enumerate(groups):
        if not g:
            raise ValueError("ground-truth partition contains an empty group")
        e[list(g), c] = 1.0 / np.sqrt(len(g))
    return e


def soft_laplacian(a: torch.Tensor) -> torch.Tensor:
    off = a - torch.diag_embed(torch.diagonal(a))
    return torch.diag_embed(off.sum(dim=-1)) - off


def eig_loss(a, groups: Sequence[Sequence[int]], alpha: float = 1.0, beta: float = 1.0) -> torch.Tensor:
    """Zero-eigenvector loss of the soft adjacency's Laplacian.

    First term ``sum_g e_g^T L^T L e_g`` over unit group indicators; second term
    ``alpha * exp(-beta * ||L (I - E E^T)||_F^2)`` penalises the trivial ``L = 0``.
    """
    a = torch.as_tensor(a, dtype=torch.float64) if not torch.is_tensor(a) else a
    n = a.shape[0]
    lap = soft_laplacian(a)
    e = indicator_matrix(groups, n, dtype=a.dtype)
    le = lap @ e
    first = (le * le).sum()
    proj = torch.eye(n, dtype=a.dtype) - e @ e.T
    lbar = lap @ proj
    return first + alpha * torch.exp(-beta * (lbar * lbar).sum())


def pair_bce(a: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean BCE over off-diagonal entries; zero for a single person."""
    n = a.shape[0]
    if n < 2:
        return a.sum() * 0
    off = ~torch.eye(n, dtype=torch.bool)
    return F.binary_cross_entropy(a[off], target[off].to(a.dtype))


def grouping_loss(
    a: torch.Tensor,
    count: torch.Tensor,
    groups: Sequence[Sequence[int]],
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
    alpha: float = 1.0,
    beta: float = 1.0,
) -> torch.Tensor:
    n = a.shape[0]
    target = torch.zeros(n, n, dtype=a.dtype)
    for g in groups:
        idx = torch.as_tensor(list(g))
        target[idx[:, None], idx[None, :]] = 1.0
    w1, w2, w3 = weights
    loss = w1 * pair_bce(a, target)
    if w2:
        loss = loss + w2 * eig_loss(a, groups, alpha, beta)
    if w3:
        loss = loss + w3 * (count.reshape(()) - float(len(groups))) ** 2
    return loss


# --------------------------------------------------------------------------- extraction


def extract_groups(a, count: float | None = None, threshold: float = 0.5, sweep: bool = True) -> list[list[int]]:
    """Connected components of ``a >= threshold``.

    With a predicted ``count`` and ``sweep`` enabled, a mismatched component count
    triggers a sweep over thresholds between distinct off-diagonal values; the
    one whose count is closest to ``round(count)`` wins, ties going to the
    threshold closest to 0.5.
    """
    a = np.asarray(a, dtype=np.float64)
    groups = components(a, threshold)
    if count is None or not sweep or a.shape[0] < 2:
        return groups
    want = int(np.floor(count + 0.5))
    if len(groups) == want:
        return groups
    values = np.unique(a[np.triu_indices(a.shape[0], k=1)])
    candidates = np.r_[values.min() - 1e-9, (values[:-1] + values[1:]) / 2, values.max() + 1e-9]
    best_key, best = None, groups
    for thr in candidates:
        g = components(a, thr)
        key = (abs(len(g) - want), abs(thr - threshold))
        if best_key is None or key < best_key:
            best_key, best = key, g
    return best


def group_confidence(a, members: Sequence[int]) -> float:
    """Mean in-group off-diagonal affinity; singletons score ``1 - max`` affinity to anyone else."""
    a = np.asarray(a, dtype=np.float64)
    idx = list(members)
    if len(idx) > 1:
        sub = a[np.ix_(idx, idx)]
        return float((sub.sum() - np.trace(sub)) / (len(idx) * (len(idx) - 1)))
    others = [k for k in range(a.shape[0]) if k != idx[0]]
    if not others:
        return 1.0
    return float(1.0 - a[idx[0], others].max())
