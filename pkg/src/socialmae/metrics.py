"""Forecasting, grouping and action metrics plus graph-connectivity checks."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateInputError

SIZE_CLASSES = ("1", "2", "3", "4", "5+")
EIG_TOL = 1e-8


# --------------------------------------------------------------------------- forecasting


def _visible_pairs(pred, gt, visibility):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    vis = np.ones(pred.shape[:-1], dtype=bool) if visibility is None else np.asarray(visibility, dtype=bool)
    if vis.shape != pred.shape[:-1]:
        raise ValueError(f"visibility shape {vis.shape} != {pred.shape[:-1]}")
    if not vis.any():
        raise DegenerateInputError("no visible entries to evaluate")
    return pred, gt, vis


def mpjpe(pred, gt, visibility=None) -> float:
    """Mean Euclidean joint error over visible entries; arrays ``[..., coord_dim]``."""
    pred, gt, vis = _visible_pairs(pred, gt, visibility)
    dist = np.linalg.norm(pred - gt, axis=-1)
    return float(dist[vis].mean())


def vim(pred, gt, visibility=None) -> np.ndarray:
    """Per-timestep VIM for arrays ``[N, J, T, D]``.

    For each person and frame the joint and coordinate axes are flattened, the
    norm of the difference vector is divided by ``J``, and the result is
    averaged over persons with at least one visible joint in that frame.
    Frames with no visible person yield NaN.
    """
    pred, gt, vis = _visible_pairs(pred, gt, visibility)
    if pred.ndim != 4:
        raise ValueError("vim expects [N, J, T, D] arrays")
    n, j, t, d = pred.shape
    diff = np.where(vis[..., None], pred - gt, 0.0)
    per_person = np.linalg.norm(diff.transpose(0, 2, 1, 3).reshape(n, t, j * d), axis=-1) / j
    present = vis.any(axis=1)  # [N, T]
    out = np.full(t, np.nan)
    counts = present.sum(axis=0)
    ok = counts > 0
    out[ok] = (per_person * present).sum(axis=0)[ok] / counts[ok]
    return out


# --------------------------------------------------------------------------- graphs


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)

    def groups(self) -> list[list[int]]:
        out: dict[int, list[int]] = {}
        for i in range(len(self.parent)):
            out.setdefault(self.find(i), []).append(i)
        return sorted(out.values(), key=lambda g: g[0])


def _check_symmetric(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got shape {a.shape}")
    if not np.array_equal(a, a.T):
        raise ValueError("adjacency must be symmetric")
    return a


def components(a, threshold: float = 0.5) -> list[list[int]]:
    """Connected components of the graph with edges where ``a > threshold`` (or ``>=`` for binary)."""
    a = np.asarray(a, dtype=np.float64)
    uf = UnionFind(a.shape[0])
    rows, cols = np.nonzero(np.triu(a >= threshold, k=1))
    for i, k in zip(rows.tolist(), cols.tolist()):
        uf.union(i, k)
    return uf.groups()


def connected_components(a) -> int:
    """Union-find component count of a binary symmetric adjacency."""
    return len(components(_check_symmetric(a), threshold=0.5))


def laplacian(a) -> np.ndarray:
    """``D - A`` with self-loops removed."""
    a = np.asarray(a, dtype=np.float64)
    off = a - np.diag(np.diag(a))
    return np.diag(off.sum(axis=1)) - off


def laplacian_zero_eigs(a, tol: float = EIG_TOL) -> int:
    """Number of Laplacian eigenvalues with magnitude below ``tol``."""
    a = _check_symmetric(a)
    eig = np.linalg.eigvalsh(laplacian(a))
    return int(np.sum(np.abs(eig) < tol))


# --------------------------------------------------------------------------- average precision


def average_precision(scores: Sequence[float], labels: Sequence[bool], num_positives: int | None = None) -> float:
    """Non-interpolated AP: sum over score thresholds of precision times recall gain.

    Tied scores form a single threshold. ``num_positives`` may exceed the number
    of positive labels when some ground-truth items were never predicted.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    total = int(labels.sum()) if num_positives is None else int(num_positives)
    if total == 0:
        raise DegenerateInputError("average precision undefined without positives")
    if scores.size == 0:
        return 0.0
    order = np.argsort(-scores, kind="mergesort")
    scores, labels = scores[order], labels[order]
    tp = np.cumsum(labels)
    fp = np.cumsum(~labels)
    last = np.r_[np.flatnonzero(np.diff(scores)), scores.size - 1]
    precision = tp[last] / (tp[last] + fp[last])
    recall = tp[last] / total
    gains = np.diff(np.r_[0.0, recall])
    return float(np.sum(gains * precision))


def precision_recall(scores, labels, num_positives=None) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    total = int(labels.sum()) if num_positives is None else int(num_positives)
    order = np.argsort(-scores, kind="mergesort")
    tp = np.cumsum(labels[order])
    fp = np.cumsum(~labels[order])
    precision = tp / np.maximum(tp + fp, 1)
    recall = tp / max(total, 1)
    return precision, recall


def size_class(size: int) -> str:
    if size < 1:
        raise ValueError("groups must be non-empty")
    return str(size) if size < 5 else "5+"


def set_iou(a: Iterable[int], b: Iterable[int]) -> float:
    a, b = set(a), set(b)
    return len(a & b) / len(a | b)


@dataclass
class GroupDetection:
    scene: int
    members: tuple[int, ...]
    confidence: float


def match_groups(
    predictions: Sequence[Sequence[tuple[Sequence[int], float]]],
    ground_truth: Sequence[Sequence[Sequence[int]]],
    cls: str,
    iou_threshold: float = 1.0,
) -> tuple[list[float], list[bool], int]:
    """Greedy confidence-ranked matching of predicted to ground-truth groups of one size class."""
    if len(predictions) != len(ground_truth):
        raise ValueError("predictions and ground truth cover different numbers of scenes")
    dets: list[GroupDetection] = []
    for s, preds in enumerate(predictions):
        for item in preds:
            if len(item) != 2 or item[1] is None:
                raise ValueError(f"predicted group in scene {s} lacks a confidence")
            members, conf = item
            if size_class(len(members)) == cls:
                dets.append(GroupDetection(s, tuple(sorted(members)), float(conf)))
    gts = {s: [tuple(sorted(g)) for g in groups if size_class(len(g)) == cls] for s, groups in enumerate(ground_truth)}
    num_gt = sum(len(v) for v in gts.values())
    used = {s: [False] * len(v) for s, v in gts.items()}
    dets.sort(key=lambda d: -d.confidence)
    scores, hits = [], []
    for det in dets:
        best, best_iou = -1, -1.0
        for gi, g in enumerate(gts[det.scene]):
            if used[det.scene][gi]:
                continue
            iou = set_iou(det.members, g)
            if iou >= iou_threshold and iou > best_iou:
                best, best_iou = gi, iou
        if best >= 0:
            used[det.scene][best] = True
        scores.append(det.confidence)
        hits.append(best >= 0)
    return scores, hits, num_gt


def group_ap(predictions, ground_truth, cls: str, iou_threshold: float = 1.0) -> float | None:
    """AP for one size class; ``None`` when the class has no ground-truth groups."""
    if cls not in SIZE_CLASSES:
        raise ValueError(f"size class must be one of {SIZE_CLASSES}")
    scores, hits, num_gt = match_groups(predictions, ground_truth, cls, iou_threshold)
    if num_gt == 0:
        return None
    return average_precision(scores, hits, num_positives=num_gt)


def group_map(predictions, ground_truth, iou_threshold: float = 1.0) -> tuple[dict[str, float | None], float]:
    """Per-size-class APs and their mean over the populated classes."""
    aps = {cls: group_ap(predictions, ground_truth, cls, iou_threshold) for cls in SIZE_CLASSES}
    populated = [v for v in aps.values() if v is not None]
    if not populated:
        raise DegenerateInputError("no ground-truth groups")
    return aps, float(np.mean(populated))


def action_map(pose_scores, pose_labels, interaction_scores, interaction_labels) -> tuple[dict[str, float], float]:
    """Mean per-class AP over pose classes (one-hot of ``pose_labels``) and interaction classes.

    Scores are ``[M, P]`` / ``[M, I]`` over all evaluated persons. Classes with no
    positive ground truth are left out of the mean.
    """
    pose_scores = np.asarray(pose_scores, dtype=np.float64)
    inter_scores = np.asarray(interaction_scores, dtype=np.float64)
    pose_labels = np.asarray(pose_labels, dtype=np.int64)
    inter_labels = np.asarray(interaction_labels, dtype=bool)
    num_pose = pose_scores.shape[1]
    if pose_labels.size and (pose_labels.min() < 0 or pose_labels.max() >= num_pose):
        raise ValueError("pose label out of range")
    onehot = np.zeros_like(pose_scores, dtype=bool)
    onehot[np.arange(len(pose_labels)), pose_labels] = True
    per_class: dict[str, float] = {}
    for c in range(num_pose):
        if onehot[:, c].any():
            per_class[f"pose_{c}"] = average_precision(pose_scores[:, c], onehot[:, c])
    for c in range(inter_scores.shape[1]):
        if inter_labels[:, c].any():
            per_class[f"interaction_{c}"] = average_precision(inter_scores[:, c], inter_labels[:, c])
    if not per_class:
        raise DegenerateInputError("no positive labels in any class")
    return per_class, float(np.mean(list(per_class.values())))


# --------------------------------------------------------------------------- reports


@dataclass
class EvalReport:
    task: str
    metrics: dict[str, float | None] = field(default_factory=dict)
    vim: list[float] = field(default_factory=list)
    mpjpe: dict[str, float] = field(default_factory=dict)
    group_ap: dict[str, float | None] = field(default_factory=dict)
    action_ap: dict[str, float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "metrics": self.metrics,
            "vim": self.vim,
            "mpjpe": self.mpjpe,
            "group_ap": self.group_ap,
            "action_ap": self.action_ap,
            "counts": self.counts,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def rows(self) -> list[tuple[str, float | None]]:
        out = [(k, v) for k, v in self.metrics.items()]
        out += [(f"vim_t{t + 1}", v) for t, v in enumerate(self.vim)]
        out += [(f"mpjpe_{k}", v) for k, v in self.mpjpe.items()]
        out += [(f"group_ap_G{k}", v) for k, v in self.group_ap.items()]
        out += [(f"action_ap_{k}", v) for k, v in self.action_ap.items()]
        out += [(f"count_{k}", v) for k, v in self.counts.items()]
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["metric", "value"])
        for name, value in self.rows():
            writer.writerow([name, "" if value is None else repr(float(value))])
        return buf.getvalue()
