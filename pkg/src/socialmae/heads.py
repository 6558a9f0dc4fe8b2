"""Fine-tuning heads on top of the pre-trained encoder.

All heads consume the encoder run on the complete, unmasked token set.
Per-person latents are the mean of that person's joint-token latents from the
final (normed) encoder layer.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .dct import dct_matrix
from .errors import DegenerateInputError
from .grouping import extract_groups, group_confidence, grouping_loss, pairwise_features
from .mae import (
    Encoder,
    ModelConfig,
    PreparedScene,
    TokenTensors,
    init_mlp,
    init_weights,
    pad_batch,
    prepare_scene,
)
from .scene import Scene

TASKS = ("forecast", "group", "action")
INTERACTION_THRESHOLD = 0.6
GROUP_PAIR_SIZES = (16, 32, 128, 64, 8, 1)
EMBED_PROJ_DIM = 16


def mlp(sizes: Sequence[int], in_dim: int) -> nn.Sequential:
    """Linear layers of the given output sizes with ReLU between them (none after the last)."""
    layers: list[nn.Module] = []
    for i, size in enumerate(sizes):
        layers.append(nn.Linear(in_dim, size))
        if i < len(sizes) - 1:
            layers.append(nn.ReLU())
        in_dim = size
    return nn.Sequential(*layers)


# --------------------------------------------------------------------------- forecasting


@dataclass
class ForecastOutput:
    layers: torch.Tensor  # [L, N, J, tau, D], absolute coordinates

    @property
    def horizon(self) -> int:
        return self.layers.shape[3]

    @property
    def final(self) -> torch.Tensor:
        return self.layers[-1]


class ForecastHead(nn.Module):
    """Shared linear read-out from any encoder layer to the future window's DCT coefficients."""

    def __init__(self, cfg: ModelConfig, horizon: int):
        super().__init__()
        if horizon < 1:
            raise ValueError(f"forecast horizon must be >= 1, got {horizon}")
        self.cfg = cfg
        self.horizon = horizon
        self.readout = nn.Linear(cfg.enc_dim, cfg.coord_dim * horizon)
        self.register_buffer("basis", torch.as_tensor(dct_matrix(horizon).copy()), persistent=False)

    def forward(self, layers: torch.Tensor, offsets: torch.Tensor, num_joints: int) -> torch.Tensor:
        """``layers`` ``[L, B, K, enc]`` (normed) -> ``[L, B, N, J, tau, D]`` de-centered."""
        l, b, k, _ = layers.shape
        d, tau = self.cfg.coord_dim, self.horizon
        coeffs = self.readout(layers).reshape(l, b, k, d, tau)
        cart = (coeffs @ self.basis.to(coeffs.dtype)).transpose(-1, -2)  # [L, B, K, tau, D]
        cart = cart + offsets[None, :, :, None, :]
        return cart.reshape(l, b, k // num_joints, num_joints, tau, d)


def forecast_loss(out: ForecastOutput | torch.Tensor, gt_future, visibility, weights: Sequence[float] | None = None):
    """Layer-weighted squared error, each layer normalised by the visible entry count.

    ``out`` is ``[L, N, J, tau, D]``; ``gt_future`` ``[N, J, tau, D]``;
    ``visibility`` ``[N, J, tau]``.
    """
    pred = out.layers if isinstance(out, ForecastOutput) else out
    gt = torch.as_tensor(np.asarray(gt_future), dtype=pred.dtype)
    vis = torch.as_tensor(np.asarray(visibility), dtype=torch.bool)
    count = int(vis.sum())
    if count == 0:
        raise DegenerateInputError("ground-truth future has no visible entries")
    num_layers = pred.shape[0]
    lam = torch.ones(num_layers, dtype=pred.dtype) if weights is None else torch.as_tensor(weights, dtype=pred.dtype)
    if lam.shape != (num_layers,):
        raise ValueError(f"need {num_layers} layer weights, got {tuple(lam.shape)}")
    sq = ((pred - gt[None]) ** 2).sum(dim=-1)
    sq = torch.where(vis[None], sq, torch.zeros_like(sq))
    per_layer = sq.flatten(1).sum(dim=1) / count
    return (lam * per_layer).sum()


# --------------------------------------------------------------------------- grouping


@dataclass
class GroupPrediction:
    adjacency: torch.Tensor  # [N, N]
    count: torch.Tensor  # scalar
    partition: list[list[int]] | None = None

    def extract(self, use_count: bool = True) -> list[list[int]]:
        a = self.adjacency.detach().cpu().numpy()
        self.partition = extract_groups(a, float(self.count.detach()) if use_count else None)
        return self.partition

    def scored_groups(self) -> list[tuple[list[int], float]]:
        a = self.adjacency.detach().cpu().numpy()
        parts = self.partition if self.partition is not None else self.extract()
        return [(g, group_confidence(a, g)) for g in parts]


class GroupHead(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.num_dist = 2 if cfg.coord_dim == 2 else 1
        self.embed_proj = nn.Linear(cfg.enc_dim, EMBED_PROJ_DIM)
        self.pair_mlp = mlp(GROUP_PAIR_SIZES, EMBED_PROJ_DIM + self.num_dist)
        self.count_embed = mlp((8, 16), EMBED_PROJ_DIM)
        self.count_dist = mlp((8, 16), 1)
        self.count_out = mlp((16, 8, 1), 32)

    def forward(self, pooled: torch.Tensor, scene: Scene) -> GroupPrediction:
        """Soft adjacency and group count for the non-padded persons of one scene."""
        feats = pairwise_features(pooled, scene, self.embed_proj)
        emb, dist = feats[..., :EMBED_PROJ_DIM], torch.log1p(feats[..., EMBED_PROJ_DIM:])
        x = torch.cat([emb, dist], dim=-1)
        logits = self.pair_mlp(x)[..., 0]
        a = torch.sigmoid(logits)
        a = (a + a.T) / 2
        n = a.shape[0]
        eye = torch.eye(n, dtype=torch.bool)
        a = torch.where(eye, torch.ones_like(a), a)

        if n > 1:
            iu = torch.triu_indices(n, n, offset=1)
            e_branch = F.relu(self.count_embed(emb[iu[0], iu[1]])).mean(dim=0)
            d_branch = F.relu(self.count_dist(dist[iu[0], iu[1], -1:])).mean(dim=0)
        else:
            e_branch = F.relu(self.count_embed(emb.new_zeros(1, EMBED_PROJ_DIM))).mean(dim=0)
            d_branch = F.relu(self.count_dist(dist.new_zeros(1, 1))).mean(dim=0)
        # bounded to [0, N]: a scene cannot hold more groups than persons
        count = n * torch.sigmoid(self.count_out(torch.cat([e_branch, d_branch]))[0])
        return GroupPrediction(adjacency=a, count=count)


# --------------------------------------------------------------------------- actions


@dataclass
class ActionPrediction:
    pose_logits: torch.Tensor  # [N, P]
    interaction_logits: torch.Tensor  # [N, I]
    threshold: float = INTERACTION_THRESHOLD

    @property
    def pose_probs(self) -> torch.Tensor:
        return self.pose_logits.softmax(dim=-1)

    @property
    def interaction_probs(self) -> torch.Tensor:
        return torch.sigmoid(self.interaction_logits)

    def labels(self) -> tuple[np.ndarray, np.ndarray]:
        """Arg-max pose class and accepted interactions (probability >= threshold)."""
        pose = self.pose_logits.argmax(dim=-1).cpu().numpy()
        inter = (self.interaction_probs >= self.threshold).cpu().numpy()
        return pose, inter


class ActionHead(nn.Module):
    def __init__(self, cfg: ModelConfig, num_pose: int = 10, num_interactions: int = 14, hidden=(256, 64)):
        super().__init__()
        self.num_pose = num_pose
        self.num_interactions = num_interactions
        self.pose = mlp((*hidden, num_pose), cfg.enc_dim)
        self.interaction = mlp((*hidden, num_interactions), cfg.enc_dim)

    def forward(self, pooled: torch.Tensor) -> ActionPrediction:
        return ActionPrediction(pose_logits=self.pose(pooled), interaction_logits=self.interaction(pooled))


def action_loss(pred: ActionPrediction, pose_gt, interaction_gt, weights: tuple[float, float] = (1.0, 1.0)):
    """``w1 * CE(pose) + w2 * mean BCE(interactions)``."""
    pose_gt = torch.as_tensor(np.asarray(pose_gt), dtype=torch.long)
    inter_gt = torch.as_tensor(np.asarray(interaction_gt), dtype=pred.interaction_logits.dtype)
    num_pose = pred.pose_logits.shape[-1]
    if pose_gt.numel() and (int(pose_gt.min()) < 0 or int(pose_gt.max()) >= num_pose):
        raise ValueError(f"pose label out of range [0, {num_pose})")
    if inter_gt.shape != pred.interaction_logits.shape:
        raise ValueError(
            f"interaction labels shape {tuple(inter_gt.shape)} != {tuple(pred.interaction_logits.shape)}"
        )
    w1, w2 = weights
    ce = F.cross_entropy(pred.pose_logits, pose_gt)
    bce = F.binary_cross_entropy_with_logits(pred.interaction_logits, inter_gt)
    return w1 * ce + w2 * bce


# --------------------------------------------------------------------------- model


def build_head(task: str, cfg: ModelConfig, **kwargs) -> nn.Module:
    if task == "forecast":
        return ForecastHead(cfg, kwargs.get("horizon", 14))
    if task == "group":
        return GroupHead(cfg)
    if task == "action":
        return ActionHead(cfg, kwargs.get("num_pose", 10), kwargs.get("num_interactions", 14))
    raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")


class TaskModel(nn.Module):
    """Encoder plus exactly one task head (stored under ``heads.<task>``)."""

    def __init__(self, cfg: ModelConfig, task: str, seed: int = 0, **head_kwargs):
        super().__init__()
        self.cfg = cfg
        self.task = task
        self.head_kwargs = dict(head_kwargs)
        self.encoder = Encoder(cfg)
        self.heads = nn.ModuleDict({task: build_head(task, cfg, **head_kwargs)})
        gen = torch.Generator().manual_seed(seed)
        init_weights(self.encoder, cfg.init_std, gen)
        if task == "forecast":
            init_weights(self.heads, cfg.init_std, gen)
        else:
            init_mlp(self.heads, gen)

    @property
    def head(self) -> nn.Module:
        return self.heads[self.task]

    def load_encoder(self, state: dict) -> None:
        """Copy ``encoder.*`` entries of a checkpoint state dict; other keys are ignored."""
        enc = {k[len("encoder."):]: v for k, v in state.items() if k.startswith("encoder.")}
        self.encoder.load_state_dict(enc, strict=True)

    def encode_scenes(self, prepared: Sequence[PreparedScene]) -> torch.Tensor:
        """Normed per-layer latents of all tokens ``[L + 1, B, K, enc]``."""
        dtype = next(self.parameters()).dtype
        tokens = TokenTensors.stack([p.tokens for p in prepared], dtype=dtype)
        return self.encoder.norm(self.encoder(tokens))

    def prepare(self, scenes: Sequence[Scene]) -> list[PreparedScene]:
        return [prepare_scene(s) for s in pad_batch(scenes, self.cfg.num_frames)]


def person_latents(latents: torch.Tensor, num_joints: int) -> torch.Tensor:
    """Mean over each person's joint tokens: ``[B, K, D]`` -> ``[B, N, D]``."""
    b, k, d = latents.shape
    return latents.reshape(b, k // num_joints, num_joints, d).mean(dim=2)


def forecast(model: TaskModel, history: Sequence[Scene]) -> list[ForecastOutput]:
    """Per-layer future trajectories for each history scene (padded persons trimmed)."""
    prepared = model.prepare(history)
    layers = model.encode_scenes(prepared)[1:]
    offsets = torch.stack([torch.as_tensor(p.tokens.global_offset, dtype=layers.dtype) for p in prepared])
    j = prepared[0].scene.num_joints
    out = model.head(layers, offsets, j)
    return [
        ForecastOutput(layers=out[:, i, : s.num_persons, : s.num_joints]) for i, s in enumerate(history)
    ]


def predict_groups(model: TaskModel, scenes: Sequence[Scene]) -> list[GroupPrediction]:
    raw = pad_batch(scenes, model.cfg.num_frames)
    prepared = [prepare_scene(s) for s in raw]
    final = model.encode_scenes(prepared)[-1]
    pooled = person_latents(final, prepared[0].scene.num_joints)
    preds = []
    for i, s in enumerate(raw):
        # distance features need world coordinates, not the per-person centred copy
        keep = np.flatnonzero(~s.padded)
        sub = _subset(s, keep)
        preds.append(model.head(pooled[i, keep], sub))
    return preds


def predict_actions(model: TaskModel, scenes: Sequence[Scene]) -> list[ActionPrediction]:
    prepared = model.prepare(scenes)
    final = model.encode_scenes(prepared)[-1]
    pooled = person_latents(final, prepared[0].scene.num_joints)
    return [model.head(pooled[i, np.flatnonzero(~s.padded)]) for i, s in enumerate(scenes)]


def _subset(scene: Scene, keep: np.ndarray) -> Scene:
    if len(keep) == scene.num_persons:
        return scene
    return Scene(
        trajectories=scene.trajectories[keep],
        visibility=scene.visibility[keep],
        pelvis_index=scene.pelvis_index,
        fps=scene.fps,
        person_ids=tuple(scene.person_ids[i] for i in keep),
    )


def group_targets(scene: Scene) -> list[list[int]]:
    return scene.real_groups()


def task_loss(model: TaskModel, scenes: Sequence[Scene], weights: dict, futures: Sequence[Scene] | None = None):
    """Mean task loss over a batch of labeled scenes."""
    task = model.task
    if task == "forecast":
        if futures is None:
            raise ValueError("forecast loss needs future windows")
        outs = forecast(model, scenes)
        losses = [
            forecast_loss(o, f.trajectories, f.visibility, weights.get("forecast_layers"))
            for o, f in zip(outs, futures)
        ]
    elif task == "group":
        preds = predict_groups(model, scenes)
        w = tuple(weights.get("group", (1.0, 1.0, 1.0)))
        losses = [grouping_loss(p.adjacency, p.count, s.real_groups(), w) for p, s in zip(preds, scenes)]
    elif task == "action":
        preds = predict_actions(model, scenes)
        w = tuple(weights.get("action", (1.0, 1.0)))
        losses = [
            action_loss(p, s.pose_actions[~s.padded], s.interaction_actions[~s.padded], w)
            for p, s in zip(preds, scenes)
        ]
    else:
        raise ValueError(f"unknown task {task!r}")
    return torch.stack(losses).mean()
