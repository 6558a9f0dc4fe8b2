"""Asymmetric masked autoencoder over trajectory tokens.

The encoder sees only visible tokens; a shallower decoder receives the
projected latents plus one shared learned mask token per hidden slot and
predicts every token's DCT coefficients, which are mapped back to Cartesian
trajectories for the loss. Attention blocks use pre-LayerNorm.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .dct import dct_matrix, encode_scene
from .errors import ConfigError, NumericError, TrainingError
from .scene import CenteredScene, Scene, center_scene, pad_scene
from .tokens import MaskPlan, TokenBatch, build_tokens, sample_tube_mask

LOSS_SCOPES = ("masked_only", "all_tokens")


@dataclass
class ModelConfig:
    enc_layers: int = 6
    enc_heads: int = 8
    enc_dim: int = 1024
    dec_layers: int = 3
    dec_heads: int = 4
    dec_dim: int = 1032
    mask_ratio: float = 0.5
    pretrain_epochs: int = 800
    pretrain_lr: float = 1e-4
    finetune_epochs: int = 256
    finetune_lr: float = 1e-3
    lr_decay_factor: float = 0.1
    lr_decay_at: float = 0.75  # fraction of epochs after which the decay applies
    loss_scope: str = "masked_only"
    pos_dim: int = 8
    coord_dim: int = 3
    num_frames: int = 15
    max_joints: int = 32
    max_persons: int = 32
    mlp_ratio: int = 4
    init_std: float = 0.02

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        ints = ("enc_layers", "enc_heads", "enc_dim", "dec_layers", "dec_heads", "dec_dim",
                "pretrain_epochs", "finetune_epochs", "pos_dim", "num_frames", "max_joints",
                "max_persons", "mlp_ratio")
        for name in ints:
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.enc_dim % self.enc_heads:
            raise ConfigError(f"enc_dim {self.enc_dim} not divisible by enc_heads {self.enc_heads}")
        if self.dec_dim % self.dec_heads:
            raise ConfigError(f"dec_dim {self.dec_dim} not divisible by dec_heads {self.dec_heads}")
        if self.dec_dim <= self.pos_dim:
            raise ConfigError("dec_dim must exceed pos_dim")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ConfigError(f"mask_ratio must lie in (0, 1), got {self.mask_ratio}")
        if not 0.0 < self.lr_decay_factor <= 1.0:
            raise ConfigError("lr_decay_factor must lie in (0, 1]")
        if not 0.0 <= self.lr_decay_at <= 1.0:
            raise ConfigError("lr_decay_at must lie in [0, 1]")
        if self.pretrain_lr < 0 or self.finetune_lr < 0 or self.init_std <= 0:
            raise ConfigError("learning rates must be >= 0 and init_std > 0")
        if self.loss_scope not in LOSS_SCOPES:
            raise ConfigError(f"loss_scope must be one of {LOSS_SCOPES}, got {self.loss_scope!r}")
        if self.coord_dim not in (2, 3):
            raise ConfigError("coord_dim must be 2 or 3")

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        """Desk-scale defaults used by tests and CI runs."""
        base = dict(enc_layers=2, enc_heads=4, enc_dim=64, dec_layers=1, dec_heads=4, dec_dim=40,
                    pretrain_epochs=20, finetune_epochs=20, pretrain_lr=1e-3, finetune_lr=1e-3,
                    max_joints=8, max_persons=8, mlp_ratio=2)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**doc)


def learning_rate(epoch: int, epochs: int, base_lr: float, decay_factor: float, decay_at: float) -> float:
    """Step schedule: ``base_lr`` until ``floor(decay_at * epochs)``, then ``base_lr * decay_factor``."""
    step_epoch = math.floor(decay_at * epochs)
    return base_lr * decay_factor if epoch >= step_epoch else base_lr


# --------------------------------------------------------------------------- building blocks


def init_weights(module: nn.Module, std: float, generator: torch.Generator | None = None) -> None:
    """Truncated-normal weights (two-sigma cut), zero biases, unit LayerNorm gains."""
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Embedding)):
            nn.init.trunc_normal_(m.weight, std=std, a=-2 * std, b=2 * std, generator=generator)
            if getattr(m, "bias", None) is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
    for name, p in module.named_parameters(recurse=False):
        if name == "mask_token":
            nn.init.trunc_normal_(p, std=std, a=-2 * std, b=2 * std, generator=generator)


def init_mlp(module: nn.Module, generator: torch.Generator | None = None) -> None:
    """Fan-in scaled truncated-normal init for ReLU head MLPs, zero biases."""
    for m in module.modules():
        if isinstance(m, nn.Linear):
            std = math.sqrt(2.0 / m.in_features)
            nn.init.trunc_normal_(m.weight, std=std, a=-2 * std, b=2 * std, generator=generator)
            nn.init.zeros_(m.bias)


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, pad: torch.Tensor | None = None) -> torch.Tensor:
        b, k, d = x.shape
        q, key, v = self.qkv(x).reshape(b, k, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        scores = q @ key.transpose(-2, -1) / math.sqrt(d // self.heads)
        if pad is not None:
            scores = scores.masked_fill(pad[:, None, None, :], float("-inf"))
        out = scores.softmax(dim=-1) @ v
        return self.proj(out.transpose(1, 2).reshape(b, k, d))


class Block(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, mlp_ratio * dim), nn.GELU(), nn.Linear(mlp_ratio * dim, dim))

    def forward(self, x: torch.Tensor, pad: torch.Tensor | None = None) -> torch.Tensor:
        x = x + self.attn(self.norm1(x), pad)
        return x + self.mlp(self.norm2(x))


@dataclass
class TokenTensors:
    """Batched token fields ``[B, K, ...]`` built from equally sized TokenBatches."""

    content: torch.Tensor
    joint: torch.Tensor
    person: torch.Tensor
    offset: torch.Tensor
    pad: torch.Tensor

    @classmethod
    def stack(cls, batches: Sequence[TokenBatch], dtype=torch.float32) -> "TokenTensors":
        sizes = {len(b) for b in batches}
        if len(sizes) != 1:
            raise ValueError(f"token batches must share K, got {sorted(sizes)}")
        return cls(
            content=torch.as_tensor(np.stack([b.content for b in batches]), dtype=dtype),
            joint=torch.as_tensor(np.stack([b.joint_type_index for b in batches]), dtype=torch.long),
            person=torch.as_tensor(np.stack([b.person_index for b in batches]), dtype=torch.long),
            offset=torch.as_tensor(np.stack([b.global_offset for b in batches]), dtype=dtype),
            pad=torch.as_tensor(np.stack([b.padded for b in batches]), dtype=torch.bool),
        )

    def gather(self, index: torch.Tensor) -> "TokenTensors":
        """Select tokens ``index[b]`` per batch row."""

        def pick(t: torch.Tensor) -> torch.Tensor:
            idx = index
            if t.dim() == 3:
                idx = index[..., None].expand(-1, -1, t.shape[-1])
            return torch.gather(t, 1, idx)

        return TokenTensors(*(pick(t) for t in (self.content, self.joint, self.person, self.offset, self.pad)))


def attention_pad(pad: torch.Tensor) -> torch.Tensor | None:
    """Key-padding mask; rows where every key is padding attend to all of them instead."""
    if not pad.any():
        return None
    return pad & ~pad.all(dim=1, keepdim=True)


class TokenEmbedding(nn.Module):
    """Content projection plus added joint-type and identity embeddings, fused with
    a concatenated global-position embedding."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.content_proj = nn.Linear(cfg.coord_dim * cfg.num_frames, cfg.enc_dim)
        self.joint_emb = nn.Embedding(cfg.max_joints, cfg.enc_dim)
        self.person_emb = nn.Embedding(cfg.max_persons, cfg.enc_dim)
        self.pos_proj = nn.Linear(cfg.coord_dim, cfg.pos_dim)
        self.fuse = nn.Linear(cfg.enc_dim + cfg.pos_dim, cfg.enc_dim)

    def forward(self, tokens: TokenTensors) -> torch.Tensor:
        if tokens.joint.numel() and int(tokens.joint.max()) >= self.cfg.max_joints:
            raise ValueError(f"joint index exceeds max_joints={self.cfg.max_joints}")
        if tokens.person.numel() and int(tokens.person.max()) >= self.cfg.max_persons:
            raise ValueError(f"person index exceeds max_persons={self.cfg.max_persons}")
        e = self.content_proj(tokens.content) + self.joint_emb(tokens.joint) + self.person_emb(tokens.person)
        g = self.pos_proj(tokens.offset)
        return self.fuse(torch.cat([e, g], dim=-1))


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = TokenEmbedding(cfg)
        self.blocks = nn.ModuleList(Block(cfg.enc_dim, cfg.enc_heads, cfg.mlp_ratio) for _ in range(cfg.enc_layers))
        self.norm = nn.LayerNorm(cfg.enc_dim)

    def forward(self, tokens: TokenTensors) -> torch.Tensor:
        """Per-layer activations ``[L + 1, B, K, enc_dim]`` (embedding first)."""
        if tokens.content.shape[-1] != self.cfg.coord_dim * self.cfg.num_frames:
            raise ValueError(
                f"token content width {tokens.content.shape[-1]} != coord_dim*num_frames "
                f"{self.cfg.coord_dim * self.cfg.num_frames}"
            )
        pad = attention_pad(tokens.pad)
        x = self.embed(tokens)
        layers = [x]
        for i, block in enumerate(self.blocks):
            x = block(x, pad)
            if not torch.isfinite(x).all():
                raise NumericError(f"non-finite activations at encoder layer {i + 1}")
            layers.append(x)
        return torch.stack(layers)


class MAEDecoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        width = cfg.dec_dim - cfg.pos_dim
        self.latent_proj = nn.Linear(cfg.enc_dim, width)
        self.mask_token = nn.Parameter(torch.zeros(cfg.dec_dim))
        self.joint_emb = nn.Embedding(cfg.max_joints, width)
        self.person_emb = nn.Embedding(cfg.max_persons, width)
        self.pos_proj = nn.Linear(cfg.coord_dim, cfg.pos_dim)
        self.blocks = nn.ModuleList(Block(cfg.dec_dim, cfg.dec_heads, cfg.mlp_ratio) for _ in range(cfg.dec_layers))
        self.norm = nn.LayerNorm(cfg.dec_dim)
        self.head = nn.Linear(cfg.dec_dim, cfg.coord_dim * cfg.num_frames)
        self.register_buffer("basis", torch.as_tensor(dct_matrix(cfg.num_frames).copy()), persistent=False)

    def forward(self, latent: torch.Tensor, visible: torch.Tensor, tokens: TokenTensors) -> torch.Tensor:
        """Cartesian reconstruction ``[B, K, coord_dim * T]`` of every token.

        ``latent`` is the normed final encoder layer for the ``visible`` slots.
        """
        b, k = tokens.joint.shape
        cfg = self.cfg
        proj = self.latent_proj(latent)
        proj = torch.cat([proj, proj.new_zeros(*proj.shape[:2], cfg.pos_dim)], dim=-1)
        slots = self.mask_token.to(proj.dtype).expand(b, k, cfg.dec_dim)
        slots = slots.scatter(1, visible[..., None].expand(-1, -1, cfg.dec_dim), proj)
        ident = self.joint_emb(tokens.joint) + self.person_emb(tokens.person)
        slots = slots + torch.cat([ident, self.pos_proj(tokens.offset)], dim=-1)
        pad = attention_pad(tokens.pad)
        for block in self.blocks:
            slots = block(slots, pad)
        coeffs = self.head(self.norm(slots)).reshape(b, k, cfg.coord_dim, cfg.num_frames)
        cart = coeffs @ self.basis.to(coeffs.dtype)
        return cart.reshape(b, k, cfg.coord_dim * cfg.num_frames)


class PretrainModel(nn.Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.mae_decoder = MAEDecoder(cfg)
        gen = torch.Generator().manual_seed(seed)
        init_weights(self.encoder, cfg.init_std, gen)
        init_weights(self.mae_decoder, cfg.init_std, gen)

    def reconstruct(self, tokens: TokenTensors, visible: torch.Tensor) -> torch.Tensor:
        layers = self.encoder(tokens.gather(visible))
        return self.mae_decoder(self.encoder.norm(layers[-1]), visible, tokens)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


# --------------------------------------------------------------------------- data preparation


@dataclass(frozen=True)
class PreparedScene:
    centered: CenteredScene
    tokens: TokenBatch

    @property
    def scene(self) -> Scene:
        return self.centered.scene


def prepare_scene(scene: Scene) -> PreparedScene:
    centered = center_scene(scene)
    return PreparedScene(centered=centered, tokens=build_tokens(centered, encode_scene(centered)))


def pad_batch(scenes: Sequence[Scene], num_frames: int | None = None) -> list[Scene]:
    """Pad every scene to the batch-wide maximum N and J (and T, or ``num_frames``)."""
    n = max(s.num_persons for s in scenes)
    j = max(s.num_joints for s in scenes)
    t = max(s.num_frames for s in scenes) if num_frames is None else num_frames
    return [pad_scene(s, n, j, t) for s in scenes]


def target_and_weights(centered: CenteredScene, dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
    """Cartesian targets and visibility weights laid out like decoder output ``[K, D*T]``."""
    s = centered.scene
    n, j, t, d = s.trajectories.shape
    gt = s.trajectories.transpose(0, 1, 3, 2).reshape(n * j, d * t)
    vis = s.visibility & ~s.padded[:, None, None]
    w = np.broadcast_to(vis[:, :, None, :], (n, j, d, t)).reshape(n * j, d * t)
    return torch.as_tensor(gt.copy(), dtype=dtype), torch.as_tensor(w.astype(np.float64), dtype=dtype)


def scope_weights(weights: torch.Tensor, plan: MaskPlan, scope: str) -> torch.Tensor:
    if scope not in LOSS_SCOPES:
        raise ValueError(f"unknown loss scope {scope!r}")
    if scope == "all_tokens":
        return weights
    keep = torch.zeros(weights.shape[-2], dtype=weights.dtype)
    keep[list(plan.masked)] = 1.0
    return weights * keep[:, None]


def masked_mse(pred: torch.Tensor, target: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    sq = torch.where(weights > 0, (pred - target) ** 2, torch.zeros_like(pred))
    total = weights.sum()
    if total == 0:
        return (pred * 0).sum()
    return (sq * weights).sum() / total


def reconstruction_loss(pred: torch.Tensor, centered: CenteredScene, plan: MaskPlan, scope: str = "masked_only"):
    """Mean squared Cartesian error over visible frames of the in-scope tokens."""
    target, weights = target_and_weights(centered, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {tuple(pred.shape)} != target shape {tuple(target.shape)}")
    return masked_mse(pred, target, scope_weights(weights, plan, scope))


# --------------------------------------------------------------------------- per-scene functional API


@dataclass
class LatentBatch:
    layers: torch.Tensor  # [L + 1, K_visible, enc_dim]
    visible: tuple[int, ...]

    @property
    def num_layers(self) -> int:
        return self.layers.shape[0] - 1


def _dtype(model: nn.Module) -> torch.dtype:
    return next(model.parameters()).dtype


def encode(visible: TokenBatch, model: PretrainModel | nn.Module, indices: Sequence[int] | None = None) -> LatentBatch:
    """Run the encoder over a single scene's visible tokens."""
    if len(visible) < 1:
        raise ValueError("encoder needs at least one visible token")
    encoder = model.encoder if hasattr(model, "encoder") else model
    layers = encoder(TokenTensors.stack([visible], dtype=_dtype(model)))
    idx = tuple(range(len(visible))) if indices is None else tuple(indices)
    return LatentBatch(layers=layers[:, 0], visible=idx)


def decode_reconstruct(latents: LatentBatch, plan: MaskPlan, tokens: TokenBatch, model: PretrainModel) -> torch.Tensor:
    """Reconstruct all ``K`` tokens of one scene in Cartesian space ``[K, D*T]``."""
    if len(latents.visible) != latents.layers.shape[1] or tuple(latents.visible) != plan.visible:
        raise ValueError("latents do not correspond to the mask plan's visible tokens")
    if plan.size != len(tokens):
        raise ValueError(f"mask plan covers {plan.size} tokens, batch has {len(tokens)}")
    full = TokenTensors.stack([tokens], dtype=latents.layers.dtype)
    z = model.encoder.norm(latents.layers[-1])[None]
    visible = torch.as_tensor([plan.visible], dtype=torch.long)
    return model.mae_decoder(z, visible, full)[0]


def mask_seed(seed: int, *path: int) -> int:
    return int(np.random.SeedSequence([seed, *path]).generate_state(1)[0])


def batch_reconstruction_loss(
    model: PretrainModel, prepared: Sequence[PreparedScene], plans: Sequence[MaskPlan], scope: str
) -> torch.Tensor:
    dtype = _dtype(model)
    tokens = TokenTensors.stack([p.tokens for p in prepared], dtype=dtype)
    visible = torch.as_tensor([list(p.visible) for p in plans], dtype=torch.long)
    pred = model.reconstruct(tokens, visible)
    targets, weights = zip(*(target_and_weights(p.centered, dtype) for p in prepared))
    weights = [scope_weights(w, plan, scope) for w, plan in zip(weights, plans)]
    return masked_mse(pred, torch.stack(targets), torch.stack(weights))


def sample_plans(prepared: Sequence[PreparedScene], ratio: float, seed: int, *path: int) -> list[MaskPlan]:
    return [sample_tube_mask(len(p.tokens), ratio, mask_seed(seed, *path, i)) for i, p in enumerate(prepared)]


def pretrain_step(
    model: PretrainModel,
    optimizer: torch.optim.Optimizer,
    scenes: Sequence[Scene],
    seed: int,
    path: Sequence[int] = (),
) -> float:
    """One Adam step on the masked reconstruction loss of a batch of scenes.

    Mask plans are derived from ``(seed, *path, scene index)`` so the step is a
    pure function of parameters, optimizer state and seed.
    """
    cfg = model.cfg
    prepared = [prepare_scene(s) for s in pad_batch(scenes, cfg.num_frames)]
    plans = sample_plans(prepared, cfg.mask_ratio, seed, *path)
    model.train()
    optimizer.zero_grad(set_to_none=True)
    loss = batch_reconstruction_loss(model, prepared, plans, cfg.loss_scope)
    if not torch.isfinite(loss):
        raise TrainingError(f"reconstruction loss diverged: {loss.item()}")
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def make_optimizer(model: nn.Module, lr: float) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=lr)


def set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr

