"""Per-(person, joint) trajectory tokens and tube masking."""
from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .dct import CoefficientBlock
from .scene import CenteredScene


@dataclass(frozen=True)
class TokenBatch:
    """One token per (person, joint); token ``k`` is person ``k // J``, joint ``k % J``.

    ``content`` rows hold the DCT coefficients of all axes concatenated
    axis-major (``coord_dim * T`` values).
    """

    content: np.ndarray  # [K, D*T]
    joint_type_index: np.ndarray  # [K]
    person_index: np.ndarray  # [K]
    global_offset: np.ndarray  # [K, D]
    padded: np.ndarray  # [K] bool, token belongs to a padded person
    coord_dim: int
    num_frames: int

    def __len__(self) -> int:
        return self.content.shape[0]

    def take(self, indices) -> "TokenBatch":
        idx = np.asarray(indices, dtype=np.int64)
        return TokenBatch(
            content=self.content[idx],
            joint_type_index=self.joint_type_index[idx],
            person_index=self.person_index[idx],
            global_offset=self.global_offset[idx],
            padded=self.padded[idx],
            coord_dim=self.coord_dim,
            num_frames=self.num_frames,
        )


@dataclass(frozen=True)
class MaskPlan:
    masked: tuple[int, ...]
    visible: tuple[int, ...]
    ratio: float

    def __post_init__(self):
        object.__setattr__(self, "masked", tuple(int(i) for i in self.masked))
        object.__setattr__(self, "visible", tuple(int(i) for i in self.visible))
        if list(self.masked) != sorted(set(self.masked)) or list(self.visible) != sorted(set(self.visible)):
            raise ValueError("mask plan index lists must be sorted and duplicate-free")
        if set(self.masked) & set(self.visible):
            raise ValueError("masked and visible indices overlap")

    @property
    def size(self) -> int:
        return len(self.masked) + len(self.visible)

    @classmethod
    def unmasked(cls, k: int) -> "MaskPlan":
        return cls(masked=(), visible=tuple(range(k)), ratio=0.0)


def build_tokens(centered: CenteredScene, block: CoefficientBlock) -> TokenBatch:
    scene = centered.scene
    n, j, t, d = scene.trajectories.shape
    if block.coeffs.shape != (n, j, d, t):
        raise ValueError(f"coefficient block shape {block.coeffs.shape} does not match scene {(n, j, d, t)}")
    if centered.global_offsets.shape != (n, d):
        raise ValueError(f"offsets shape {centered.global_offsets.shape} != {(n, d)}")
    k = n * j
    return TokenBatch(
        content=block.coeffs.reshape(k, d * t).copy(),
        joint_type_index=np.tile(np.arange(j), n),
        person_index=np.repeat(np.arange(n), j),
        global_offset=np.repeat(centered.global_offsets, j, axis=0),
        padded=np.repeat(scene.padded, j),
        coord_dim=d,
        num_frames=t,
    )


def mask_count(k: int, ratio: float) -> int:
    """``round(ratio * k)`` with half-up rounding on the decimal value of ``ratio``."""
    value = Decimal(repr(float(ratio))) * k
    return int(value.quantize(Decimal(1), rounding=ROUND_HALF_UP))


def sample_tube_mask(k: int, ratio: float, rng_seed: int) -> MaskPlan:
    """Uniformly random set of whole-trajectory tokens to hide."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"mask ratio must lie in (0, 1), got {ratio}")
    if k < 2:
        raise ValueError(f"need at least 2 tokens to mask, got K={k}")
    m = mask_count(k, ratio)
    if not 1 <= m <= k - 1:
        raise ValueError(f"mask size {m} infeasible for K={k}")
    rng = np.random.default_rng(rng_seed)
    masked = np.sort(rng.choice(k, size=m, replace=False))
    visible = np.setdiff1d(np.arange(k), masked)
    return MaskPlan(masked=tuple(masked.tolist()), visible=tuple(visible.tolist()), ratio=ratio)


def apply_mask(batch: TokenBatch, plan: MaskPlan) -> tuple[TokenBatch, list[int]]:
    """Encoder-input view holding only the visible tokens, plus the masked slots."""
    k = len(batch)
    every = plan.masked + plan.visible
    if any(i < 0 or i >= k for i in every):
        raise ValueError(f"mask plan index out of range for K={k}")
    if len(every) != k:
        raise ValueError(f"mask plan covers {len(every)} of {k} tokens")
    return batch.take(plan.visible), list(plan.masked)
