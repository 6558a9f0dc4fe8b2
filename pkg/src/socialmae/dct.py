"""Orthonormal DCT-II trajectory codec.

The numpy entry points go through ``scipy.fft``; ``dct_matrix`` gives the same
transform as an explicit basis for use inside torch graphs.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft

from .errors import NumericError
from .scene import CenteredScene


@dataclass(frozen=True)
class CoefficientBlock:
    coeffs: np.ndarray  # [N, J, D, T]

    @property
    def length(self) -> int:
        return self.coeffs.shape[-1]


def _check_finite(x: np.ndarray, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ValueError(f"{what} must have at least one sample along the last axis")
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{what} contains non-finite values")
    return x


def dct_forward(series: np.ndarray) -> np.ndarray:
    """Orthonormal DCT-II along the last axis."""
    x = _check_finite(series, "series")
    if x.shape[-1] == 1:
        return x.copy()  # the length-1 transform is the identity; skip scipy's rounding
    return scipy.fft.dct(x, type=2, norm="ortho", axis=-1)


def dct_inverse(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dct_forward` (orthonormal DCT-III)."""
    c = _check_finite(coeffs, "coefficients")
    if c.shape[-1] == 1:
        return c.copy()
    return scipy.fft.idct(c, type=2, norm="ortho", axis=-1)


@lru_cache(maxsize=64)
def _basis(length: int) -> np.ndarray:
    k = np.arange(length)[:, None]
    t = np.arange(length)[None, :]
    m = np.cos(np.pi * (t + 0.5) * k / length) * np.sqrt(2.0 / length)
    m[0] /= np.sqrt(2.0)
    m.setflags(write=False)
    return m


def dct_matrix(length: int) -> np.ndarray:
    """``M[k, t]`` such that ``coeffs = M @ series`` and ``series = M.T @ coeffs``."""
    if length < 1:
        raise ValueError("length must be >= 1")
    return _basis(length)


def encode_scene(centered: CenteredScene) -> CoefficientBlock:
    """DCT of every (person, joint, axis) series over the full padded window."""
    traj = centered.scene.trajectories.transpose(0, 1, 3, 2)
    return CoefficientBlock(coeffs=dct_forward(traj))


def decode_block(block: CoefficientBlock) -> np.ndarray:
    """Back to ``[N, J, T, D]`` trajectories."""
    return dct_inverse(block.coeffs).transpose(0, 1, 3, 2)
