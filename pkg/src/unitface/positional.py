"""Rotary positional encoding, standard and periodic."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numerics import DTYPE, ShapeError, _maybe_flip

ROPE_BASE = 10_000.0


@dataclass(frozen=True)
class PeriodicRopeConfig:
    period: int = 25
    alpha: float = 1.0
    base: float = ROPE_BASE

    def __post_init__(self):
        if int(self.period) != self.period or self.period < 1:
            raise ValueError(f"period must be a positive integer, got {self.period}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.base > 1:
            raise ValueError(f"base must exceed 1, got {self.base}")


def periodic_position(t: int, cfg: PeriodicRopeConfig) -> float:
    if t < 0:
        raise ValueError("frame index must be non-negative")
    return (t % cfg.period) / cfg.alpha


def periodic_positions(T: int, cfg: PeriodicRopeConfig) -> np.ndarray:
    return (np.arange(T) % cfg.period) / cfg.alpha


def rope_tables(positions: Sequence[float], dim: int, base: float = ROPE_BASE):
    """cos/sin tables of shape (T, dim/2) for the given positions."""
    if dim % 2:
        raise ShapeError(f"rotary encoding needs an even feature size, got {dim}")
    pos = np.asarray(positions, dtype=DTYPE).reshape(-1)
    inv_freq = base ** (-np.arange(0, dim, 2, dtype=DTYPE) / dim)
    ang = pos[:, None] * inv_freq[None, :]
    return np.cos(ang), np.sin(ang)


def rotate(x: np.ndarray, cos: np.ndarray, sin: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Rotate interleaved pairs (x[2i], x[2i+1]) along the last axis.

    ``x`` has shape (..., T, dim); tables have shape (T, dim/2).
    """
    if inverse:
        sin = -sin
    even = x[..., 0::2]
    odd = x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def apply_rope(X: np.ndarray, positions: Sequence[float], base: float = ROPE_BASE) -> np.ndarray:
    X = np.asarray(X, dtype=DTYPE)
    if X.ndim != 2:
        raise ShapeError(f"apply_rope expects T×d, got {X.shape}")
    if len(positions) != X.shape[0]:
        raise ShapeError(f"apply_rope: {len(positions)} positions for {X.shape[0]} rows")
    cos, sin = rope_tables(positions, X.shape[1], base)
    return rotate(X, cos, sin)


def apply_rope_bwd(dY: np.ndarray, positions: Sequence[float], base: float = ROPE_BASE) -> np.ndarray:
    cos, sin = rope_tables(positions, dY.shape[-1], base)
    return _maybe_flip("rope", rotate(dY, cos, sin, inverse=True))
