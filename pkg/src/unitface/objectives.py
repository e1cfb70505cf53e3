"""Training losses: masked blendshape regression, velocity consistency, totals.

Each sample's prediction and target may be padded past its valid length;
padding never enters a loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numerics import cross_entropy, cross_entropy_fwd_bwd  # noqa: F401  (re-exported)

LAMBDA_VEL = 0.3


class MaskError(ValueError):
    pass


class LossPropagationError(ArithmeticError):
    pass


@dataclass
class LossWeights:
    lambda_vel: float = LAMBDA_VEL

    def __post_init__(self):
        if self.lambda_vel < 0:
            raise ValueError("lambda_vel must be non-negative")


@dataclass
class FaceBatch:
    predicted: list[np.ndarray]
    target: list[np.ndarray]
    valid_lengths: list[int]

    def __post_init__(self):
        self.predicted = [_coeffs(p) for p in self.predicted]
        self.target = [_coeffs(t) for t in self.target]
        self.valid_lengths = [int(v) for v in self.valid_lengths]
        B = len(self.predicted)
        if B < 1 or len(self.target) != B or len(self.valid_lengths) != B:
            raise ValueError("face batch needs B >= 1 equally sized prediction/target/length lists")
        for i, (p, t, n) in enumerate(zip(self.predicted, self.target, self.valid_lengths)):
            if p.shape[1:] != t.shape[1:]:
                raise MaskError(f"sample {i}: prediction {p.shape} and target {t.shape} differ in width")
            if n < 1 or n > p.shape[0] or n > t.shape[0]:
                raise MaskError(f"sample {i}: valid length {n} exceeds frames (pred {p.shape[0]}, target {t.shape[0]})")

    @classmethod
    def full(cls, predicted, target) -> "FaceBatch":
        target = [_coeffs(t) for t in target]
        return cls(list(predicted), target, [t.shape[0] for t in target])


def _coeffs(x) -> np.ndarray:
    x = getattr(x, "coeffs", x)
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(-1, 1) if x.ndim == 1 else x


def _bs_terms(batch: FaceBatch):
    for p, t, n in zip(batch.predicted, batch.target, batch.valid_lengths):
        yield p[:n] - t[:n], n


def l_bs(batch: FaceBatch) -> float:
    total = 0.0
    for diff, n in _bs_terms(batch):
        total += float((diff * diff).sum()) / n
    return total / len(batch.predicted)


def l_vel(batch: FaceBatch) -> float:
    total = 0.0
    for diff, n in _bs_terms(batch):
        if n < 2:
            continue
        dv = diff[1:] - diff[:-1]
        total += float((dv * dv).sum()) / (n - 1)
    return total / len(batch.predicted)


def l_face(batch: FaceBatch, w: LossWeights = LossWeights()) -> float:
    return l_bs(batch) + w.lambda_vel * l_vel(batch)


def l_face_grads(batch: FaceBatch, w: LossWeights = LossWeights()):
    """Returns (l_bs, l_vel, l_face, per-sample gradients w.r.t. predictions)."""
    B = len(batch.predicted)
    grads = []
    for p, (diff, n) in zip(batch.predicted, _bs_terms(batch)):
        g = np.zeros_like(p)
        g[:n] = 2.0 * diff / (n * B)
        if n >= 2:
            dv = diff[1:] - diff[:-1]
            gv = w.lambda_vel * 2.0 * dv / ((n - 1) * B)
            g[1:n] += gv
            g[:n - 1] -= gv
        grads.append(g)
    bs, vel = l_bs(batch), l_vel(batch)
    return bs, vel, bs + w.lambda_vel * vel, grads


def total_loss(ar_terms: Sequence[tuple[float, float]] | Sequence[float] = (), face: float | None = None) -> float:
    """Weighted sum of autoregressive terms plus the facial term.

    ``ar_terms`` holds ``(value, weight)`` pairs or bare values (weight 1).
    """
    total = 0.0
    for term in ar_terms:
        value, weight = term if isinstance(term, tuple) else (term, 1.0)
        if not math.isfinite(value) or not math.isfinite(weight):
            raise LossPropagationError(f"non-finite autoregressive term {value!r} (weight {weight!r})")
        total += weight * value
    if face is not None:
        if not math.isfinite(face):
            raise LossPropagationError(f"non-finite facial term {face!r}")
        total += face
    return total
