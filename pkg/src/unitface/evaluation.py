"""Lip vertex error, A/B preference aggregation, latency and word error rate.

Floating-point order is fixed so results are reproducible by a plain scalar
loop: blendshape deltas are accumulated in coefficient order, distances are
``sqrt(dx*dx + dy*dy + dz*dz)``, and means are left-to-right sums divided by
the count.
"""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .face import NUM_BLENDSHAPES
from .numerics import make_rng

LABELS = ("A", "B", "TIE")


class MetricError(ValueError):
    pass


# --------------------------------------------------------------------------
# rig and LVE
# --------------------------------------------------------------------------

@dataclass
class Rig:
    base: np.ndarray          # (N_v, 3)
    deltas: np.ndarray        # (52, N_v, 3)
    lip_indices: tuple[int, ...]

    def __post_init__(self):
        self.base = np.asarray(self.base, dtype=np.float64)
        self.deltas = np.asarray(self.deltas, dtype=np.float64)
        self.lip_indices = tuple(int(i) for i in self.lip_indices)
        if self.base.ndim != 2 or self.base.shape[1] != 3:
            raise MetricError(f"rig base must be N_v×3, got {self.base.shape}")
        if self.deltas.shape != (NUM_BLENDSHAPES, *self.base.shape):
            raise MetricError(f"rig needs {NUM_BLENDSHAPES} deltas of shape {self.base.shape}, "
                              f"got {self.deltas.shape}")
        if not self.lip_indices:
            raise MetricError("rig has no lip vertices")
        n = self.base.shape[0]
        for i in self.lip_indices:
            if not 0 <= i < n:
                raise MetricError(f"lip vertex {i} outside [0, {n})")

    @property
    def num_vertices(self) -> int:
        return self.base.shape[0]


def default_rig(seed: int = 0, num_vertices: int = 16, num_lip: int = 4) -> Rig:
    """Seeded stand-in rig: random base mesh, deltas of roughly unit length."""
    rng = make_rng(seed, 31)
    base = rng.normal(size=(num_vertices, 3))
    deltas = rng.normal(scale=1.0 / math.sqrt(3.0), size=(NUM_BLENDSHAPES, num_vertices, 3))
    lips = np.sort(rng.choice(num_vertices, size=num_lip, replace=False))
    return Rig(base, deltas, tuple(int(i) for i in lips))


def _frame(frame) -> np.ndarray:
    y = np.asarray(frame, dtype=np.float64).reshape(-1)
    if y.size != NUM_BLENDSHAPES:
        raise MetricError(f"expected {NUM_BLENDSHAPES} coefficients, got {y.size}")
    return y


def expand_vertices(rig: Rig, frame) -> np.ndarray:
    """``V0 + Σ_k y_k Δ_k`` with the sum taken in coefficient order."""
    y = _frame(frame)
    v = rig.base.copy()
    for k in range(NUM_BLENDSHAPES):
        v = v + y[k] * rig.deltas[k]
    return v


def _coeffs(clip) -> np.ndarray:
    c = np.asarray(getattr(clip, "coeffs", clip), dtype=np.float64)
    if c.ndim != 2 or c.shape[1] != NUM_BLENDSHAPES or c.shape[0] < 1:
        raise MetricError(f"clip must be T×{NUM_BLENDSHAPES} with T >= 1, got {c.shape}")
    return c


def _frame_error(rig: Rig, yp: np.ndarray, yr: np.ndarray) -> float:
    lips = list(rig.lip_indices)
    d = expand_vertices(rig, yp)[lips] - expand_vertices(rig, yr)[lips]
    dist = np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2])
    return float(dist.max())


def clip_lve(pred, ref, rig: Rig) -> float:
    """Mean over the common frames of the max lip-vertex distance."""
    p, r = _coeffs(pred), _coeffs(ref)
    T = min(p.shape[0], r.shape[0])
    total = 0.0
    for t in range(T):
        total += _frame_error(rig, p[t], r[t])
    return total / T


def lve(pred: Sequence, ref: Sequence, rig: Rig) -> float:
    """Lip vertex error averaged over frames, then over samples.

    Clips of different length are compared over their common prefix.
    """
    if len(pred) == 0:
        raise MetricError("no samples to score")
    if len(pred) != len(ref):
        raise MetricError(f"{len(pred)} predictions but {len(ref)} references")
    total = 0.0
    for p, r in zip(pred, ref):
        total += clip_lve(p, r, rig)
    return total / len(pred)


# --------------------------------------------------------------------------
# A/B preference
# --------------------------------------------------------------------------

@dataclass
class RatingSheet:
    pairs: list[tuple[str, ...]]

    def __post_init__(self):
        self.pairs = [tuple(normalize_label(x) for x in p) for p in self.pairs]
        if not self.pairs:
            raise MetricError("rating sheet has no pairs")
        R = len(self.pairs[0])
        if R < 1:
            raise MetricError("rating sheet has no raters")
        for i, p in enumerate(self.pairs):
            if len(p) != R:
                raise MetricError(f"pair {i} has {len(p)} ratings, expected {R}")

    @property
    def raters(self) -> int:
        return len(self.pairs[0])

    @classmethod
    def from_counts(cls, counts: Sequence[tuple[int, int, int]]) -> "RatingSheet":
        """One pair per ``(n_A, n_B, n_Tie)`` triple."""
        return cls([("A",) * a + ("B",) * b + ("TIE",) * t for a, b, t in counts])


def normalize_label(x: str) -> str:
    s = str(x).strip().upper()
    if s not in LABELS:
        raise MetricError(f"rating label must be one of A, B, TIE; got {x!r}")
    return s


def majority(labels: Sequence[str]) -> str:
    """Plurality label; a tie between top labels counts as TIE."""
    counts = Counter(labels)
    top = max(counts.values())
    winners = [lab for lab in LABELS if counts.get(lab, 0) == top]
    return winners[0] if len(winners) == 1 else "TIE"


@dataclass(frozen=True)
class ABResult:
    win: float
    tie: float
    overall: float
    mmf: float


def ab_aggregate(sheet: RatingSheet) -> ABResult:
    n = len(sheet.pairs)
    R = sheet.raters
    majorities = [majority(p) for p in sheet.pairs]
    wins = sum(1 for m in majorities if m == "A")
    ties = sum(1 for m in majorities if m == "TIE")
    matches = sum(sum(1 for x in p if x == m) for p, m in zip(sheet.pairs, majorities))
    win = 100.0 * wins / n
    tie = 100.0 * ties / n
    return ABResult(win, tie, win + 0.5 * tie, 100.0 * matches / (R * n))


# --------------------------------------------------------------------------
# latency
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LatencyRecord:
    t_e2e: float
    t_speech: float
    t_first_unit: float
    t_face_extra: float

    def __post_init__(self):
        for name in ("t_e2e", "t_speech", "t_first_unit", "t_face_extra"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise MetricError(f"{name} must be a finite non-negative time, got {v}")
        if self.t_first_unit > self.t_e2e:
            raise MetricError("time to first unit exceeds end-to-end time")


@dataclass(frozen=True)
class LatencyReport:
    rtf: float
    ttft: float
    face_latency: float
    excluded: int


def latency_metrics(records: Sequence[LatencyRecord]) -> LatencyReport:
    """Mean per-record RTF, mean time to first unit, mean extra face time.

    Records with zero speech duration have no RTF; they are left out of that
    mean (with a warning) but still count towards the other two.
    """
    if not records:
        raise MetricError("no latency records")
    rtf_sum, rtf_n, excluded = 0.0, 0, 0
    for r in records:
        if r.t_speech == 0:
            excluded += 1
            continue
        rtf_sum += r.t_e2e / r.t_speech
        rtf_n += 1
    if excluded:
        warnings.warn(f"{excluded} latency record(s) with zero speech duration left out of RTF",
                      RuntimeWarning, stacklevel=2)
    ttft = sum(r.t_first_unit for r in records) / len(records)
    face = sum(r.t_face_extra for r in records) / len(records)
    return LatencyReport(rtf_sum / rtf_n if rtf_n else math.nan, ttft, face, excluded)


# --------------------------------------------------------------------------
# WER
# --------------------------------------------------------------------------

def _words(x) -> list[str]:
    return x.split() if isinstance(x, str) else list(x)


def edit_distance(ref: Sequence, hyp: Sequence) -> int:
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def wer(reference, hypothesis) -> float:
    """Word-level Levenshtein distance over the reference length.

    Strings are split on whitespace; other sequences are used as given.
    """
    ref, hyp = _words(reference), _words(hypothesis)
    if not ref:
        raise MetricError("reference is empty")
    return edit_distance(ref, hyp) / len(ref)
