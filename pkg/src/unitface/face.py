"""Non-autoregressive blendshape decoder driven by speech units."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .fusion import FusionStack
from .layers import Linear, Module, TransformerStack
from .numerics import _maybe_flip
from .positional import PeriodicRopeConfig, periodic_positions, rope_tables, rotate
from .units import UNIT_RATE, AlignmentError, UnitSequence

FPS = 25.0
NUM_BLENDSHAPES = 52

# Live Link Face / ARFaceAnchor ordering
ARKIT_NAMES = (
    "eyeBlinkLeft", "eyeLookDownLeft", "eyeLookInLeft", "eyeLookOutLeft", "eyeLookUpLeft",
    "eyeSquintLeft", "eyeWideLeft",
    "eyeBlinkRight", "eyeLookDownRight", "eyeLookInRight", "eyeLookOutRight", "eyeLookUpRight",
    "eyeSquintRight", "eyeWideRight",
    "jawForward", "jawLeft", "jawRight", "jawOpen",
    "mouthClose", "mouthFunnel", "mouthPucker", "mouthLeft", "mouthRight",
    "mouthSmileLeft", "mouthSmileRight", "mouthFrownLeft", "mouthFrownRight",
    "mouthDimpleLeft", "mouthDimpleRight", "mouthStretchLeft", "mouthStretchRight",
    "mouthRollLower", "mouthRollUpper", "mouthShrugLower", "mouthShrugUpper",
    "mouthPressLeft", "mouthPressRight", "mouthLowerDownLeft", "mouthLowerDownRight",
    "mouthUpperUpLeft", "mouthUpperUpRight",
    "browDownLeft", "browDownRight", "browInnerUp", "browOuterUpLeft", "browOuterUpRight",
    "cheekPuff", "cheekSquintLeft", "cheekSquintRight",
    "noseSneerLeft", "noseSneerRight", "tongueOut",
)
assert len(ARKIT_NAMES) == NUM_BLENDSHAPES


@dataclass
class BlendshapeClip:
    coeffs: np.ndarray
    fps: float = FPS

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=nx.DTYPE)
        if self.coeffs.ndim != 2 or self.coeffs.shape[1] != NUM_BLENDSHAPES or self.coeffs.shape[0] < 1:
            raise nx.ShapeError(f"clip must be T×{NUM_BLENDSHAPES} with T >= 1, got {self.coeffs.shape}")
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")

    @property
    def frames(self) -> int:
        return self.coeffs.shape[0]


def frame_count(T_u: int, unit_rate: float = UNIT_RATE, fps: float = FPS) -> int:
    """round(T_u * fps / unit_rate) with halves rounded up, at least 1."""
    if unit_rate <= 0 or fps <= 0:
        raise ValueError(f"rates must be positive (unit_rate={unit_rate}, fps={fps})")
    if T_u < 1:
        raise ValueError("T_u must be >= 1")
    return max(1, math.floor(T_u * fps / unit_rate + 0.5))


def _resample_grid(T_u: int, T_y: int):
    if T_y < 1:
        raise ValueError(f"target length must be >= 1, got {T_y}")
    if T_u < 1:
        raise ValueError("source sequence is empty")
    if T_u == 1 or T_y == 1:
        i0 = np.zeros(T_y, dtype=np.int64)
        return i0, i0, np.zeros(T_y)
    src = np.arange(T_y) * (T_u - 1) / (T_y - 1)
    i0 = np.minimum(np.floor(src).astype(np.int64), T_u - 2)
    return i0, i0 + 1, src - i0


def resample(E: np.ndarray, T_y: int) -> np.ndarray:
    """Endpoint-aligned linear interpolation of rows to length ``T_y``."""
    E = np.asarray(E, dtype=nx.DTYPE)
    i0, i1, w = _resample_grid(E.shape[0], T_y)
    w = w[:, None]
    return (1.0 - w) * E[i0] + w * E[i1]


def resample_bwd(dout: np.ndarray, T_u: int) -> np.ndarray:
    i0, i1, w = _resample_grid(T_u, dout.shape[0])
    dE = np.zeros((T_u, dout.shape[1]))
    np.add.at(dE, i0, (1.0 - w)[:, None] * dout)
    np.add.at(dE, i1, w[:, None] * dout)
    return _maybe_flip("resample", dE)


class FaceDecoder(Module):
    def __init__(self, rng: np.random.Generator, vocab_units: int, d_ctx: int, d: int, heads: int,
                 fusion_depth: int = 2, encoder_layers: int = 6,
                 rope: PeriodicRopeConfig = PeriodicRopeConfig(),
                 unit_rate: float = UNIT_RATE, fps: float = FPS):
        if d % 2:
            raise nx.ShapeError(f"face decoder width must be even for rotary encoding, got {d}")
        self.rope_cfg = rope
        self.unit_rate = unit_rate
        self.fps = fps
        self.unit_emb = nx.normal_param(rng, (vocab_units, d), 1.0)
        self.ctx_proj = Linear(rng, d_ctx, d)
        self.fusion = FusionStack(rng, d, heads, fusion_depth)
        self.encoder = TransformerStack(rng, d, heads, encoder_layers, causal=False, rope=False)
        self.head = Linear(rng, d, NUM_BLENDSHAPES, std=0.02)

    @property
    def vocab_units(self) -> int:
        return self.unit_emb.shape[0]

    def frames_for(self, T_u: int) -> int:
        return frame_count(T_u, self.unit_rate, self.fps)

    def hidden_fwd(self, units, gen_hidden: np.ndarray, T_y: int | None = None):
        units = [int(u) for u in units]
        gen_hidden = np.asarray(gen_hidden, dtype=nx.DTYPE)
        if len(units) < 1:
            raise ValueError("unit sequence is empty")
        if gen_hidden.ndim != 2 or gen_hidden.shape[0] != len(units):
            raise AlignmentError(f"{len(units)} units but generator hidden has shape {gen_hidden.shape}")
        T_y = self.frames_for(len(units)) if T_y is None else T_y
        E = nx.embed(self.unit_emb, units)
        Qy = resample(E, T_y)
        S, cs = self.ctx_proj.forward(gen_hidden)
        Hf, cf = self.fusion.forward(Qy, S)
        return Hf, (units, cs, cf)

    def hidden_bwd(self, dHf: np.ndarray, cache) -> np.ndarray:
        units, cs, cf = cache
        dQy, dS = self.fusion.backward(dHf, cf)
        nx.embed_bwd(resample_bwd(dQy, len(units)), units, self.unit_emb)
        return self.ctx_proj.backward(dS, cs)

    def forward(self, units, gen_hidden: np.ndarray, T_y: int | None = None):
        Hf, ch = self.hidden_fwd(units, gen_hidden, T_y)
        tables = rope_tables(periodic_positions(Hf.shape[0], self.rope_cfg), Hf.shape[1], self.rope_cfg.base)
        R = rotate(Hf, *tables)
        Z, ce = self.encoder.forward(R)
        logits, chd = self.head.forward(Z)
        y = nx.sigmoid(logits)
        return y, (ch, tables, ce, chd, y)

    def backward(self, dy: np.ndarray, cache) -> np.ndarray:
        """Returns the gradient w.r.t. the generator hidden states."""
        ch, tables, ce, chd, y = cache
        dZ = self.head.backward(nx.sigmoid_bwd(dy, y), chd)
        dR = self.encoder.backward(dZ, ce)
        dHf = _maybe_flip("rope", rotate(dR, *tables, inverse=True))
        return self.hidden_bwd(dHf, ch)


def face_hidden(units: UnitSequence, gen_hidden: np.ndarray, params: FaceDecoder) -> np.ndarray:
    return params.hidden_fwd(units.units, gen_hidden)[0]


def decode_face(units: UnitSequence, gen_hidden: np.ndarray, params: FaceDecoder,
                fps: float | None = None) -> BlendshapeClip:
    fps = params.fps if fps is None else fps
    T_y = frame_count(len(units), units.unit_rate, fps)
    return BlendshapeClip(params.forward(units.units, gen_hidden, T_y)[0], fps)

