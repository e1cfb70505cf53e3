"""Speech projector, unified input construction and the causal reasoner.

The real speech encoder is out of reach here; :class:`SpeechFeatures` holds
its output directly. The reasoner is a small causal transformer whose only
downstream contract is (response tokens, last hidden states).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx
from .layers import Linear, Module
from .lm import PrefixLM

# reserved text ids
EOS = 0
TASK_ASR = 1
TASK_TTS = 2
TASK_S2S = 3
TASK_T2T = 4
FIRST_WORD = 8

GROUP = 5  # encoder frames concatenated per projected row


@dataclass
class SpeechFeatures:
    frames: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=nx.DTYPE)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise nx.ShapeError(f"speech features must be T_enc×d_enc with T_enc >= 1, got {self.frames.shape}")
        if not np.isfinite(self.frames).all():
            raise ValueError("speech features contain non-finite values")


@dataclass
class TokenSequence:
    ids: tuple[int, ...]
    role: str = "prompt"

    def __post_init__(self):
        self.ids = tuple(int(i) for i in self.ids)
        if self.role not in ("prompt", "response"):
            raise ValueError(f"role must be 'prompt' or 'response', got {self.role!r}")

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class ReasonerOutput:
    tokens: TokenSequence
    hidden: np.ndarray


class SpeechProjector(Module):
    """Concatenate every 5 frames (zero-padded), then Linear-ReLU-Linear."""

    def __init__(self, rng: np.random.Generator, d_enc: int, d: int, hidden: int | None = None):
        hidden = d if hidden is None else hidden
        self.d_enc = d_enc
        self.fc1 = Linear(rng, GROUP * d_enc, hidden)
        self.fc2 = Linear(rng, hidden, d)

    def group(self, frames: np.ndarray) -> np.ndarray:
        T, d_enc = frames.shape
        if d_enc != self.d_enc:
            raise nx.ShapeError(f"speech features have width {d_enc}, projector expects {self.d_enc}")
        T_s = math.ceil(T / GROUP)
        padded = np.zeros((T_s * GROUP, d_enc))
        padded[:T] = frames
        return padded.reshape(T_s, GROUP * d_enc)

    def forward(self, frames: np.ndarray):
        g = self.group(np.asarray(frames, dtype=nx.DTYPE))
        h, c1 = self.fc1.forward(g)
        a, mask = nx.relu_fwd(h)
        y, c2 = self.fc2.forward(a)
        return y, (c1, mask, c2)

    def backward(self, dy, cache) -> None:
        c1, mask, c2 = cache
        # encoder is frozen; the frame gradient is not needed
        self.fc1.backward(nx.relu_bwd(self.fc2.backward(dy, c2), mask), c1)


class Reasoner(Module):
    def __init__(self, rng: np.random.Generator, vocab: int, d: int, heads: int, layers: int):
        self.lm = PrefixLM(rng, vocab, vocab, d, heads, layers, end_id=EOS)

    @property
    def d(self) -> int:
        return self.lm.d

    @property
    def vocab(self) -> int:
        return self.lm.vocab_in

    def embed(self, ids: Sequence[int]) -> np.ndarray:
        return nx.embed(self.lm.emb, ids)

    def embed_bwd(self, dX: np.ndarray, ids: Sequence[int]) -> None:
        nx.embed_bwd(dX, ids, self.lm.emb)

    def response_fwd(self, X: np.ndarray, response: Sequence[int]):
        """Teacher-forced CE of ``response`` after unified input ``X``; returns (loss, H, state)."""
        return self.lm.loss_fwd(X, response)

    def response_bwd(self, state, scale: float = 1.0, dH: np.ndarray | None = None) -> np.ndarray:
        return self.lm.loss_bwd(state, scale, dH)


def project_speech(features: SpeechFeatures, projector: SpeechProjector) -> np.ndarray:
    return projector.forward(features.frames)[0]


def build_unified_input(x: TokenSequence, s: np.ndarray | None, reasoner: Reasoner) -> np.ndarray:
    """``[Emb(x); X_s]`` row-wise."""
    if len(x) == 0:
        raise ValueError("prompt token sequence is empty")
    X_l = reasoner.embed(x.ids)
    if s is None:
        return X_l
    s = np.asarray(s, dtype=nx.DTYPE)
    if s.ndim != 2 or s.shape[1] != X_l.shape[1]:
        raise nx.ShapeError(f"speech rows {s.shape} do not match embedding width {X_l.shape[1]}")
    return np.concatenate([X_l, s], axis=0)


def reason(X: np.ndarray, reasoner: Reasoner, max_tokens: int, seed: int | None = None) -> ReasonerOutput:
    """Autoregressive response decoding; greedy unless ``seed`` is given.

    The end token is suppressed at the first step so every response has at
    least one token (and thus at least one hidden row to condition on).
    """
    out = reasoner.lm.decode(X, max_tokens, seed=seed, forbid_end_first=True)
    return ReasonerOutput(TokenSequence(out.ids, role="response"), out.hidden)
