"""Discrete speech-unit generator conditioned on fused response tokens."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx
from .fusion import FusionStack
from .layers import Module
from .lm import PrefixLM
from .semantic import TokenSequence

UNIT_RATE = 12.5


class AlignmentError(ValueError):
    pass


@dataclass
class UnitSequence:
    units: tuple[int, ...]
    unit_rate: float = UNIT_RATE

    def __post_init__(self):
        self.units = tuple(int(u) for u in self.units)
        if not self.unit_rate > 0:
            raise ValueError(f"unit_rate must be positive, got {self.unit_rate}")

    def __len__(self) -> int:
        return len(self.units)

    def check_vocab(self, vocab: int) -> None:
        for u in self.units:
            if not 0 <= u < vocab:
                raise IndexError(f"unit id {u} outside [0, {vocab})")


@dataclass
class GeneratorTrace:
    units: UnitSequence
    hidden: np.ndarray


class UnitGenerator(Module):
    """Text embedding + gated fusion against reasoner states, then a prefix LM over units.

    Unit output vocabulary is ``vocab_units + 1``; the extra id is end-of-units.
    """

    def __init__(self, rng: np.random.Generator, vocab_text: int, vocab_units: int, d_ctx: int,
                 d: int, heads: int, layers: int, fusion_depth: int = 2):
        self.vocab_units = vocab_units
        self.text_emb = nx.normal_param(rng, (vocab_text, d), 1.0)
        self.fusion = FusionStack(rng, d, heads, fusion_depth, d_ctx)
        self.lm = PrefixLM(rng, vocab_units, vocab_units + 1, d, heads, layers, end_id=vocab_units)

    @property
    def end_id(self) -> int:
        return self.vocab_units

    def condition_fwd(self, tokens: Sequence[int], H: np.ndarray):
        tokens = [int(t) for t in tokens]
        H = np.asarray(H, dtype=nx.DTYPE)
        if H.ndim != 2 or H.shape[0] != len(tokens):
            raise AlignmentError(f"{len(tokens)} response tokens but {H.shape[0] if H.ndim else 0} hidden rows")
        Q = nx.embed(self.text_emb, tokens)
        Ht, cache = self.fusion.forward(Q, H)
        return Ht, (tokens, cache)

    def condition_bwd(self, dHt: np.ndarray, cache) -> np.ndarray:
        tokens, fcache = cache
        dQ, dH = self.fusion.backward(dHt, fcache)
        nx.embed_bwd(dQ, tokens, self.text_emb)
        return dH

    def units_fwd(self, Ht: np.ndarray, units: Sequence[int]):
        """Teacher-forced unit NLL; returns (loss, unit hidden rows, state)."""
        units = [int(u) for u in units]
        for u in units:
            if not 0 <= u < self.vocab_units:
                raise IndexError(f"unit id {u} outside [0, {self.vocab_units})")
        return self.lm.loss_fwd(Ht, units)

    def units_bwd(self, state, scale: float = 1.0, dhidden: np.ndarray | None = None) -> np.ndarray:
        return self.lm.loss_bwd(state, scale, dhidden)


def condition(tokens: TokenSequence, H: np.ndarray, gen: UnitGenerator) -> np.ndarray:
    return gen.condition_fwd(tokens.ids, H)[0]


def generate_units(Ht: np.ndarray, gen: UnitGenerator, max_units: int, seed: int | None = None,
                   unit_rate: float = UNIT_RATE) -> GeneratorTrace:
    out = gen.lm.decode(Ht, max_units, seed=seed)
    return GeneratorTrace(UnitSequence(out.ids, unit_rate), out.hidden)


def unit_nll(Ht: np.ndarray, target: UnitSequence, gen: UnitGenerator) -> float:
    if len(target) == 0:
        raise ValueError("target unit sequence is empty")
    return gen.units_fwd(Ht, target.units)[0]
