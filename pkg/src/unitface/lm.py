"""Causal transformer language model over a continuous conditioning prefix.

Sequence layout: ``[prefix rows; emb(y_1) ... emb(y_T)]``. The last prefix row
predicts y_1, the row of y_j predicts y_{j+1}, and the row of y_T predicts the
end token. Hidden states returned for a sequence are the rows of y_1..y_T.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numerics as nx
from .layers import Module, TransformerStack


@dataclass
class Decoded:
    ids: list[int]
    hidden: np.ndarray
    probs: list[np.ndarray] = field(default_factory=list)


class PrefixLM(Module):
    def __init__(self, rng: np.random.Generator, vocab_in: int, vocab_out: int, d: int,
                 heads: int, layers: int, end_id: int):
        self.vocab_in = vocab_in
        self.vocab_out = vocab_out
        self.end_id = end_id
        self.emb = nx.normal_param(rng, (vocab_in, d), 1.0)
        self.body = TransformerStack(rng, d, heads, layers, causal=True, rope=True)
        self.head = nx.normal_param(rng, (d, vocab_out), 0.02)

    @property
    def d(self) -> int:
        return self.emb.shape[1]

    def _sequence(self, prefix: np.ndarray, ids: Sequence[int]) -> np.ndarray:
        prefix = np.asarray(prefix, dtype=nx.DTYPE)
        if prefix.ndim != 2 or prefix.shape[1] != self.d:
            raise nx.ShapeError(f"prefix shape {prefix.shape} does not match model width {self.d}")
        if prefix.shape[0] < 1:
            raise nx.ShapeError("conditioning prefix is empty")
        if len(ids) == 0:
            return prefix
        return np.concatenate([prefix, nx.embed(self.emb, ids)], axis=0)

    def hidden(self, prefix, ids: Sequence[int]) -> np.ndarray:
        """Final-layer states for every row of ``[prefix; emb(ids)]``."""
        return self.body.forward(self._sequence(prefix, ids))[0]

    def loss_fwd(self, prefix, targets: Sequence[int]):
        """Teacher-forced mean NLL of ``targets`` plus the end token.

        Returns ``(loss, target_hidden, state)``; pass ``state`` to :meth:`loss_bwd`.
        """
        targets = [int(t) for t in targets]
        x = self._sequence(prefix, targets)
        h, cache = self.body.forward(x)
        P = x.shape[0] - len(targets)
        rows = h[P - 1:]
        logits = rows @ self.head.value
        loss, dlogits = nx.cross_entropy_fwd_bwd(logits, targets + [self.end_id])
        return loss, h[P:], (cache, targets, P, rows, dlogits, h.shape)

    def loss_bwd(self, state, scale: float = 1.0, dhidden: np.ndarray | None = None) -> np.ndarray:
        """Backprop ``scale * loss`` (plus optional hidden-state gradient); returns d prefix."""
        cache, targets, P, rows, dlogits, hshape = state
        dlogits = dlogits * scale
        if self.head.trainable:
            self.head.grad += rows.T @ dlogits
        dh = np.zeros(hshape)
        dh[P - 1:] += dlogits @ self.head.value.T
        if dhidden is not None:
            dh[P:] += dhidden
        dx = self.body.backward(dh, cache)
        if targets:
            nx.embed_bwd(dx[P:], targets, self.emb)
        return dx[:P]

    def decode(self, prefix, max_new: int, *, seed: int | None = None,
               forbid_end_first: bool = False) -> Decoded:
        """Greedy (``seed=None``) or seeded ancestral sampling."""
        if max_new < 1:
            raise ValueError("max_new must be >= 1")
        rng = None if seed is None else nx.make_rng(seed)
        P = np.asarray(prefix).shape[0]
        ids: list[int] = []
        probs: list[np.ndarray] = []
        h = self.hidden(prefix, ids)
        for step in range(max_new):
            logits = h[-1] @ self.head.value
            if step == 0 and forbid_end_first:
                logits = logits.copy()
                logits[self.end_id] = -np.inf
            p = nx.softmax(logits)
            probs.append(p)
            tok = int(np.argmax(p)) if rng is None else int(rng.choice(len(p), p=p))
            if tok == self.end_id:
                break
            ids.append(tok)
            h = self.hidden(prefix, ids)
        return Decoded(ids, h[P:], probs)
