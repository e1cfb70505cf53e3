"""Token-as-query gated fusion.

The query stream keeps its length and receives a residual update from
cross-attention over the context, scaled element-wise by a sigmoid gate that
is a function of the raw queries alone::

    fuse(Q, C) = Q + (sigmoid(Q W_g + b_g) * Attn(Q, C)) W_o

The gate multiplies each head's attention output before the output
projection, so every head has its own gate values.
"""

from __future__ import annotations

import math

import numpy as np

from . import numerics as nx
from .layers import LayerNorm, Module
from .numerics import ShapeError


class EmptyContextError(ValueError):
    pass


class FusionBlock(Module):
    def __init__(self, rng: np.random.Generator, d: int, heads: int, d_ctx: int | None = None,
                 *, norm: bool = True):
        if d % heads:
            raise ShapeError(f"fusion width {d} not divisible by {heads} heads")
        d_ctx = d if d_ctx is None else d_ctx
        self.heads = heads
        self.d = d
        self.d_ctx = d_ctx
        self.norm = norm
        if norm:
            self.ln_q = LayerNorm(d)
            self.ln_c = LayerNorm(d_ctx)
        self.Wq = nx.normal_param(rng, (d, d), 1.0 / math.sqrt(d))
        self.Wk = nx.normal_param(rng, (d_ctx, d), 1.0 / math.sqrt(d_ctx))
        self.Wv = nx.normal_param(rng, (d_ctx, d), 1.0 / math.sqrt(d_ctx))
        self.Wo = nx.normal_param(rng, (d, d), 1.0 / math.sqrt(d))
        # gates start at sigmoid(0) = 0.5
        self.Wg = nx.zeros_param((d, d))
        self.bg = nx.zeros_param(d)

    @property
    def d_head(self) -> int:
        return self.d // self.heads

    def _check(self, Q, C=None):
        Q = np.asarray(Q, dtype=nx.DTYPE)
        if Q.ndim != 2 or Q.shape[1] != self.d:
            raise ShapeError(f"fusion: query shape {Q.shape} does not match block width {self.d}")
        if Q.shape[0] < 1:
            raise ShapeError("fusion: query sequence is empty")
        if C is None:
            return Q
        C = np.asarray(C, dtype=nx.DTYPE)
        if C.ndim != 2 or C.shape[1] != self.d_ctx:
            raise ShapeError(f"fusion: context shape {C.shape} does not match context width {self.d_ctx}")
        if C.shape[0] < 1:
            raise EmptyContextError("fusion: context sequence is empty")
        return Q, C

    def gate_activations(self, Q) -> np.ndarray:
        Q = self._check(Q)
        g = nx.sigmoid(Q @ self.Wg.value + self.bg.value)
        return g.reshape(Q.shape[0], self.heads, self.d_head)

    def forward(self, Q, C):
        Q, C = self._check(Q, C)
        if self.norm:
            qn, cq = self.ln_q.forward(Q)
            cn, cc = self.ln_c.forward(C)
        else:
            qn, cq, cn, cc = Q, None, C, None
        q = nx.split_heads(qn @ self.Wq.value, self.heads)
        k = nx.split_heads(cn @ self.Wk.value, self.heads)
        v = nx.split_heads(cn @ self.Wv.value, self.heads)
        a_h, ca = nx.scaled_dot_attention_fwd(q, k, v)
        a = nx.merge_heads(a_h)
        g = nx.sigmoid(Q @ self.Wg.value + self.bg.value)
        z = g * a
        out = Q + z @ self.Wo.value
        return out, (Q, qn, cn, cq, cc, ca, a, g, z)

    def backward(self, dout, cache):
        """Returns (dQ, dC)."""
        Q, qn, cn, cq, cc, ca, a, g, z = cache
        if self.Wo.trainable:
            self.Wo.grad += z.T @ dout
        dz = dout @ self.Wo.value.T
        dgpre = nx.sigmoid_bwd(dz * a, g)
        da = dz * g
        if self.Wg.trainable:
            self.Wg.grad += Q.T @ dgpre
        if self.bg.trainable:
            self.bg.grad += dgpre.sum(axis=0)
        dq, dk, dv = nx.scaled_dot_attention_bwd(nx.split_heads(da, self.heads), ca)
        dq, dk, dv = nx.merge_heads(dq), nx.merge_heads(dk), nx.merge_heads(dv)
        if self.Wq.trainable:
            self.Wq.grad += qn.T @ dq
        if self.Wk.trainable:
            self.Wk.grad += cn.T @ dk
        if self.Wv.trainable:
            self.Wv.grad += cn.T @ dv
        dqn = nx._maybe_flip("linear", dq @ self.Wq.value.T)
        dcn = nx._maybe_flip("linear", dk @ self.Wk.value.T + dv @ self.Wv.value.T)
        if self.norm:
            dqn = self.ln_q.backward(dqn, cq)
            dcn = self.ln_c.backward(dcn, cc)
        return dout + dgpre @ self.Wg.value.T + dqn, dcn

    def zero_values(self) -> None:
        self.Wv.value[...] = 0.0


class FusionStack(Module):
    """Blocks applied in sequence; the context is shared by every block."""

    def __init__(self, rng: np.random.Generator, d: int, heads: int, depth: int,
                 d_ctx: int | None = None, *, norm: bool = True):
        self.blocks = [FusionBlock(rng, d, heads, d_ctx, norm=norm) for _ in range(depth)]
        self.d = d
        self.d_ctx = d if d_ctx is None else d_ctx

    def forward(self, Q, C):
        caches = []
        for blk in self.blocks:
            Q, c = blk.forward(Q, C)
            caches.append(c)
        return np.array(Q, dtype=nx.DTYPE), (caches, np.shape(C))

    def backward(self, dout, cache):
        caches, c_shape = cache
        dC = np.zeros(c_shape)
        for blk, c in zip(reversed(self.blocks), reversed(caches)):
            dout, dc = blk.backward(dout, c)
            dC = dC + dc
        return dout, dC

    def zero_values(self) -> None:
        for blk in self.blocks:
            blk.zero_values()


def fuse_block(block: FusionBlock, Q, C) -> np.ndarray:
    return block.forward(Q, C)[0]


def fuse_stack(stack: FusionStack, Q, C) -> np.ndarray:
    if not stack.blocks:
        Q = np.asarray(Q, dtype=nx.DTYPE)
        if Q.ndim != 2 or Q.shape[1] != stack.d:
            raise ShapeError(f"fusion: query shape {Q.shape} does not match stack width {stack.d}")
        return Q.copy()
    return stack.forward(Q, C)[0]


def gate_activations(block: FusionBlock, Q) -> np.ndarray:
    return block.gate_activations(Q)
