"""Transformer building blocks shared by the reasoner, unit generator and face decoder."""

from __future__ import annotations

import math

import numpy as np

from . import numerics as nx
from .numerics import Parameter, _maybe_flip
from .positional import ROPE_BASE, rope_tables, rotate


class Module:
    """Collects Parameters (and nested Modules) from instance attributes."""

    def params(self, prefix: str = "") -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        for name, val in vars(self).items():
            if isinstance(val, Parameter):
                out[prefix + name] = val
            elif isinstance(val, Module):
                out.update(val.params(f"{prefix}{name}."))
            elif isinstance(val, list):
                for i, m in enumerate(val):
                    if isinstance(m, Module):
                        out.update(m.params(f"{prefix}{name}.{i}."))
        return out

    def set_trainable(self, flag: bool) -> None:
        for p in self.params().values():
            p.trainable = flag

    def zero_grad(self) -> None:
        for p in self.params().values():
            p.zero_grad()


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, *, bias: bool = True,
                 std: float | None = None):
        self.W = nx.normal_param(rng, (d_in, d_out), std if std is not None else 1.0 / math.sqrt(d_in))
        self.b = nx.zeros_param(d_out) if bias else None

    def forward(self, x):
        return nx.linear_fwd(x, self.W, self.b)

    def backward(self, dout, cache):
        return nx.linear_bwd(dout, cache, self.W, self.b)


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gamma = nx.ones_param(d)
        self.beta = nx.zeros_param(d)

    def forward(self, x):
        return nx.layer_norm_fwd(x, self.gamma, self.beta)

    def backward(self, dout, cache):
        return nx.layer_norm_bwd(dout, cache, self.gamma, self.beta)


class FeedForward(Module):
    def __init__(self, rng, d: int, mult: int = 4, out_std: float | None = None):
        self.fc1 = Linear(rng, d, mult * d)
        self.fc2 = Linear(rng, mult * d, d, std=out_std)

    def forward(self, x):
        h, c1 = self.fc1.forward(x)
        a, cg = nx.gelu_fwd(h)
        y, c2 = self.fc2.forward(a)
        return y, (c1, cg, c2)

    def backward(self, dy, cache):
        c1, cg, c2 = cache
        da = self.fc2.backward(dy, c2)
        return self.fc1.backward(nx.gelu_bwd(da, cg), c1)


class SelfAttention(Module):
    """Multi-head self-attention, optionally causal and with rotary q/k."""

    def __init__(self, rng, d: int, heads: int, *, causal: bool, rope: bool, out_std: float | None = None):
        if d % heads:
            raise nx.ShapeError(f"model width {d} not divisible by {heads} heads")
        self.heads = heads
        self.causal = causal
        self.rope = rope
        std = 1.0 / math.sqrt(d)
        self.Wq = nx.normal_param(rng, (d, d), std)
        self.Wk = nx.normal_param(rng, (d, d), std)
        self.Wv = nx.normal_param(rng, (d, d), std)
        self.Wo = nx.normal_param(rng, (d, d), out_std if out_std is not None else std)

    def forward(self, x, positions=None, base: float = ROPE_BASE):
        T = x.shape[0]
        q = nx.split_heads(x @ self.Wq.value, self.heads)
        k = nx.split_heads(x @ self.Wk.value, self.heads)
        v = nx.split_heads(x @ self.Wv.value, self.heads)
        tables = None
        if self.rope:
            pos = np.arange(T) if positions is None else positions
            tables = rope_tables(pos, q.shape[-1], base)
            q = rotate(q, *tables)
            k = rotate(k, *tables)
        mask = nx.causal_mask(T) if self.causal else None
        a, ca = nx.scaled_dot_attention_fwd(q, k, v, mask)
        z = nx.merge_heads(a)
        return z @ self.Wo.value, (x, z, ca, tables)

    def backward(self, dy, cache):
        x, z, ca, tables = cache
        if self.Wo.trainable:
            self.Wo.grad += z.T @ dy
        dz = dy @ self.Wo.value.T
        dq, dk, dv = nx.scaled_dot_attention_bwd(nx.split_heads(dz, self.heads), ca)
        if tables is not None:
            dq = _maybe_flip("rope", rotate(dq, *tables, inverse=True))
            dk = _maybe_flip("rope", rotate(dk, *tables, inverse=True))
        dq, dk, dv = nx.merge_heads(dq), nx.merge_heads(dk), nx.merge_heads(dv)
        dx = dq @ self.Wq.value.T + dk @ self.Wk.value.T + dv @ self.Wv.value.T
        for W, g in ((self.Wq, dq), (self.Wk, dk), (self.Wv, dv)):
            if W.trainable:
                W.grad += x.T @ g
        return _maybe_flip("linear", dx)


class TransformerBlock(Module):
    """Pre-norm block: x + Attn(LN(x)), then + FFN(LN(x))."""

    def __init__(self, rng, d: int, heads: int, *, causal: bool, rope: bool, depth: int = 1):
        out_std = 1.0 / math.sqrt(d * 2 * depth)
        self.ln1 = LayerNorm(d)
        self.attn = SelfAttention(rng, d, heads, causal=causal, rope=rope, out_std=out_std)
        self.ln2 = LayerNorm(d)
        self.ffn = FeedForward(rng, d, out_std=out_std / 2)

    def forward(self, x, positions=None):
        n1, c1 = self.ln1.forward(x)
        a, ca = self.attn.forward(n1, positions)
        h = x + a
        n2, c2 = self.ln2.forward(h)
        f, cf = self.ffn.forward(n2)
        return h + f, (c1, ca, c2, cf)

    def backward(self, dy, cache):
        c1, ca, c2, cf = cache
        dh = dy + self.ln2.backward(self.ffn.backward(dy, cf), c2)
        return dh + self.ln1.backward(self.attn.backward(dh, ca), c1)

    def zero_residual(self) -> None:
        """Make the block an exact identity map."""
        self.attn.Wo.value[...] = 0.0
        self.ffn.fc2.W.value[...] = 0.0
        self.ffn.fc2.b.value[...] = 0.0


class TransformerStack(Module):
    """Blocks followed by a final layer norm."""

    def __init__(self, rng, d: int, heads: int, layers: int, *, causal: bool, rope: bool):
        self.blocks = [TransformerBlock(rng, d, heads, causal=causal, rope=rope, depth=layers)
                       for _ in range(layers)]
        self.ln_f = LayerNorm(d)

    def forward(self, x, positions=None):
        caches = []
        for blk in self.blocks:
            x, c = blk.forward(x, positions)
            caches.append(c)
        y, cf = self.ln_f.forward(x)
        return y, (caches, cf)

    def backward(self, dy, cache):
        caches, cf = cache
        dx = self.ln_f.backward(dy, cf)
        for blk, c in zip(reversed(self.blocks), reversed(caches)):
            dx = blk.backward(dx, c)
        return dx
