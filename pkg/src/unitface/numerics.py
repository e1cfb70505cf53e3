"""Dense float64 primitives with hand-written backward passes.

Every forward function returns ``(out, cache)``; the matching ``*_bwd`` takes
the upstream gradient and the cache, returns the input gradient and
accumulates into any trainable :class:`Parameter` it touched.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

DTYPE = np.float64
LN_EPS = 1e-5


class ShapeError(ValueError):
    pass


class DeterminismError(RuntimeError):
    pass


# Mutation hook for the verification suite: names listed here get their input
# gradient negated so the gradient checks can prove they are sensitive.
_FAULTS: set[str] = set()

FAULTABLE = ("linear", "softmax", "layer_norm", "attention", "gelu", "sigmoid",
             "embedding", "rope", "resample")


@contextmanager
def inject_fault(name: str) -> Iterator[None]:
    if name not in FAULTABLE:
        raise ValueError(f"unknown primitive {name!r}; choose from {FAULTABLE}")
    _FAULTS.add(name)
    try:
        yield
    finally:
        _FAULTS.discard(name)


def _maybe_flip(name: str, g: np.ndarray) -> np.ndarray:
    return -g if name in _FAULTS else g


class Parameter:
    """A trainable array with its gradient buffer.

    ``decay`` marks parameters that receive decoupled weight decay.
    """

    __slots__ = ("value", "grad", "trainable", "decay")

    def __init__(self, value, *, trainable: bool = True, decay: bool = False):
        self.value = np.array(value, dtype=DTYPE, copy=True)
        self.grad = np.zeros_like(self.value)
        self.trainable = trainable
        self.decay = decay

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:
        flag = "" if self.trainable else ", frozen"
        return f"Parameter(shape={self.shape}{flag})"


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """PCG64 generator derived from ``seed`` and a tuple of integer stream keys."""
    return np.random.default_rng([int(seed), *[int(k) for k in keys]])


def normal_param(rng: np.random.Generator, shape, std: float, *, decay: bool = True) -> Parameter:
    return Parameter(rng.normal(0.0, std, size=shape), decay=decay)


def zeros_param(shape, *, decay: bool = False) -> Parameter:
    return Parameter(np.zeros(shape), decay=decay)


def ones_param(shape) -> Parameter:
    return Parameter(np.ones(shape))


def _as2d(x: np.ndarray, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 2:
        raise ShapeError(f"{what}: expected a 2-D array, got shape {x.shape}")
    return x


# --------------------------------------------------------------------------
# linear
# --------------------------------------------------------------------------

def linear_fwd(x: np.ndarray, W: Parameter, b: Parameter | None = None):
    x = _as2d(x, "linear")
    if W.value.ndim != 2 or x.shape[1] != W.value.shape[0]:
        raise ShapeError(f"linear: input shape {x.shape} does not match weight shape {W.shape}")
    out = x @ W.value
    if b is not None:
        if b.shape != (W.value.shape[1],):
            raise ShapeError(f"linear: bias shape {b.shape} does not match weight shape {W.shape}")
        out = out + b.value
    return out, x


def linear_bwd(dout: np.ndarray, x: np.ndarray, W: Parameter, b: Parameter | None = None) -> np.ndarray:
    if W.trainable:
        W.grad += x.T @ dout
    if b is not None and b.trainable:
        b.grad += dout.sum(axis=0)
    return _maybe_flip("linear", dout @ W.value.T)


def linear(x: np.ndarray, W: Parameter, b: Parameter | None = None) -> np.ndarray:
    return linear_fwd(x, W, b)[0]


# --------------------------------------------------------------------------
# softmax / cross-entropy
# --------------------------------------------------------------------------

def softmax(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    if x.shape[-1] < 1:
        raise ShapeError("softmax: last dimension must be >= 1")
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_bwd(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    dx = y * (dy - (dy * y).sum(axis=-1, keepdims=True))
    return _maybe_flip("softmax", dx)


def log_softmax(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _check_targets(logits: np.ndarray, targets: Sequence[int]) -> np.ndarray:
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    if t.shape[0] != logits.shape[0]:
        raise ShapeError(f"cross_entropy: {logits.shape[0]} logit rows but {t.shape[0]} targets")
    V = logits.shape[1]
    bad = (t < 0) | (t >= V)
    if bad.any():
        raise IndexError(f"cross_entropy: target {int(t[bad][0])} outside [0, {V})")
    return t


def cross_entropy_fwd_bwd(logits: np.ndarray, targets: Sequence[int],
                          mask: Sequence[bool] | None = None) -> tuple[float, np.ndarray]:
    """Mean NLL over unmasked rows and its gradient w.r.t. ``logits``.

    ``mask[i]`` True means row i contributes. All rows masked gives 0.
    """
    logits = _as2d(logits, "cross_entropy")
    t = _check_targets(logits, targets)
    m = np.ones(len(t), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    n = int(m.sum())
    dlogits = np.zeros_like(logits)
    if n == 0:
        return 0.0, dlogits
    rows = np.nonzero(m)[0]
    lp = log_softmax(logits[rows])
    loss = float(-lp[np.arange(len(rows)), t[rows]].sum() / n)
    g = np.exp(lp)
    g[np.arange(len(rows)), t[rows]] -= 1.0
    dlogits[rows] = g / n
    return loss, dlogits


def cross_entropy(logits: np.ndarray, targets: Sequence[int], mask: Sequence[bool] | None = None) -> float:
    return cross_entropy_fwd_bwd(logits, targets, mask)[0]


# --------------------------------------------------------------------------
# layer norm
# --------------------------------------------------------------------------

def layer_norm_fwd(x: np.ndarray, gamma: Parameter, beta: Parameter, eps: float = LN_EPS):
    x = np.asarray(x, dtype=DTYPE)
    if x.shape[-1] != gamma.shape[0] or gamma.shape != beta.shape:
        raise ShapeError(f"layer_norm: input shape {x.shape} does not match gamma {gamma.shape}")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    return xhat * gamma.value + beta.value, (xhat, inv)


def layer_norm_bwd(dout: np.ndarray, cache, gamma: Parameter, beta: Parameter) -> np.ndarray:
    xhat, inv = cache
    red = tuple(range(dout.ndim - 1))
    if gamma.trainable:
        gamma.grad += (dout * xhat).sum(axis=red)
    if beta.trainable:
        beta.grad += dout.sum(axis=red)
    dxhat = dout * gamma.value
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return _maybe_flip("layer_norm", dx)


def layer_norm(x: np.ndarray, gamma: Parameter, beta: Parameter, eps: float = LN_EPS) -> np.ndarray:
    return layer_norm_fwd(x, gamma, beta, eps)[0]


# --------------------------------------------------------------------------
# pointwise nonlinearities
# --------------------------------------------------------------------------

def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_bwd(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    return _maybe_flip("sigmoid", dy * y * (1.0 - y))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu_fwd(x: np.ndarray):
    u = _GELU_C * (x + 0.044715 * x ** 3)
    th = np.tanh(u)
    return 0.5 * x * (1.0 + th), (x, th)


def gelu_bwd(dy: np.ndarray, cache) -> np.ndarray:
    x, th = cache
    du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    dx = dy * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du)
    return _maybe_flip("gelu", dx)


def relu_fwd(x: np.ndarray):
    return np.maximum(x, 0.0), x > 0


def relu_bwd(dy: np.ndarray, active: np.ndarray) -> np.ndarray:
    return dy * active


# --------------------------------------------------------------------------
# embedding
# --------------------------------------------------------------------------

def embed(table: Parameter, ids: Sequence[int]) -> np.ndarray:
    idx = np.asarray(ids, dtype=np.int64).reshape(-1)
    V = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= V):
        raise IndexError(f"embedding: id outside [0, {V})")
    return table.value[idx]


def embed_bwd(dout: np.ndarray, ids: Sequence[int], table: Parameter) -> None:
    if table.trainable:
        np.add.at(table.grad, np.asarray(ids, dtype=np.int64), _maybe_flip("embedding", dout))


# --------------------------------------------------------------------------
# attention
# --------------------------------------------------------------------------

def scaled_dot_attention_fwd(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                             mask: np.ndarray | None = None):
    """softmax(q kᵀ / √d_k) v over the last two axes; leading axes broadcast.

    ``mask`` (M×N, True = may attend) removes disallowed keys.
    """
    q = np.asarray(q, dtype=DTYPE)
    k = np.asarray(k, dtype=DTYPE)
    v = np.asarray(v, dtype=DTYPE)
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"attention: query shape {q.shape} and key shape {k.shape} differ in d_k")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: key shape {k.shape} and value shape {v.shape} differ in length")
    scale = 1.0 / math.sqrt(q.shape[-1])
    s = (q @ np.swapaxes(k, -1, -2)) * scale
    if mask is not None:
        s = np.where(mask, s, -np.inf)
    p = softmax(s)
    return p @ v, (q, k, v, p, scale)


def scaled_dot_attention_bwd(dout: np.ndarray, cache):
    q, k, v, p, scale = cache
    dv = np.swapaxes(p, -1, -2) @ dout
    dp = dout @ np.swapaxes(v, -1, -2)
    ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True)) * scale
    dq = ds @ k
    dk = np.swapaxes(ds, -1, -2) @ q
    return _maybe_flip("attention", dq), dk, dv


def scaled_dot_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    return scaled_dot_attention_fwd(_as2d(q, "attention"), _as2d(k, "attention"), _as2d(v, "attention"))[0]


def causal_mask(T: int) -> np.ndarray:
    return np.tril(np.ones((T, T), dtype=bool))


def split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    T, d = x.shape
    return x.reshape(T, heads, d // heads).transpose(1, 0, 2)


def merge_heads(x: np.ndarray) -> np.ndarray:
    h, T, dh = x.shape
    return x.transpose(1, 0, 2).reshape(T, h * dh)


# --------------------------------------------------------------------------
# finite-difference verification
# --------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-4
    checked: int = 0

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def worst(self) -> tuple[str, float]:
        if not self.errors:
            return "", 0.0
        name = max(self.errors, key=self.errors.get)
        return name, self.errors[name]


def finite_diff_check(f: Callable[[], float], params: dict[str, Parameter] | Sequence[Parameter],
                      step: float = 1e-5, tolerance: float = 1e-4, *,
                      loss_only: Callable[[], float] | None = None,
                      max_elements: int | None = None, seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    ``f`` runs forward and backward, accumulating into parameter gradients, and
    returns the loss. ``loss_only`` (optional) is a cheaper forward-only
    evaluation used for the perturbed points. ``max_elements`` caps the number
    of checked entries per parameter (seeded subset).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if not isinstance(params, dict):
        params = {f"p{i}": p for i, p in enumerate(params)}
    evaluate = loss_only or f

    for p in params.values():
        p.zero_grad()
    base = f()
    analytic = {name: p.grad.copy() for name, p in params.items()}
    for p in params.values():
        p.zero_grad()
    again = evaluate()
    if again != base and not (math.isnan(base) and math.isnan(again)):
        raise DeterminismError(f"loss changed between identical evaluations: {base!r} vs {again!r}")

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance)
    for name, p in params.items():
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            idx = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
        a_flat = analytic[name].reshape(-1)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            fp = evaluate()
            flat[i] = orig - step
            fm = evaluate()
            flat[i] = orig
            num = (fp - fm) / (2.0 * step)
            a = a_flat[i]
            rel = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, rel)
        report.errors[name] = worst
        report.checked += len(idx)
    for p in params.values():
        p.zero_grad()
    return report
