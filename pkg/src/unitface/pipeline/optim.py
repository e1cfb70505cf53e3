"""AdamW with decoupled weight decay and linear warmup."""

from __future__ import annotations

import math

import numpy as np

from ..numerics import Parameter

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8
WEIGHT_DECAY = 0.01


def warmup_lr(base_lr: float, step: int, warmup_ratio: float, total_steps: int) -> float:
    """Learning rate for 1-based ``step``: linear ramp, then constant."""
    if step < 1:
        raise ValueError("steps are 1-based")
    ramp = warmup_ratio * total_steps
    if ramp <= 0:
        return base_lr
    return base_lr * min(1.0, step / ramp)


class AdamW:
    def __init__(self, params: dict[str, Parameter], lrs: dict[str, float], *,
                 weight_decay: float = WEIGHT_DECAY):
        """``lrs`` maps each parameter name to its base learning rate."""
        self.params = params
        self.lrs = lrs
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.t = 0

    def step(self, scale: float = 1.0) -> None:
        """One update; each parameter's lr is its base lr times ``scale``.

        Frozen parameters are skipped entirely (moments included).
        """
        self.t += 1
        c1 = 1.0 - BETA1 ** self.t
        c2 = 1.0 - BETA2 ** self.t
        for k, p in self.params.items():
            if not p.trainable:
                continue
            lr = self.lrs[k] * scale
            g = p.grad
            m, v = self.m[k], self.v[k]
            m *= BETA1
            m += (1.0 - BETA1) * g
            v *= BETA2
            v += (1.0 - BETA2) * g * g
            if p.decay and self.weight_decay:
                p.value *= 1.0 - lr * self.weight_decay
            p.value -= lr * (m / c1) / (np.sqrt(v / c2) + EPS)

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for k in self.params:
            out[f"m/{k}"] = self.m[k]
            out[f"v/{k}"] = self.v[k]
        return out

    def load_state(self, arrays: dict[str, np.ndarray], t: int) -> None:
        for k in self.params:
            for kind, store in (("m", self.m), ("v", self.v)):
                a = arrays.get(f"{kind}/{k}")
                if a is None or a.shape != store[k].shape:
                    raise ValueError(f"optimizer moment {kind}/{k} missing or misshapen")
        for k in self.params:
            self.m[k][...] = arrays[f"m/{k}"]
            self.v[k][...] = arrays[f"v/{k}"]
        self.t = int(t)


def global_norm(params) -> float:
    return math.sqrt(sum(float((p.grad * p.grad).sum()) for p in params if p.trainable))
