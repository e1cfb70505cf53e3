"""Self-verification suites run by ``unitface verify``.

The gradient suite compares every hand-written backward pass with central
differences; the invariant suite checks exact algebraic properties. Either can
be run with a primitive's gradient deliberately negated to show the checks
notice.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numerics as nx
from .evaluation import LatencyRecord, RatingSheet, Rig, ab_aggregate, latency_metrics, lve, wer
from .face import FaceDecoder, frame_count, resample, resample_bwd
from .fusion import FusionBlock, FusionStack
from .model import OmniModel, ModelConfig
from .numerics import Parameter
from .objectives import FaceBatch, l_bs, l_face, l_face_grads, l_vel
from .positional import PeriodicRopeConfig, apply_rope, apply_rope_bwd, periodic_positions, rope_tables, rotate
from .semantic import Reasoner, SpeechProjector
from .units import UnitGenerator

SEEDS = (0, 1, 2)
STEP = 1e-5
TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _param(rng, *shape, scale=1.0) -> Parameter:
    return Parameter(rng.normal(scale=scale, size=shape))


def _probe(rng, shape) -> np.ndarray:
    """Fixed random weights turning an output into a scalar loss."""
    return rng.normal(size=shape)


# --------------------------------------------------------------------------
# gradient checks: each builds a small problem and returns a report
# --------------------------------------------------------------------------

def _gc(f, params, **kw) -> nx.GradCheckReport:
    return nx.finite_diff_check(f, params, STEP, TOLERANCE, **kw)


def grad_linear(seed: int):
    rng = nx.make_rng(seed, 101)
    x, W, b = _param(rng, 5, 4), _param(rng, 4, 3), _param(rng, 3)
    R = _probe(rng, (5, 3))

    def f():
        y, c = nx.linear_fwd(x.value, W, b)
        x.grad += nx.linear_bwd(R, c, W, b)
        return float((y * R).sum())
    return _gc(f, {"x": x, "W": W, "b": b})


def grad_softmax(seed: int):
    rng = nx.make_rng(seed, 102)
    x = _param(rng, 4, 6, scale=2.0)
    R = _probe(rng, (4, 6))

    def f():
        y = nx.softmax(x.value)
        x.grad += nx.softmax_bwd(R, y)
        return float((y * R).sum())
    return _gc(f, {"x": x})


def grad_cross_entropy(seed: int):
    rng = nx.make_rng(seed, 103)
    x = _param(rng, 6, 7, scale=2.0)
    t = rng.integers(0, 7, size=6)
    mask = np.array([1, 1, 0, 1, 0, 1], dtype=bool)

    def f():
        loss, g = nx.cross_entropy_fwd_bwd(x.value, t, mask)
        x.grad += g
        return loss
    return _gc(f, {"x": x})


def grad_layer_norm(seed: int):
    rng = nx.make_rng(seed, 104)
    x, g, b = _param(rng, 5, 8), _param(rng, 8), _param(rng, 8)
    R = _probe(rng, (5, 8))

    def f():
        y, c = nx.layer_norm_fwd(x.value, g, b)
        x.grad += nx.layer_norm_bwd(R, c, g, b)
        return float((y * R).sum())
    return _gc(f, {"x": x, "gamma": g, "beta": b})


def grad_gelu(seed: int):
    rng = nx.make_rng(seed, 105)
    x = _param(rng, 4, 5, scale=2.0)
    R = _probe(rng, (4, 5))

    def f():
        y, c = nx.gelu_fwd(x.value)
        x.grad += nx.gelu_bwd(R, c)
        return float((y * R).sum())
    return _gc(f, {"x": x})


def grad_sigmoid(seed: int):
    rng = nx.make_rng(seed, 106)
    x = _param(rng, 4, 5, scale=3.0)
    R = _probe(rng, (4, 5))

    def f():
        y = nx.sigmoid(x.value)
        x.grad += nx.sigmoid_bwd(R, y)
        return float((y * R).sum())
    return _gc(f, {"x": x})


def grad_embedding(seed: int):
    rng = nx.make_rng(seed, 107)
    E = _param(rng, 6, 4)
    ids = [1, 3, 3, 0, 5]
    R = _probe(rng, (5, 4))

    def f():
        nx.embed_bwd(R, ids, E)
        return float((nx.embed(E, ids) * R).sum())
    return _gc(f, {"table": E})


def grad_attention(seed: int):
    rng = nx.make_rng(seed, 108)
    q, k, v = _param(rng, 2, 5, 4), _param(rng, 2, 5, 4), _param(rng, 2, 5, 3)
    R = _probe(rng, (2, 5, 3))
    mask = nx.causal_mask(5)

    def f():
        y, c = nx.scaled_dot_attention_fwd(q.value, k.value, v.value, mask)
        dq, dk, dv = nx.scaled_dot_attention_bwd(R, c)
        q.grad += dq
        k.grad += dk
        v.grad += dv
        return float((y * R).sum())
    return _gc(f, {"q": q, "k": k, "v": v})


def grad_rope(seed: int):
    rng = nx.make_rng(seed, 109)
    x = _param(rng, 30, 8)
    pos = periodic_positions(30, PeriodicRopeConfig())
    R = _probe(rng, (30, 8))

    def f():
        x.grad += apply_rope_bwd(R, pos)
        return float((apply_rope(x.value, pos) * R).sum())
    return _gc(f, {"x": x})


def grad_resample(seed: int):
    rng = nx.make_rng(seed, 110)
    E = _param(rng, 5, 3)
    R = _probe(rng, (frame_count(5), 3))

    def f():
        E.grad += resample_bwd(R, 5)
        return float((resample(E.value, R.shape[0]) * R).sum())
    return _gc(f, {"E": E})


def grad_face_losses(seed: int):
    rng = nx.make_rng(seed, 111)
    lens = [4, 1, 6]
    preds = [_param(rng, n + 2, 3) for n in lens]
    targets = [rng.uniform(size=(n + 1, 3)) for n in lens]

    def f():
        batch = FaceBatch([p.value for p in preds], targets, lens)
        _, _, loss, grads = l_face_grads(batch)
        for p, g in zip(preds, grads):
            p.grad += g
        return loss
    return _gc(f, {f"pred{i}": p for i, p in enumerate(preds)})


def grad_fusion(seed: int):
    rng = nx.make_rng(seed, 112)
    block = FusionBlock(rng, 8, 2, d_ctx=6)
    for p in (block.Wg, block.bg):
        p.value[...] = rng.normal(scale=0.5, size=p.shape)
    Q, C = _param(rng, 5, 8), _param(rng, 4, 6)
    R = _probe(rng, (5, 8))

    def f():
        y, c = block.forward(Q.value, C.value)
        dQ, dC = block.backward(R, c)
        Q.grad += dQ
        C.grad += dC
        return float((y * R).sum())
    return _gc(f, {"Q": Q, "C": C, **block.params("block/")})


def grad_fusion_stack(seed: int):
    rng = nx.make_rng(seed, 113)
    stack = FusionStack(rng, 8, 2, 2, d_ctx=6)
    for p in stack.params().values():
        p.value[...] += rng.normal(scale=0.1, size=p.shape)
    Q, C = _param(rng, 5, 8), _param(rng, 3, 6)
    R = _probe(rng, (5, 8))

    def f():
        y, c = stack.forward(Q.value, C.value)
        dQ, dC = stack.backward(R, c)
        Q.grad += dQ
        C.grad += dC
        return float((y * R).sum())
    return _gc(f, {"Q": Q, "C": C, **stack.params("stack/")})


def grad_reasoner(seed: int):
    rng = nx.make_rng(seed, 114)
    proj = SpeechProjector(rng, 4, 16)
    reasoner = Reasoner(rng, 24, 16, 2, 2)
    frames = rng.normal(size=(12, 4))
    prompt = [1, 9, 12]
    response = [10, 17, 8, 20]
    Rh = _probe(rng, (len(response), 16))

    def f():
        s, cs = proj.forward(frames)
        X = np.concatenate([reasoner.embed(prompt), s], axis=0)
        loss, H, st = reasoner.response_fwd(X, response)
        dX = reasoner.response_bwd(st, 1.0, Rh)
        reasoner.embed_bwd(dX[:len(prompt)], prompt)
        proj.backward(dX[len(prompt):], cs)
        return loss + float((H * Rh).sum())
    params = {**proj.params("projector/"), **reasoner.params("reasoner/")}
    return _gc(f, params, max_elements=24, seed=seed)


def grad_unit_generator(seed: int):
    rng = nx.make_rng(seed, 115)
    gen = UnitGenerator(rng, 24, 10, 12, 16, 2, 2, 2)
    for p in gen.fusion.params().values():
        p.value[...] += rng.normal(scale=0.1, size=p.shape)
    H = _param(rng, 4, 12)
    tokens = [9, 14, 8, 21]
    units = [3, 3, 7, 1, 0, 9]
    Rh = _probe(rng, (len(units), 16))

    def f():
        Ht, cc = gen.condition_fwd(tokens, H.value)
        loss, gh, st = gen.units_fwd(Ht, units)
        H.grad += gen.condition_bwd(gen.units_bwd(st, 1.0, Rh), cc)
        return loss + float((gh * Rh).sum())
    return _gc(f, {"H": H, **gen.params("generator/")}, max_elements=24, seed=seed)


def grad_face_decoder(seed: int):
    rng = nx.make_rng(seed, 116)
    dec = FaceDecoder(rng, 10, 12, 16, 2, fusion_depth=2, encoder_layers=2)
    for p in dec.fusion.params().values():
        p.value[...] += rng.normal(scale=0.1, size=p.shape)
    dec.head.W.value[...] = rng.normal(scale=0.3, size=dec.head.W.shape)
    units = [4, 1, 1, 9, 0, 6, 2]
    G = _param(rng, len(units), 12)
    T_y = frame_count(len(units))
    target = rng.uniform(size=(T_y, 52))

    def f():
        y, c = dec.forward(units, G.value, T_y)
        _, _, loss, (g,) = l_face_grads(FaceBatch.full([y], [target]))
        G.grad += dec.backward(g, c)
        return loss
    return _gc(f, {"gen_hidden": G, **dec.params("face/")}, max_elements=24, seed=seed)


def grad_end_to_end(seed: int):
    """Text CE + unit CE + face loss through every trainable group at once."""
    from .pipeline.corpus import generate_corpus
    from .pipeline.training import StageRunner

    cfg = ModelConfig(vocab_text=24, vocab_units=10, d_enc=4, d_model=16, heads=2, reasoner_layers=1,
                      d_gen=16, gen_layers=1, gen_fusion_layers=1, d_face=16, face_fusion_layers=1,
                      face_encoder_layers=1, init_seed=seed)
    model = OmniModel(cfg)
    rng = nx.make_rng(seed, 117)
    for p in model.params().values():
        if p.value.any():
            continue
        p.value[...] = rng.normal(scale=0.1, size=p.shape)
    model.face_decoder.head.W.value[...] = rng.normal(scale=0.3, size=model.face_decoder.head.W.shape)
    corpus = generate_corpus(seed, {"s2s": 1}, vocab_text=24, vocab_units=10, d_enc=4, min_len=2, max_len=3)
    runner = StageRunner(model, corpus)
    return _gc(lambda: runner.sample("s2s", 0, 1.0), model.params(), max_elements=8, seed=seed)


GRADIENT_CHECKS: dict[str, Callable[[int], nx.GradCheckReport]] = {
    "linear": grad_linear,
    "softmax": grad_softmax,
    "cross_entropy": grad_cross_entropy,
    "layer_norm": grad_layer_norm,
    "gelu": grad_gelu,
    "sigmoid": grad_sigmoid,
    "embedding": grad_embedding,
    "attention": grad_attention,
    "rope": grad_rope,
    "resample": grad_resample,
    "face_losses": grad_face_losses,
    "fusion_block": grad_fusion,
    "fusion_stack": grad_fusion_stack,
    "reasoner": grad_reasoner,
    "unit_generator": grad_unit_generator,
    "face_decoder": grad_face_decoder,
    "end_to_end": grad_end_to_end,
}


def run_gradients(seeds=SEEDS) -> list[CheckResult]:
    out = []
    for name, fn in GRADIENT_CHECKS.items():
        t0 = time.perf_counter()
        worst, where, ok = 0.0, "", True
        for s in seeds:
            rep = fn(s)
            w_name, w = rep.worst()
            ok = ok and rep.passed
            if w >= worst:
                worst, where = w, f"seed {s} {w_name}"
        out.append(CheckResult(f"grad/{name}", ok, f"max rel err {worst:.2e} ({where})",
                               time.perf_counter() - t0))
    return out


# --------------------------------------------------------------------------
# invariants
# --------------------------------------------------------------------------

def inv_fusion_identity() -> tuple[bool, str]:
    rng = nx.make_rng(0, 201)
    for case in range(100):
        M, N = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        heads = int(rng.integers(1, 4))
        d = heads * 2 * int(rng.integers(1, 4))
        stack = FusionStack(rng, d, heads, int(rng.integers(1, 4)), d_ctx=int(rng.integers(1, 9)))
        for p in stack.params().values():
            p.value[...] += rng.normal(size=p.shape)
        stack.zero_values()
        Q = rng.normal(size=(M, d))
        C = rng.normal(size=(N, stack.blocks[0].Wk.shape[0]))
        if not np.array_equal(stack.forward(Q, C)[0], Q):
            return False, f"case {case}: output differs from Q"
        block = stack.blocks[0]
        g1 = block.gate_activations(Q)
        _ = block.forward(Q, C * 2.0 + 1.0)
        if not np.array_equal(g1, block.gate_activations(Q)):
            return False, f"case {case}: gates depend on context"
    return True, "100 cases bit-exact"


def inv_rope() -> tuple[bool, str]:
    cfg = PeriodicRopeConfig()
    rng = nx.make_rng(0, 202)
    x = rng.normal(size=(60, 16))
    pos = periodic_positions(60, cfg)
    y = rotate(x, *rope_tables(pos, 16, cfg.base))
    for t in range(35):
        if pos[t] != pos[t + 25]:
            return False, f"position {t} and {t + 25} differ"
    same = rotate(x[:1].repeat(2, 0), *rope_tables([pos[3], pos[28]], 16))
    if not np.array_equal(same[0], same[1]):
        return False, "rotations at t and t+25 differ"
    if not np.array_equal(rotate(x[:1], *rope_tables([0.0], 16))[0], x[0]):
        return False, "t=0 is not the identity"
    n_in = np.hypot(x[:, 0::2], x[:, 1::2])
    n_out = np.hypot(y[:, 0::2], y[:, 1::2])
    err = float(np.abs(n_in - n_out).max())
    if err > 1e-12:
        return False, f"pair norms drift by {err:.1e}"
    return True, f"period 25 exact, pair-norm drift {err:.1e}"


def inv_losses() -> tuple[bool, str]:
    b = FaceBatch.full([np.array([[0.5], [0.5]])], [np.array([[0.0], [1.0]])])
    vals = (l_bs(b), l_vel(b), l_face(b))
    if vals != (0.25, 1.0, 0.55):
        return False, f"hand case gave {vals}"
    V = 37
    ce = nx.cross_entropy(np.zeros((3, V)), [0, 5, 36])
    if abs(ce - math.log(V)) > 1e-12:
        return False, f"uniform CE {ce} != ln {V}"
    return True, "l_bs 0.25, l_vel 1.0, l_face 0.55, uniform CE = ln V"


def inv_metrics() -> tuple[bool, str]:
    deltas = np.zeros((52, 2, 3))
    deltas[0, 0] = (1.0, 0.0, 0.0)
    deltas[0, 1] = (0.0, 2.0, 0.0)
    rig = Rig(np.zeros((2, 3)), deltas, (0, 1))
    p, r = np.zeros((1, 52)), np.zeros((1, 52))
    p[0, 0] = 0.5
    if lve([p], [r], rig) != 1.0 or lve([p], [p], rig) != 0.0:
        return False, "LVE hand case"
    for counts, want in (((11, 2, 7), (55.0, 10.0, 60.0)), ((14, 1, 5), (70.0, 5.0, 72.5)),
                         ((16, 1, 3), (80.0, 5.0, 82.5))):
        a, t, b = counts
        sheet = RatingSheet.from_counts([(8, 0, 0)] * a + [(0, 0, 8)] * t + [(0, 8, 0)] * b)
        res = ab_aggregate(sheet)
        if (res.win, res.tie, res.overall) != want:
            return False, f"A/B {counts} gave {res}"
    if ab_aggregate(RatingSheet.from_counts([(5, 2, 1)])).mmf != 62.5:
        return False, "MMF 5/2/1 case"
    if latency_metrics([LatencyRecord(4.316, 2.0, 0.1, 0.0)]).rtf != 2.158:
        return False, "RTF case"
    if (wer("the cat sat", "the cat sat"), wer("the cat sat", "the cat"), wer("the cat sat", "")) != (0.0, 1 / 3, 1.0):
        return False, "WER cases"
    return True, "LVE, A/B, RTF, WER hand cases exact"


def inv_frame_count() -> tuple[bool, str]:
    cases = {1: 2, 2: 4, 25: 50, 12: 24}
    for T_u, want in cases.items():
        if frame_count(T_u, 12.5, 25.0) != want:
            return False, f"frame_count({T_u}) != {want}"
    return True, "unit→frame arithmetic"


INVARIANT_CHECKS: dict[str, Callable[[], tuple[bool, str]]] = {
    "fusion_identity": inv_fusion_identity,
    "periodic_rope": inv_rope,
    "loss_arithmetic": inv_losses,
    "metric_arithmetic": inv_metrics,
    "frame_count": inv_frame_count,
}


def run_invariants() -> list[CheckResult]:
    out = []
    for name, fn in INVARIANT_CHECKS.items():
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as e:  # a crash is a failure, not an abort
            ok, detail = False, f"{type(e).__name__}: {e}"
        out.append(CheckResult(f"inv/{name}", ok, detail, time.perf_counter() - t0))
    return out


def run_suite(suite: str = "all", fault: str | None = None, seeds=SEEDS) -> list[CheckResult]:
    if suite not in ("gradients", "invariants", "all"):
        raise ValueError(f"unknown suite {suite!r}")

    def run():
        res = []
        if suite in ("gradients", "all"):
            res += run_gradients(seeds)
        if suite in ("invariants", "all"):
            res += run_invariants()
        return res

    if fault is None:
        return run()
    with nx.inject_fault(fault):
        return run()
