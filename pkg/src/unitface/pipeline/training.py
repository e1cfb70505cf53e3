"""Stage training loop: sampling, per-kind objectives, optimisation, resume."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..model import OmniModel
from ..numerics import make_rng
from ..objectives import FaceBatch, LossPropagationError, LossWeights, l_face_grads, total_loss
from ..semantic import TASK_ASR, TASK_S2S, TASK_T2T, TASK_TTS
from .checkpoint import Checkpoint
from .corpus import KINDS, SyntheticCorpus
from .optim import AdamW, warmup_lr
from .stages import STAGE_EXTRA_KINDS, STAGES, StageConfigError, StagePlan

# stream keys for make_rng
_ORDER, _MIX = 11, 12


@dataclass
class TrainReport:
    stage: str
    losses: list[float]
    steps: int
    total_steps: int
    checkpoint: Checkpoint
    kinds: list[str] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return self.steps == self.total_steps


class Sampler:
    """Stateless batch order.

    Each data kind is an endless stream of seeded per-epoch permutations; the
    kind used by a step is itself a seeded draw. Everything is a function of
    (seed, stage, step), which is what makes resume exact.
    """

    def __init__(self, corpus: SyntheticCorpus, plan: StagePlan, seed: int):
        self.seed = seed
        self.stage_idx = STAGES.index(plan.stage)
        self.kinds = [k for k in plan.kinds]
        missing = [k for k in self.kinds if not corpus.kind(k)]
        if missing:
            raise StageConfigError(f"stage {plan.stage} needs {', '.join(missing)} data, corpus has none")
        self.kinds += [k for k in STAGE_EXTRA_KINDS.get(plan.stage, ()) if corpus.kind(k)]
        self.sizes = {k: len(corpus.kind(k)) for k in self.kinds}
        self.per_step = plan.batch_size * plan.grad_accum
        n = sum(self.sizes.values())
        self.total_steps = math.ceil(plan.epochs * n / self.per_step)
        if plan.max_steps is not None:
            self.total_steps = plan.max_steps
        self._perms: dict[tuple[str, int], np.ndarray] = {}
        self._kind_of = self._kind_schedule()

    def _kind_schedule(self) -> list[str]:
        if len(self.kinds) == 1:
            return [self.kinds[0]] * self.total_steps
        draws = make_rng(self.seed, _MIX, self.stage_idx).integers(0, len(self.kinds), size=self.total_steps)
        return [self.kinds[i] for i in draws]

    def _perm(self, kind: str, epoch: int) -> np.ndarray:
        key = (kind, epoch)
        if key not in self._perms:
            rng = make_rng(self.seed, _ORDER, self.stage_idx, KINDS.index(kind), epoch)
            self._perms[key] = rng.permutation(self.sizes[kind])
        return self._perms[key]

    def batch(self, step: int) -> tuple[str, list[int]]:
        """0-based ``step`` → (kind, sample indices)."""
        kind = self._kind_of[step]
        start = self.per_step * sum(1 for k in self._kind_of[:step] if k == kind)
        n = self.sizes[kind]
        return kind, [int(self._perm(kind, p // n)[p % n]) for p in range(start, start + self.per_step)]


class StageRunner:
    """Per-sample forward/backward for every data kind.

    Outputs of frozen upstream groups are cached per sample; recomputing them
    would give the same bits, so this only saves time.
    """

    def __init__(self, model: OmniModel, corpus: SyntheticCorpus, weights: LossWeights = LossWeights()):
        self.model = model
        self.corpus = corpus
        self.weights = weights
        self._cache: dict[tuple, object] = {}

    def _frozen(self, *groups: str) -> bool:
        return all(not p.trainable for g in groups for p in self.model.group_params(g).values())

    def _cached(self, key: tuple, frozen: bool, fn):
        if not frozen:
            return fn()
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    # reasoner front end ------------------------------------------------------

    def _reasoner_fwd(self, task: int, prompt, speech, response):
        m = self.model
        s = cs = None
        if speech is not None:
            s, cs = m.speech_projector.forward(speech)
        X = m.reasoner.embed([task, *prompt])
        if s is not None:
            X = np.concatenate([X, s], axis=0)
        loss, H, state = m.reasoner.response_fwd(X, response)
        return loss, H, (state, [task, *prompt], cs)

    def _reasoner_bwd(self, cache, scale: float, dH):
        m = self.model
        state, ids, cs = cache
        dX = m.reasoner.response_bwd(state, scale, dH)
        m.reasoner.embed_bwd(dX[:len(ids)], ids)
        if cs is not None and self._has_trainable("speech_projector"):
            m.speech_projector.backward(dX[len(ids):], cs)

    def _has_trainable(self, *groups: str) -> bool:
        return not self._frozen(*groups)

    # speech back end ---------------------------------------------------------

    def _speech_terms(self, text, H, units, clip, scale: float, key: tuple, upstream_frozen: bool):
        """Unit CE and face loss given reasoner states ``H``.

        Returns ``(unit_ce, face_loss, dH)``; a term is None when nothing
        upstream of it is trainable, and so is ``dH`` when not needed.
        """
        m = self.model
        gen, face = m.unit_generator, m.face_decoder
        gen_frozen = upstream_frozen and self._frozen("unit_generator")
        need_gen_grad = self._has_trainable("unit_generator") or not upstream_frozen

        def gen_fwd():
            Ht, cc = gen.condition_fwd(text, H)
            nll, gh, st = gen.units_fwd(Ht, units)
            return nll, gh, cc, st

        nll, gh, cc, st = self._cached(key + ("gen",), gen_frozen, gen_fwd)
        dgh = lf = None
        if clip is not None and (self._has_trainable("face_decoder") or not gen_frozen):
            y, fc = face.forward(units, gh, clip.shape[0])
            _, _, lf, (g,) = l_face_grads(FaceBatch.full([y], [clip]), self.weights)
            dgh = face.backward(g * scale, fc)
        if not need_gen_grad:
            return None, lf, None
        dHt = gen.units_bwd(st, scale, dgh)
        return nll, lf, gen.condition_bwd(dHt, cc)

    # per kind ----------------------------------------------------------------

    def sample(self, kind: str, i: int, scale: float) -> float:
        """Forward and backward one sample with gradient ``scale``; returns its loss."""
        m = self.model
        x = self.corpus.kind(kind)[i]
        reasoner_frozen = self._frozen("speech_projector", "reasoner")
        if kind in ("asr", "t2t"):
            if kind == "asr":
                loss, _, c = self._reasoner_fwd(TASK_ASR, (), x.features, x.transcript)
            else:
                loss, _, c = self._reasoner_fwd(TASK_T2T, x.prompt, None, x.response)
            if not reasoner_frozen:
                self._reasoner_bwd(c, scale, None)
            return total_loss([loss])
        if kind == "s2s":
            text_ce, H, c = self._reasoner_fwd(TASK_S2S, (), x.features, x.response)
            nll, lf, dH = self._speech_terms(x.response, H, x.units, x.clip, scale, ("s2s", i), reasoner_frozen)
            ar = [] if reasoner_frozen else [text_ce]
            if not reasoner_frozen:
                self._reasoner_bwd(c, scale, dH)
            return total_loss(ar + ([] if nll is None else [nll]), lf)
        # tts / face: the reasoner reads the text back under the TTS instruction
        def ctx():
            return self._reasoner_fwd(TASK_TTS, x.text, None, x.text)

        _, H, c = self._cached((kind, i, "ctx"), reasoner_frozen, ctx)
        clip = x.clip if kind == "face" else None
        nll, lf, dH = self._speech_terms(x.text, H, x.units, clip, scale, (kind, i), reasoner_frozen)
        if not reasoner_frozen:
            self._reasoner_bwd(c, 0.0, dH)
        return total_loss([] if nll is None else [nll], lf)


def train_stage(plan: StagePlan, corpus: SyntheticCorpus, model: OmniModel, seed: int, *,
                resume: Checkpoint | None = None, stop_after: int | None = None,
                on_step: Callable[[int, float], None] | None = None) -> TrainReport:
    """Run (or continue) one stage in place on ``model``.

    ``stop_after`` ends the run early after that many total steps; the
    returned checkpoint then resumes exactly where it stopped.
    """
    plan.validate()
    sampler = Sampler(corpus, plan, seed)
    total = sampler.total_steps
    model.set_trainable(plan.trainable)
    params = model.params()
    lrs = {k: plan.lrs[k.split("/", 1)[0]] for k in params}
    opt = AdamW(params, lrs, weight_decay=plan.weight_decay)
    losses: list[float] = []
    start = 0
    if resume is not None:
        if resume.stage != plan.stage or resume.meta.get("seed") != str(seed):
            raise StageConfigError(f"cannot resume: checkpoint is stage {resume.stage!r} seed "
                                   f"{resume.meta.get('seed')!r}, run is stage {plan.stage} seed {seed}")
        if int(resume.meta.get("total_steps", "-1")) != total:
            raise StageConfigError("cannot resume: schedule length differs from the checkpoint's")
        model.load_state(resume.params)
        start = resume.step
        opt.load_state(resume.moments, int(resume.meta.get("opt_t", start)))
        losses = [float(v) for v in resume.loss_log]
    runner = StageRunner(model, corpus)
    end = total if stop_after is None else min(total, max(stop_after, start))
    kinds_seen: list[str] = []
    for step in range(start, end):
        kind, idx = sampler.batch(step)
        kinds_seen.append(kind)
        model.zero_grad()
        scale = 1.0 / len(idx)
        step_loss = 0.0
        for i in idx:
            step_loss += runner.sample(kind, i, scale)
        step_loss /= len(idx)
        if not math.isfinite(step_loss):
            raise LossPropagationError(f"stage {plan.stage} step {step + 1}: loss is {step_loss}")
        opt.step(warmup_lr(1.0, step + 1, plan.warmup_ratio, total))
        losses.append(step_loss)
        if on_step is not None:
            on_step(step + 1, step_loss)
    meta = {"stage": plan.stage, "step": str(end), "total_steps": str(total),
            "complete": "1" if end == total else "0", "seed": str(seed), "opt_t": str(opt.t)}
    ck = Checkpoint(params={k: v.copy() for k, v in model.state().items()},
                    moments={k: v.copy() for k, v in opt.state().items()},
                    meta=meta, model_config=model.cfg.to_dict(),
                    loss_log=np.asarray(losses, dtype=np.float64))
    return TrainReport(plan.stage, losses, end, total, ck, kinds_seen)
