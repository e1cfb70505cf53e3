"""The four-stage freeze / learning-rate schedule and its plain-text config form."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from ..model import GROUPS, PARAM_GROUPS

STAGES = ("I", "II", "III", "IV")
LOCKED = ("speech_encoder", "speech_decoder")

# schedule row names ↔ internal group names
ROW_NAMES = {
    "speech_encoder": "speech_encoder",
    "speech_projector": "speech_projector",
    "llm": "reasoner",
    "speech_generator": "unit_generator",
    "facial_decoder": "face_decoder",
    "speech_decoder": "speech_decoder",
}
GROUP_ROWS = {g: r for r, g in ROW_NAMES.items()}

# data kinds each stage consumes, and (for IV) optional extras it mixes in when present
STAGE_KINDS = {
    "I": ("asr",),
    "II": ("tts",),
    "III": ("face",),
    "IV": ("asr", "tts", "s2s", "t2t"),
}
STAGE_EXTRA_KINDS = {"IV": ("face",)}


class StageConfigError(ValueError):
    pass


@dataclass
class StagePlan:
    stage: str
    lrs: dict[str, float]
    frozen: dict[str, bool]
    epochs: int
    batch_size: int
    warmup_ratio: float
    grad_accum: int
    max_steps: int | None = None
    weight_decay: float = 0.01
    kinds: tuple[str, ...] = field(default=())

    @property
    def trainable(self) -> tuple[str, ...]:
        return tuple(g for g in PARAM_GROUPS if not self.frozen[g])

    def validate(self) -> None:
        for g in LOCKED:
            if not self.frozen[g]:
                raise StageConfigError(f"stage {self.stage}: {GROUP_ROWS[g]} stays frozen in every stage")
        if self.epochs < 1 or self.batch_size < 1 or self.grad_accum < 1:
            raise StageConfigError(f"stage {self.stage}: epoch, batch size and accumulation must be >= 1")
        if not 0.0 <= self.warmup_ratio <= 1.0:
            raise StageConfigError(f"stage {self.stage}: warmup ratio {self.warmup_ratio} outside [0, 1]")
        if self.max_steps is not None and self.max_steps < 1:
            raise StageConfigError(f"stage {self.stage}: max_steps must be >= 1")
        for g in self.trainable:
            if not self.lrs[g] > 0:
                raise StageConfigError(f"stage {self.stage}: {GROUP_ROWS[g]} is trainable but has lr {self.lrs[g]}")
        if self.weight_decay < 0:
            raise StageConfigError("weight decay must be non-negative")

    # -- key=value form ----------------------------------------------------

    def to_text(self) -> str:
        lines = [f"stage={self.stage}", f"epoch={self.epochs}", f"batch_size={self.batch_size}",
                 f"warmup_ratio={self.warmup_ratio!r}", f"gradient_accumulation={self.grad_accum}"]
        for g in GROUPS:
            lines.append(f"lr_{GROUP_ROWS[g]}={self.lrs[g]!r}")
        for g in GROUPS:
            lines.append(f"freeze_{GROUP_ROWS[g]}={int(self.frozen[g])}")
        lines.append(f"max_steps={'' if self.max_steps is None else self.max_steps}")
        lines.append(f"weight_decay={self.weight_decay!r}")
        return "\n".join(lines) + "\n"


_TABLE = {
    #        epochs batch warmup accum
    "I": (1, 128, 0.3, 1),
    "II": (3, 128, 0.1, 1),
    "III": (10, 128, 0.1, 1),
    "IV": (3, 8, 0.1, 4),
}
_LRS = {
    "I": {"speech_projector": 1e-3},
    "II": {"unit_generator": 1e-4},
    "III": {"face_decoder": 1e-3},
    # the projector is unfrozen here but listed with lr 0; it shares the reasoner rate
    "IV": {"speech_projector": 2e-6, "reasoner": 2e-6, "unit_generator": 5e-5, "face_decoder": 5e-5},
}


def parse_overrides(text: str) -> dict[str, str]:
    """``key=value`` lines; blank lines and ``#`` comments ignored."""
    out: dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise StageConfigError(f"line {n}: expected key=value, got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def _flag(key: str, v: str) -> bool:
    v = v.lower()
    if v in ("1", "true", "yes"):
        return True
    if v in ("0", "false", "no"):
        return False
    raise StageConfigError(f"{key}: expected a boolean, got {v!r}")


def stage_plan(stage: str, overrides: dict[str, object] | None = None) -> StagePlan:
    """Schedule for ``stage`` with desk-scale ``overrides`` applied.

    Override keys follow the schedule row names (``epoch``, ``batch_size``,
    ``lr_llm``, ``freeze_facial_decoder``...) plus ``max_steps`` and
    ``weight_decay``. Values may be strings (as parsed from config files).
    """
    if stage not in STAGES:
        raise StageConfigError(f"unknown stage {stage!r}; expected one of {', '.join(STAGES)}")
    epochs, batch, warmup, accum = _TABLE[stage]
    lrs = {g: _LRS[stage].get(g, 0.0) for g in GROUPS}
    frozen = {g: g not in _LRS[stage] for g in GROUPS}
    plan = StagePlan(stage, lrs, frozen, epochs, batch, warmup, accum,
                     kinds=STAGE_KINDS[stage])
    for key, raw in (overrides or {}).items():
        v = str(raw)
        try:
            if key == "stage":
                if v != stage:
                    raise StageConfigError(f"config is for stage {v}, not {stage}")
            elif key == "epoch":
                plan.epochs = int(v)
            elif key == "batch_size":
                plan.batch_size = int(v)
            elif key == "warmup_ratio":
                plan.warmup_ratio = float(v)
            elif key == "gradient_accumulation":
                plan.grad_accum = int(v)
            elif key == "max_steps":
                plan.max_steps = int(v) if v else None
            elif key == "weight_decay":
                plan.weight_decay = float(v)
            elif key.startswith("lr_") and key[3:] in ROW_NAMES:
                plan.lrs[ROW_NAMES[key[3:]]] = float(v)
            elif key.startswith("freeze_") and key[7:] in ROW_NAMES:
                g = ROW_NAMES[key[7:]]
                flag = _flag(key, v)
                if g in LOCKED and not flag:
                    raise StageConfigError(f"stage {stage}: {key[7:]} stays frozen in every stage")
                plan.frozen[g] = flag
            else:
                raise StageConfigError(f"unknown schedule key {key!r}")
        except ValueError as e:
            if isinstance(e, StageConfigError):
                raise
            raise StageConfigError(f"{key}: bad value {v!r}") from None
    plan.validate()
    return plan


def replace(plan: StagePlan, **kw) -> StagePlan:
    out = dataclasses.replace(plan, lrs=dict(plan.lrs), frozen=dict(plan.frozen), **kw)
    out.validate()
    return out
