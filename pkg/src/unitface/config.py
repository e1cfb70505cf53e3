"""Run configuration: flat key=value settings with unknown keys rejected."""

from __future__ import annotations

import os
from dataclasses import fields
from pathlib import Path

from .model import ModelConfig, desk_config
from .pipeline.stages import ROW_NAMES, parse_overrides

SEED_ENV = "EXOMNI_SEED"

MODEL_KEYS = tuple(f.name for f in fields(ModelConfig))
SCHEDULE_KEYS = ("epoch", "batch_size", "warmup_ratio", "gradient_accumulation", "max_steps", "weight_decay",
                 *(f"lr_{r}" for r in ROW_NAMES), *(f"freeze_{r}" for r in ROW_NAMES))
RUN_KEYS = ("seed",)


class RunConfigError(ValueError):
    pass


class RunConfig:
    """Model, schedule and run settings parsed from a key=value file."""

    def __init__(self, values: dict[str, str] | None = None):
        values = dict(values or {})
        unknown = sorted(k for k in values if k not in MODEL_KEYS + SCHEDULE_KEYS + RUN_KEYS + ("stage",))
        if unknown:
            raise RunConfigError(f"unknown config key(s): {', '.join(unknown)}")
        self.values = values

    @classmethod
    def load(cls, path) -> "RunConfig":
        if path is None:
            return cls()
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise RunConfigError(f"cannot read config {path}: {e.strerror}") from None
        try:
            return cls(parse_overrides(text))
        except ValueError as e:
            raise RunConfigError(f"{path}: {e}") from None

    def model_values(self) -> dict[str, str]:
        return {k: v for k, v in self.values.items() if k in MODEL_KEYS}

    def schedule_overrides(self) -> dict[str, str]:
        return {k: v for k, v in self.values.items() if k in SCHEDULE_KEYS or k == "stage"}

    def model_config(self, seed: int) -> ModelConfig:
        """Desk-scale defaults, config file entries on top; init seed follows the run seed."""
        base = desk_config(init_seed=seed).to_dict()
        base.update(self.model_values())
        try:
            return ModelConfig.from_dict(base)
        except ValueError as e:
            raise RunConfigError(f"bad model setting: {e}") from None

    def seed(self, flag: int | None) -> int:
        return resolve_seed(flag, self.values.get("seed"))


def resolve_seed(flag: int | None, configured: str | None = None) -> int:
    """Flag beats the environment, which beats the config file; default 0."""
    if flag is not None:
        return int(flag)
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise RunConfigError(f"{SEED_ENV}={env!r} is not an integer") from None
    if configured is not None:
        try:
            return int(configured)
        except ValueError:
            raise RunConfigError(f"seed={configured!r} is not an integer") from None
    return 0
