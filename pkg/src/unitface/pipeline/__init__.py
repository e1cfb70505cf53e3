"""Staged training: schedule, synthetic corpus, optimiser, checkpoints."""

from .checkpoint import Checkpoint, FormatError, load_checkpoint, save_checkpoint
from .corpus import SyntheticCorpus, generate_corpus
from .stages import StageConfigError, StagePlan, stage_plan
from .training import TrainReport, train_stage

__all__ = [
    "Checkpoint", "FormatError", "load_checkpoint", "save_checkpoint",
    "SyntheticCorpus", "generate_corpus",
    "StageConfigError", "StagePlan", "stage_plan",
    "TrainReport", "train_stage",
]
