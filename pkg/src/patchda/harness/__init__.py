"""Training driver, evaluation, checkpoints, visualisation and the CLI."""

from patchda.harness.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from patchda.harness.config import ExperimentConfig, TrainConfig, config_from_json, load_config
from patchda.harness.metrics import MetricsReport, accuracy_report
from patchda.harness.train import evaluate, train_adapt, train_local
from patchda.harness.visualize import visualize_patches

__all__ = [
    "Checkpoint",
    "ExperimentConfig",
    "MetricsReport",
    "TrainConfig",
    "accuracy_report",
    "config_from_json",
    "evaluate",
    "load_checkpoint",
    "load_config",
    "save_checkpoint",
    "train_adapt",
    "train_local",
    "visualize_patches",
]
