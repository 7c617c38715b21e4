"""Rehearsal-free continual learning with isolated task sub-networks.

Each task trains its own depthwise-separable sub-network (working
memory) while half of every pointwise filter bank is shared across
tasks (semantic memory) and consolidated by an exponential moving
average when a task finishes. Classifier heads are re-normalized from
their own activation statistics to keep cross-task logits comparable.
"""

from .autograd import Tensor, backward, no_grad
from .config import ExperimentConfig, parse_config
from .data import Dataset, TaskStream, generate_blobs, read_spds, split_dataset, write_spds
from .engine import run_baseline, run_continual, train_task
from .errors import (
    ConfigError,
    DimensionError,
    FormatError,
    SparcError,
    StateError,
    TaskNotFoundError,
    ValidationError,
)
from .metrics import (
    AccuracyMatrix,
    average_incremental_accuracy,
    final_accuracy,
    forgetting,
    plasticity,
    stability,
    tradeoff,
)
from .model import Architecture, SparcModel, renormalize_head

__version__ = "0.1.0"

__all__ = [
    "AccuracyMatrix",
    "Architecture",
    "ConfigError",
    "Dataset",
    "DimensionError",
    "ExperimentConfig",
    "FormatError",
    "SparcError",
    "SparcModel",
    "StateError",
    "TaskNotFoundError",
    "TaskStream",
    "Tensor",
    "ValidationError",
    "average_incremental_accuracy",
    "backward",
    "final_accuracy",
    "forgetting",
    "generate_blobs",
    "no_grad",
    "parse_config",
    "plasticity",
    "read_spds",
    "renormalize_head",
    "run_baseline",
    "run_continual",
    "split_dataset",
    "stability",
    "tradeoff",
    "train_task",
    "write_spds",
]
