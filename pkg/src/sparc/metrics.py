"""Continual-learning metrics over the task-wise accuracy matrix.

Row i of the matrix holds accuracies (percent) on tasks 1..i measured
after training task i; all metric functions are pure. Stages are
counted from 1 in every public signature, matching the row labels used
in the CSV serialization (``after_task_i`` / ``on_task_j``).
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .errors import FormatError, ValidationError
from .model import Architecture, ParameterCensus, SparcModel, analytic_census


class AccuracyMatrix:
    """Lower-triangular task-wise performance matrix.

    Continual runs append one row per stage (row i holds i entries). A
    jointly trained model evaluates once over every task, so a matrix
    may instead consist of a single full-width row.
    """

    def __init__(self, rows: Optional[List[List[float]]] = None):
        self.rows: List[List[float]] = rows if rows is not None else []
        for i, row in enumerate(self.rows, 1):
            if len(row) != i and not (i == 1 and len(self.rows) == 1):
                raise ValidationError(f"row {i} must have {i} entries, got {len(row)}")

    def add_row(self, accuracies: Sequence[float]) -> None:
        if len(accuracies) != len(self.rows) + 1:
            raise ValidationError(
                f"row {len(self.rows) + 1} must have {len(self.rows) + 1} entries, "
                f"got {len(accuracies)}"
            )
        self.rows.append([float(a) for a in accuracies])

    @property
    def num_stages(self) -> int:
        return len(self.rows)

    def diagonal(self) -> List[float]:
        return [row[i] for i, row in enumerate(self.rows)]

    def to_csv(self) -> str:
        width = len(self.rows[-1]) if self.rows else 0
        out = io.StringIO()
        out.write("," + ",".join(f"on_task_{j + 1}" for j in range(width)) + "\n")
        for i, row in enumerate(self.rows):
            cells = [repr(v) for v in row] + [""] * (width - len(row))
            out.write(f"after_task_{i + 1}," + ",".join(cells) + "\n")
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "AccuracyMatrix":
        lines = [line for line in text.splitlines() if line.strip()]
        if not lines or not lines[0].startswith(","):
            raise FormatError("accuracy matrix CSV must start with a header row", offset=0)
        rows = []
        body = lines[1:]
        for lineno, line in enumerate(body, 1):
            cells = line.split(",")
            if cells[0] != f"after_task_{lineno}":
                raise FormatError(
                    f"expected row label after_task_{lineno}, got {cells[0]!r}", offset=lineno
                )
            values = [c for c in cells[1:] if c != ""]
            if len(values) != lineno and not (lineno == 1 and len(body) == 1):
                raise FormatError(
                    f"row {lineno} should carry {lineno} values, got {len(values)}",
                    offset=lineno,
                )
            rows.append([float(v) for v in values])
        return cls(rows)


def final_accuracy(matrix: AccuracyMatrix) -> float:
    """Mean accuracy over all tasks at the final stage."""
    if not matrix.rows:
        raise ValidationError("empty accuracy matrix")
    return float(np.mean(matrix.rows[-1]))


def average_incremental_accuracy(matrix: AccuracyMatrix) -> float:
    """Mean over stages of the per-stage mean accuracy."""
    if not matrix.rows:
        raise ValidationError("empty accuracy matrix")
    return float(np.mean([np.mean(row) for row in matrix.rows]))


def forgetting(matrix: AccuracyMatrix) -> float:
    """Average decline from a task's initial accuracy to its final accuracy."""
    if matrix.num_stages < 2:
        raise ValidationError("forgetting needs at least two stages")
    last = matrix.rows[-1]
    declines = [matrix.rows[j][j] - last[j] for j in range(matrix.num_stages - 1)]
    return float(np.mean(declines))


def stability(matrix: AccuracyMatrix, stage: Optional[int] = None) -> float:
    """Mean accuracy across all preceding tasks at the given stage (1-based)."""
    t = matrix.num_stages if stage is None else stage
    if t < 2:
        raise ValidationError("stability is defined from the second stage onward")
    if t > matrix.num_stages:
        raise ValidationError(f"stage {t} beyond the {matrix.num_stages} recorded stages")
    return float(np.mean(matrix.rows[t - 1][: t - 1]))


def plasticity(matrix: AccuracyMatrix, stage: Optional[int] = None) -> float:
    """Mean first-time accuracy of tasks 1..stage (diagonal mean)."""
    t = matrix.num_stages if stage is None else stage
    if t < 1 or t > matrix.num_stages:
        raise ValidationError(f"stage {t} beyond the {matrix.num_stages} recorded stages")
    return float(np.mean(matrix.diagonal()[:t]))


def tradeoff(s: float, p: float) -> float:
    """Harmonic mean of stability and plasticity; 0 when both vanish."""
    if s + p == 0:
        return 0.0
    return 2.0 * s * p / (s + p)


@dataclass
class BiasProfile:
    """Normalized per-task prediction mass plus per-head weight norms."""

    probabilities: List[float]
    head_norms: List[float]


def task_probabilities(model: SparcModel, stream, batch_size: int = 256) -> List[float]:
    """Fraction of global predictions landing in each task's class range.

    Requires a balanced test set (equal sample counts per task) so the
    profile of an unbiased, accurate model is uniform.
    """
    counts_per_task = [t.test_images.shape[0] for t in stream.tasks[: model.num_tasks]]
    if len(set(counts_per_task)) != 1:
        raise ValidationError(f"test set is not balanced across tasks: {counts_per_task}")
    offsets = [model.class_offset(t) for t in range(model.num_tasks)]
    bounds = offsets + [model.total_classes]
    hits = np.zeros(model.num_tasks, dtype=np.int64)
    total = 0
    for task in stream.tasks[: model.num_tasks]:
        images = task.test_images
        for start in range(0, images.shape[0], batch_size):
            preds = model.predict_class_il(images[start : start + batch_size])
            hits += np.histogram(preds, bins=bounds)[0]
            total += preds.size
    return [float(h) / total for h in hits]


def head_l2_norms(model: SparcModel) -> List[float]:
    """Frobenius norm of each task head's weight matrix."""
    return [
        float(np.sqrt((wm.head.weight.data.astype(np.float64) ** 2).sum()))
        for wm in model.working
    ]


def bias_profile(model: SparcModel, stream) -> BiasProfile:
    return BiasProfile(task_probabilities(model, stream), head_l2_norms(model))


def growth_table(
    arch: Architecture, total_classes: int, task_counts: Sequence[int]
) -> List[tuple]:
    """(task count, census) rows with the class pool split evenly per count."""
    rows = []
    for k in task_counts:
        if total_classes % k != 0:
            raise ValidationError(f"{total_classes} classes do not divide into {k} tasks")
        census: ParameterCensus = analytic_census(arch, [total_classes // k] * k)
        rows.append((k, census))
    return rows
