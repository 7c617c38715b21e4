"""Training loops, evaluation regimes, and the SGD/JOINT/ER baselines.

The per-task loop optimizes the cross-entropy objective over the task's
sub-network (plus the shared banks during the first task), records head
activations over the final epoch, then freezes the task, re-normalizes
its head, and consolidates the shared banks, in that order.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from . import autograd as ag
from .autograd import Tensor, backward, softmax_cross_entropy
from .buffer import ReplayBuffer
from .config import ExperimentConfig
from .data import Dataset, TaskData, TaskStream, generate_blobs, read_dataset_dir
from .errors import ConfigError, StateError, ValidationError
from .metrics import AccuracyMatrix
from .model import ActivationRecord, Architecture, SparcModel, renormalize_head
from .optim import Sgd
from .rng import derive_seed, py_substream, substream

EVAL_BATCH = 256


@dataclass
class TrainReport:
    losses: List[float]  # one mean loss per epoch
    activation_record: ActivationRecord
    duration: float
    seed: int
    renorm_factor: Optional[float] = None


def _epoch_order(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.permutation(n)


def architecture_for(config: ExperimentConfig, stream: TaskStream) -> Architecture:
    return Architecture(
        input_channels=stream.image_shape[0],
        filters=config.filters(),
        projection_skips=config.projection_skips,
    )


def resolve_dataset(config: ExperimentConfig) -> Tuple[Dataset, Dataset]:
    """Load the configured dataset (synthetic spec wins over a data path)."""
    if config.synthetic is not None:
        spec = parse_synthetic_spec(config.synthetic)
        return generate_blobs(spec["classes"], spec["n"], spec["size"], config.seed)
    if config.data is not None:
        return read_dataset_dir(config.data)
    raise ConfigError("no dataset source: set `data` or `synthetic`")


def parse_synthetic_spec(spec: str) -> dict:
    """Parse "classes=10,n=250,size=16" with those defaults."""
    values = {"classes": 10, "n": 250, "size": 16}
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ConfigError(f"synthetic: expected key=value, got {part!r}")
        key, raw = (p.strip() for p in part.split("=", 1))
        if key not in values:
            raise ConfigError(f"synthetic: unknown key {key!r}")
        try:
            values[key] = int(raw)
        except ValueError:
            raise ConfigError(f"synthetic: cannot parse {key}={raw!r}") from None
    return values


def train_task(
    model: SparcModel, task_id: int, task: TaskData, config: ExperimentConfig
) -> TrainReport:
    """Run the full per-task regime and finalize the task."""
    if task.train_images.shape[0] == 0:
        raise ValidationError(f"task {task_id} has no training data")
    for earlier in range(task_id):
        if not model.working[earlier].frozen:
            raise StateError(f"task {earlier} is still unfrozen")
    wm = model.working[task_id]
    if wm.frozen:
        raise StateError(f"task {task_id} already frozen")

    start = time.perf_counter()
    params = model.trainable_parameters(task_id)
    optimizer = Sgd(params, config.learning_rate)
    batch_rng = substream(config.seed, "batch", task_id)
    record = ActivationRecord()
    n = task.train_images.shape[0]
    losses: List[float] = []

    for epoch in range(config.epochs):
        final_epoch = epoch == config.epochs - 1
        order = _epoch_order(batch_rng, n)
        loss_sum = 0.0
        for start_idx in range(0, n, config.batch_size):
            idx = order[start_idx : start_idx + config.batch_size]
            x = task.train_images[idx]
            y = task.train_labels[idx]
            logits = model.forward_task(task_id, x, training=True)
            if final_epoch:
                record.append_batch(logits)
            loss = softmax_cross_entropy(logits, y)
            optimizer.zero_grads()
            backward(loss)
            optimizer.step()
            loss_sum += float(loss.data) * len(idx)
        losses.append(loss_sum / n)

    model.freeze_task(task_id)
    factor = renormalize_head(wm.head, record, config.kappa)
    if task_id >= 1:
        model.consolidate_semantic(task_id)

    return TrainReport(
        losses=losses,
        activation_record=record,
        duration=time.perf_counter() - start,
        seed=config.seed,
        renorm_factor=factor,
    )


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def evaluate_task_il(model: SparcModel, stream: TaskStream, upto_task: int) -> List[float]:
    """Accuracy (percent) per task when the task id is given at test time."""
    accuracies = []
    for j in range(upto_task + 1):
        if j >= model.num_tasks:
            raise StateError(f"task {j} not trained")
        task = stream.tasks[j]
        correct = 0
        with ag.no_grad():
            for s in range(0, task.test_images.shape[0], EVAL_BATCH):
                x = task.test_images[s : s + EVAL_BATCH]
                logits = model.forward_task(j, x, training=False).data
                correct += int((logits.argmax(axis=1) == task.test_labels[s : s + EVAL_BATCH]).sum())
        accuracies.append(100.0 * correct / task.test_images.shape[0])
    return accuracies


def evaluate_class_il(
    model: SparcModel, stream: TaskStream, upto_task: int
) -> Tuple[List[float], float]:
    """Per-task and overall accuracy with no task id: global argmax over all heads."""
    if upto_task >= model.num_tasks:
        raise StateError(f"task {upto_task} not trained")
    per_task = []
    correct_total = 0
    count_total = 0
    for j in range(upto_task + 1):
        task = stream.tasks[j]
        offset = model.class_offset(j)
        correct = 0
        for s in range(0, task.test_images.shape[0], EVAL_BATCH):
            x = task.test_images[s : s + EVAL_BATCH]
            preds = model.predict_class_il(x, num_tasks=upto_task + 1)
            truth = offset + task.test_labels[s : s + EVAL_BATCH]
            correct += int((preds == truth).sum())
        per_task.append(100.0 * correct / task.test_images.shape[0])
        correct_total += correct
        count_total += task.test_images.shape[0]
    return per_task, 100.0 * correct_total / count_total


# ---------------------------------------------------------------------------
# full runs
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    model: SparcModel
    class_il: AccuracyMatrix
    task_il: AccuracyMatrix
    reports: List[TrainReport] = field(default_factory=list)


def run_continual(
    stream: TaskStream,
    config: ExperimentConfig,
    task_callback: Optional[Callable[[SparcModel, int], None]] = None,
) -> RunResult:
    """Allocate, train, and evaluate task by task; fills both matrices."""
    model = SparcModel(architecture_for(config, stream), alpha=config.alpha)
    class_matrix = AccuracyMatrix()
    task_matrix = AccuracyMatrix()
    reports = []
    for t, task in enumerate(stream.tasks):
        model.allocate_working_memory(task.num_classes, derive_seed(config.seed, "init", t))
        reports.append(train_task(model, t, task, config))
        class_row, _overall = evaluate_class_il(model, stream, t)
        class_matrix.add_row(class_row)
        task_matrix.add_row(evaluate_task_il(model, stream, t))
        if task_callback is not None:
            task_callback(model, t)
    return RunResult(model, class_matrix, task_matrix, reports)


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

BASELINE_KINDS = ("sgd", "joint", "er")


def build_single_head_model(config: ExperimentConfig, stream: TaskStream) -> SparcModel:
    """One non-isolated backbone with a head over all classes.

    Built from the same split-DSC blocks as the continual model, but the
    single working memory never freezes, so the nominally shared half of
    each pointwise bank trains as ordinary filters throughout.
    """
    model = SparcModel(architecture_for(config, stream), alpha=1.0)
    model.allocate_working_memory(stream.total_classes, derive_seed(config.seed, "init", "baseline"))
    return model


def _global_labels(task: TaskData) -> np.ndarray:
    return task.class_offset + task.train_labels


def _train_epochs(
    model: SparcModel,
    images: np.ndarray,
    labels: np.ndarray,
    config: ExperimentConfig,
    batch_stream: str,
    buffer: Optional[ReplayBuffer] = None,
) -> List[float]:
    """Epoch loop for the single-head model; mixes in replay when given."""
    optimizer = Sgd(model.trainable_parameters(0), config.learning_rate)
    rng = substream(config.seed, "batch", batch_stream)
    n = images.shape[0]
    new_chunk = (config.batch_size + 1) // 2 if buffer is not None else config.batch_size
    losses = []
    for _epoch in range(config.epochs):
        order = _epoch_order(rng, n)
        loss_sum = 0.0
        seen = 0
        for start_idx in range(0, n, new_chunk):
            idx = order[start_idx : start_idx + new_chunk]
            x = images[idx]
            y = labels[idx]
            if buffer is not None and len(buffer) > 0:
                replay_x, replay_y = buffer.draw(config.batch_size - len(idx))
                x = np.concatenate([x, replay_x])
                y = np.concatenate([y, replay_y])
            logits = model.forward_task(0, x, training=True)
            loss = softmax_cross_entropy(logits, y)
            optimizer.zero_grads()
            backward(loss)
            optimizer.step()
            loss_sum += float(loss.data) * len(idx)
            seen += len(idx)
            if buffer is not None:
                for i in idx:
                    buffer.insert(images[i], int(labels[i]))
        losses.append(loss_sum / seen)
    return losses


def evaluate_baseline(
    model: SparcModel, stream: TaskStream, upto_task: int
) -> Tuple[List[float], List[float]]:
    """(Class-IL row, Task-IL row) for the single-head model.

    Class-IL takes the global argmax; Task-IL masks the logits down to
    the task's class range.
    """
    class_row = []
    task_row = []
    with ag.no_grad():
        for j in range(upto_task + 1):
            task = stream.tasks[j]
            offset = task.class_offset
            span = task.num_classes
            class_correct = 0
            task_correct = 0
            for s in range(0, task.test_images.shape[0], EVAL_BATCH):
                x = task.test_images[s : s + EVAL_BATCH]
                truth_local = task.test_labels[s : s + EVAL_BATCH]
                logits = model.forward_task(0, x, training=False).data
                class_correct += int((logits.argmax(axis=1) == offset + truth_local).sum())
                masked = logits[:, offset : offset + span]
                task_correct += int((masked.argmax(axis=1) == truth_local).sum())
            total = task.test_images.shape[0]
            class_row.append(100.0 * class_correct / total)
            task_row.append(100.0 * task_correct / total)
    return class_row, task_row


def run_baseline(kind: str, stream: TaskStream, config: ExperimentConfig) -> RunResult:
    if kind not in BASELINE_KINDS:
        raise ValidationError(f"unknown baseline kind {kind!r}; expected one of {BASELINE_KINDS}")
    model = build_single_head_model(config, stream)
    class_matrix = AccuracyMatrix()
    task_matrix = AccuracyMatrix()
    losses: List[float] = []

    if kind == "joint":
        images = np.concatenate([t.train_images for t in stream.tasks])
        labels = np.concatenate([_global_labels(t) for t in stream.tasks])
        losses = _train_epochs(model, images, labels, config, "joint")
        class_row, task_row = evaluate_baseline(model, stream, stream.num_tasks - 1)
        # a single stage: the matrix has one row covering every task
        class_matrix.rows.append(class_row)
        task_matrix.rows.append(task_row)
    else:
        buffer = None
        if kind == "er":
            buffer = ReplayBuffer(config.buffer_size, py_substream(config.seed, "buffer"))
        for t, task in enumerate(stream.tasks):
            losses += _train_epochs(
                model, task.train_images, _global_labels(task), config, t, buffer
            )
            class_row, task_row = evaluate_baseline(model, stream, t)
            class_matrix.add_row(class_row)
            task_matrix.add_row(task_row)

    result = RunResult(model, class_matrix, task_matrix)
    result.reports = [
        TrainReport(losses=losses, activation_record=ActivationRecord(), duration=0.0, seed=config.seed)
    ]
    return result
