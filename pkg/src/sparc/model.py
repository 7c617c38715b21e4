"""The continual model: per-task working memories over a shared semantic memory.

Each task owns a full sub-network (stem, residual blocks, batch norms,
classifier head). The pointwise halves marked shared are common tensors
injected into every task's forward pass; they are learned by gradient
descent only during the first task and afterwards change only through
the exponential-moving-average consolidation applied when a task ends.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import DimensionError, StateError, TaskNotFoundError, ValidationError
from .layers import ClassifierHead, ResidualBlock, SplitDscUnit, TaskBatchNorm, fan_in_normal
from .rng import substream


@dataclass(frozen=True)
class Architecture:
    """Static backbone description shared by every task."""

    input_channels: int
    filters: tuple  # per-layer, per-task channel widths
    kernel: int = 3
    blocks_per_layer: int = 2
    projection_skips: bool = False

    def __post_init__(self):
        if not self.filters:
            raise ValidationError("at least one layer width is required")
        for w in self.filters:
            if w < 2 or w % 2 != 0:
                raise ValidationError(
                    f"layer widths must be even and >= 2 so the pointwise bank "
                    f"splits into equal task/shared halves, got {w}"
                )

    @property
    def depth(self) -> int:
        return len(self.filters)

    @property
    def feature_dim(self) -> int:
        return self.filters[-1]

    def unit_plan(self):
        """(in_channels, out_channels, stride) for the stem and every block unit."""
        plan = [(self.input_channels, self.filters[0], 1)]
        prev = self.filters[0]
        for layer_idx, width in enumerate(self.filters):
            for block in range(self.blocks_per_layer):
                stride = 2 if (layer_idx > 0 and block == 0) else 1
                plan.append((prev, width, stride))
                plan.append((width, width, 1))
                prev = width
        return plan

    def block_plan(self):
        """(in_channels, out_channels, stride) for every residual block."""
        plan = []
        prev = self.filters[0]
        for layer_idx, width in enumerate(self.filters):
            for block in range(self.blocks_per_layer):
                stride = 2 if (layer_idx > 0 and block == 0) else 1
                plan.append((prev, width, stride))
                prev = width
        return plan


class SemanticMemory:
    """Shared pointwise banks (one per unit position) plus the EMA rate."""

    def __init__(self, alpha: float):
        if not 0.0 <= alpha <= 1.0:
            raise ValidationError(f"alpha must lie in [0, 1], got {alpha}")
        self.alpha = float(alpha)
        self.banks: List[Tensor] = []

    def initialize(self, arch: Architecture, rng: np.random.Generator) -> None:
        self.banks = []
        for in_ch, out_ch, _stride in arch.unit_plan():
            shared_cols = out_ch - out_ch // 2
            self.banks.append(
                Tensor(fan_in_normal(rng, (in_ch, shared_cols), in_ch), requires_grad=True)
            )

    def lock_against_gradients(self) -> None:
        """After the first task, the banks change only via consolidation."""
        for bank in self.banks:
            bank.requires_grad = False
            bank.grad = None
            bank.data.flags.writeable = False

    def parameters(self):
        return list(self.banks)


class WorkingMemory:
    """All task-owned state for one task."""

    def __init__(
        self,
        stem: SplitDscUnit,
        stem_bn: TaskBatchNorm,
        blocks: List[ResidualBlock],
        head: ClassifierHead,
    ):
        self.stem = stem
        self.stem_bn = stem_bn
        self.blocks = blocks
        self.head = head
        self.frozen = False

    @classmethod
    def create(
        cls,
        arch: Architecture,
        num_classes: int,
        class_offset: int,
        rng: np.random.Generator,
    ) -> "WorkingMemory":
        pad = arch.kernel // 2
        stem = SplitDscUnit.create(
            rng, arch.input_channels, arch.filters[0], arch.kernel, 1, pad
        )
        stem_bn = TaskBatchNorm(arch.filters[0])
        blocks = [
            ResidualBlock.create(rng, in_ch, out_ch, arch.kernel, stride, arch.projection_skips)
            for in_ch, out_ch, stride in arch.block_plan()
        ]
        head = ClassifierHead.create(rng, arch.feature_dim, num_classes, class_offset)
        return cls(stem, stem_bn, blocks, head)

    def units(self) -> List[SplitDscUnit]:
        """Split-DSC units in the same order as the semantic banks."""
        out = [self.stem]
        for block in self.blocks:
            out.extend([block.unit1, block.unit2])
        return out

    def batch_norms(self) -> List[TaskBatchNorm]:
        out = [self.stem_bn]
        for block in self.blocks:
            out.extend([block.bn1, block.bn2])
        return out

    def parameters(self):
        params = self.stem.parameters() + self.stem_bn.parameters()
        for block in self.blocks:
            params += block.parameters()
        params += self.head.parameters()
        return params

    def freeze(self) -> None:
        for p in self.parameters():
            p.freeze()
        for bn in self.batch_norms():
            bn.frozen = True
            bn.running_mean.flags.writeable = False
            bn.running_var.flags.writeable = False
        self.frozen = True


class ActivationRecord:
    """Per-sample maxima of the current task's head outputs.

    Filled during training-mode forward passes of the final epoch and
    consumed once by head re-normalization.
    """

    def __init__(self):
        self.values: List[float] = []

    def append_batch(self, logits) -> None:
        data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
        self.values.extend(float(v) for v in data.max(axis=1))

    def __len__(self) -> int:
        return len(self.values)


def quartile(values, q: float) -> float:
    """Order statistic with linear interpolation at position (n-1)*q."""
    data = np.sort(np.asarray(values, dtype=np.float64))
    if data.size == 0:
        raise ValidationError("quartile of an empty set")
    pos = (data.size - 1) * q
    lo = int(np.floor(pos))
    hi = int(np.ceil(pos))
    if lo == hi:
        return float(data[lo])
    frac = pos - lo
    return float(data[lo] * (1.0 - frac) + data[hi] * frac)


def _replace_data(t: Tensor, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    if t.frozen:
        arr.flags.writeable = False
    t.data = arr


def renormalize_head(head: ClassifierHead, record: ActivationRecord, kappa: float) -> Optional[float]:
    """Rescale W and B by kappa/eta, eta the largest non-outlier activation.

    The outlier filter keeps activations at or below Q3 + IQR. Returns
    the applied factor, or None when the record degenerates (no element
    passes the filter, or eta <= 0) and the head is left unchanged.
    """
    if len(record) == 0:
        raise StateError("re-normalization requires a non-empty activation record")
    values = np.asarray(record.values, dtype=np.float64)
    q1 = quartile(values, 0.25)
    q3 = quartile(values, 0.75)
    threshold = q3 + (q3 - q1)
    kept = values[values <= threshold]
    if kept.size == 0:
        return None
    eta = float(kept.max())
    if eta <= 0:
        return None
    factor = float(kappa) / eta
    f32 = np.float32(factor)
    _replace_data(head.weight, head.weight.data * f32)
    _replace_data(head.bias, head.bias.data * f32)
    return factor


@dataclass
class ParameterCensus:
    """Trainable-parameter counts; running moments are excluded."""

    per_task: List[int]
    shared: int
    breakdown: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.per_task) + self.shared


class SparcModel:
    """Ordered working memories over one shared semantic memory."""

    def __init__(self, arch: Architecture, alpha: float):
        self.arch = arch
        self.semantic = SemanticMemory(alpha)
        self.working: List[WorkingMemory] = []
        self.classes_per_task: List[int] = []

    @property
    def num_tasks(self) -> int:
        return len(self.working)

    @property
    def total_classes(self) -> int:
        return sum(self.classes_per_task)

    def class_offset(self, task_id: int) -> int:
        return sum(self.classes_per_task[:task_id])

    def _check_task(self, task_id: int) -> WorkingMemory:
        if not 0 <= task_id < len(self.working):
            raise TaskNotFoundError(f"unknown task {task_id}; {len(self.working)} allocated")
        return self.working[task_id]

    def allocate_working_memory(self, num_classes: int, seed: int) -> int:
        if num_classes < 1:
            raise ValidationError(f"num_classes must be positive, got {num_classes}")
        if self.working and not self.working[-1].frozen:
            raise StateError("previous task must be frozen before allocating a new one")
        if not self.semantic.banks:
            self.semantic.initialize(self.arch, substream(seed, "semantic"))
        task_id = len(self.working)
        wm = WorkingMemory.create(
            self.arch, num_classes, self.total_classes, substream(seed, "task")
        )
        self.working.append(wm)
        self.classes_per_task.append(num_classes)
        return task_id

    def forward_task(self, task_id: int, x, training: bool = False) -> Tensor:
        wm = self._check_task(task_id)
        if training and wm.frozen:
            raise StateError(f"task {task_id} is frozen; train-mode forward rejected")
        if not isinstance(x, Tensor):
            x = Tensor(x)
        banks = self.semantic.banks
        h = ag.relu(wm.stem_bn.forward(wm.stem.forward(x, banks[0]), training))
        for b, block in enumerate(wm.blocks):
            h = block.forward(h, banks[2 * b + 1], banks[2 * b + 2], training)
        features = ag.global_avg_pool(h)
        return wm.head.forward(features)

    def trainable_parameters(self, task_id: int):
        """Parameters updated while training the given task."""
        wm = self._check_task(task_id)
        params = wm.parameters()
        if task_id == 0:
            params += self.semantic.parameters()
        return params

    def freeze_task(self, task_id: int) -> None:
        wm = self._check_task(task_id)
        wm.freeze()
        if task_id == 0:
            self.semantic.lock_against_gradients()

    def consolidate_semantic(self, finished_task: int) -> None:
        """Blend shared banks toward the finished task's pointwise filters."""
        wm = self._check_task(finished_task)
        if finished_task < 1:
            raise StateError("consolidation applies from the second task onward")
        alpha = self.semantic.alpha
        if alpha == 1.0:
            return
        for bank, unit in zip(self.semantic.banks, wm.units()):
            src = unit.taskwise_pointwise.data
            if bank.data.shape != src.shape:
                raise DimensionError(
                    f"shared bank {bank.data.shape} does not match task filters {src.shape}"
                )
            if alpha == 0.0:
                updated = src.copy()
            else:
                a = np.float32(alpha)
                updated = a * bank.data + (np.float32(1.0) - a) * src
            updated.flags.writeable = False
            bank.data = updated

    # ----- inference over all tasks (no task id available) -----

    def class_il_logits(self, x, num_tasks: Optional[int] = None) -> np.ndarray:
        """Concatenated head outputs of the first ``num_tasks`` sub-networks."""
        n = self.num_tasks if num_tasks is None else num_tasks
        if n < 1 or n > self.num_tasks:
            raise StateError(f"cannot run {n} sub-networks; {self.num_tasks} allocated")
        with ag.no_grad():
            parts = [self.forward_task(t, x, training=False).data for t in range(n)]
        return np.concatenate(parts, axis=1)

    def predict_class_il(self, x, num_tasks: Optional[int] = None) -> np.ndarray:
        """Global argmax over the concatenated class vector (ties: lowest index)."""
        return self.class_il_logits(x, num_tasks).argmax(axis=1)

    def count_parameters(self) -> ParameterCensus:
        per_task = []
        breakdown = {}
        for t, wm in enumerate(self.working):
            n = sum(p.size for p in wm.parameters())
            per_task.append(n)
            breakdown[f"task_{t + 1}"] = n
        shared = sum(b.size for b in self.semantic.banks)
        breakdown["shared"] = shared
        return ParameterCensus(per_task, shared, breakdown)


def analytic_census(
    arch: Architecture,
    classes_per_task,
) -> ParameterCensus:
    """Parameter counts from the layer formulas, without instantiating tensors.

    A depthwise-separable unit over c1 -> c2 channels with a k x k kernel
    costs k*k*c1 + c1*c2; the pointwise part splits into floor(c2/2)
    task columns and the remainder shared.
    """
    k = arch.kernel
    dw = 0
    task_pw = 0
    shared_pw = 0
    for in_ch, out_ch, _stride in arch.unit_plan():
        dw += k * k * in_ch
        task_cols = out_ch // 2
        task_pw += in_ch * task_cols
        shared_pw += in_ch * (out_ch - task_cols)
    bn = 2 * arch.filters[0] + sum(
        2 * (2 * out_ch) for _in, out_ch, _s in arch.block_plan()
    )
    projections = 0
    if arch.projection_skips:
        projections = sum(
            in_ch * out_ch
            for in_ch, out_ch, stride in arch.block_plan()
            if stride != 1 or in_ch != out_ch
        )
    backbone = dw + task_pw + bn + projections
    per_task = [backbone + arch.feature_dim * c + c for c in classes_per_task]
    breakdown = {f"task_{t + 1}": n for t, n in enumerate(per_task)}
    breakdown["shared"] = shared_pw
    return ParameterCensus(per_task, shared_pw, breakdown)


def complete_isolation_total(arch: Architecture, classes_per_task) -> int:
    """Total if every pointwise filter were task-owned (no sharing)."""
    census = analytic_census(arch, classes_per_task)
    return census.total + (len(classes_per_task) - 1) * census.shared
