"""Network building blocks.

A split depthwise-separable unit runs one spatial filter per channel,
then projects to a new channel space through two pointwise banks: a
task-owned bank producing channels [0, N_t) and a shared bank producing
channels [N_t, N), concatenated in that order. Batch normalization is
task-owned and applied to the full concatenated output of each unit.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import DimensionError, StateError

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


def fan_in_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Zero-mean Gaussian scaled by 1/sqrt(fan_in)."""
    return (rng.standard_normal(shape) / np.sqrt(fan_in)).astype(np.float32)


class SplitDscUnit:
    """Depthwise filters plus the task-owned half of the pointwise bank.

    The shared half lives outside the unit (one bank per unit position,
    common to all tasks) and is passed in at call time.
    """

    def __init__(self, depthwise: Tensor, taskwise_pointwise: Tensor, stride: int, padding: int):
        self.depthwise = depthwise
        self.taskwise_pointwise = taskwise_pointwise
        self.stride = stride
        self.padding = padding

    @classmethod
    def create(
        cls,
        rng: np.random.Generator,
        in_channels: int,
        out_channels: int,
        kernel: int,
        stride: int,
        padding: int,
    ) -> "SplitDscUnit":
        n_task = out_channels // 2
        depthwise = Tensor(
            fan_in_normal(rng, (in_channels, kernel, kernel), kernel * kernel),
            requires_grad=True,
        )
        taskwise = Tensor(
            fan_in_normal(rng, (in_channels, n_task), in_channels), requires_grad=True
        )
        return cls(depthwise, taskwise, stride, padding)

    @property
    def in_channels(self) -> int:
        return self.depthwise.shape[0]

    @property
    def task_channels(self) -> int:
        return self.taskwise_pointwise.shape[1]

    def forward(self, x: Tensor, shared_pointwise: Tensor) -> Tensor:
        if shared_pointwise.shape[0] != self.in_channels:
            raise DimensionError(
                f"shared pointwise expects {shared_pointwise.shape[0]} channels, "
                f"unit produces {self.in_channels}"
            )
        depth_out = ag.conv_depthwise(x, self.depthwise, self.stride, self.padding)
        task_half = ag.conv_pointwise(depth_out, self.taskwise_pointwise)
        shared_half = ag.conv_pointwise(depth_out, shared_pointwise)
        return ag.concat_channels(task_half, shared_half)

    def parameters(self):
        return [self.depthwise, self.taskwise_pointwise]


class TaskBatchNorm:
    """Batch normalization with task-owned affine and running moments.

    Train mode normalizes by batch moments and folds them into the
    running estimates; eval mode reads the running estimates and never
    mutates state.
    """

    def __init__(self, channels: int, momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
        self.gamma = Tensor(np.ones(channels, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)
        self.momentum = momentum
        self.eps = eps
        self.frozen = False

    def forward(self, x: Tensor, training: bool) -> Tensor:
        if training:
            if self.frozen:
                raise StateError("train-mode forward through a frozen batch norm")
            out, mean, var = ag.batch_norm_train(x, self.gamma, self.beta, self.eps)
            m = np.float32(self.momentum)
            self.running_mean = (1 - m) * self.running_mean + m * mean.astype(np.float32)
            self.running_var = (1 - m) * self.running_var + m * var.astype(np.float32)
            return out
        return ag.batch_norm_eval(
            x, self.gamma, self.beta, self.running_mean, self.running_var, self.eps
        )

    def freeze(self) -> None:
        self.gamma.freeze()
        self.beta.freeze()
        self.running_mean.flags.writeable = False
        self.running_var.flags.writeable = False
        self.frozen = True

    def parameters(self):
        return [self.gamma, self.beta]


class ResidualBlock:
    """Two split-DSC stages with batch norm, plus a skip path.

    The skip is the identity when shapes match. When the block changes
    shape it either subsamples spatially and zero-pads the new channels
    (parameter-free, the default) or applies a task-owned pointwise
    projection at matching stride.
    """

    def __init__(
        self,
        unit1: SplitDscUnit,
        bn1: TaskBatchNorm,
        unit2: SplitDscUnit,
        bn2: TaskBatchNorm,
        skip_projection: Optional[Tensor] = None,
    ):
        self.unit1 = unit1
        self.bn1 = bn1
        self.unit2 = unit2
        self.bn2 = bn2
        self.skip_projection = skip_projection

    @classmethod
    def create(
        cls,
        rng: np.random.Generator,
        in_channels: int,
        out_channels: int,
        kernel: int,
        stride: int,
        use_projection: bool,
    ) -> "ResidualBlock":
        pad = kernel // 2
        unit1 = SplitDscUnit.create(rng, in_channels, out_channels, kernel, stride, pad)
        bn1 = TaskBatchNorm(out_channels)
        unit2 = SplitDscUnit.create(rng, out_channels, out_channels, kernel, 1, pad)
        bn2 = TaskBatchNorm(out_channels)
        projection = None
        if use_projection and (stride != 1 or in_channels != out_channels):
            projection = Tensor(
                fan_in_normal(rng, (in_channels, out_channels), in_channels),
                requires_grad=True,
            )
        return cls(unit1, bn1, unit2, bn2, projection)

    @property
    def in_channels(self) -> int:
        return self.unit1.in_channels

    @property
    def out_channels(self) -> int:
        return self.bn2.gamma.shape[0]

    def _skip(self, x: Tensor) -> Tensor:
        stride = self.unit1.stride
        in_c = self.in_channels
        out_c = self.out_channels
        if self.skip_projection is not None:
            h = ag.subsample(x, stride) if stride != 1 else x
            return ag.conv_pointwise(h, self.skip_projection)
        if stride == 1 and in_c == out_c:
            return x
        h = ag.subsample(x, stride) if stride != 1 else x
        if out_c < in_c:
            raise DimensionError(
                f"identity skip cannot drop channels ({in_c} -> {out_c}); "
                "use a projection skip"
            )
        return ag.pad_channels(h, out_c - in_c) if out_c > in_c else h

    def forward(self, x: Tensor, shared1: Tensor, shared2: Tensor, training: bool) -> Tensor:
        h = ag.relu(self.bn1.forward(self.unit1.forward(x, shared1), training))
        h = self.bn2.forward(self.unit2.forward(h, shared2), training)
        return ag.relu(ag.add(h, self._skip(x)))

    def parameters(self):
        params = self.unit1.parameters() + self.bn1.parameters()
        params += self.unit2.parameters() + self.bn2.parameters()
        if self.skip_projection is not None:
            params.append(self.skip_projection)
        return params


class ClassifierHead:
    """Isolated fully connected layer over one task's class range."""

    def __init__(self, weight: Tensor, bias: Tensor, class_offset: int):
        self.weight = weight
        self.bias = bias
        self.class_offset = class_offset

    @classmethod
    def create(
        cls, rng: np.random.Generator, features: int, num_classes: int, class_offset: int
    ) -> "ClassifierHead":
        weight = Tensor(fan_in_normal(rng, (features, num_classes), features), requires_grad=True)
        bias = Tensor(np.zeros(num_classes, dtype=np.float32), requires_grad=True)
        return cls(weight, bias, class_offset)

    @property
    def num_classes(self) -> int:
        return self.weight.shape[1]

    def forward(self, features: Tensor) -> Tensor:
        return ag.linear(features, self.weight, self.bias)

    def parameters(self):
        return [self.weight, self.bias]
