"""Plain stochastic gradient descent over a registered parameter set."""

from __future__ import annotations

from typing import Iterable, Sequence

from .autograd import Tensor
from .errors import StateError, ValidationError


class Sgd:
    """p <- p - lr * grad(p) for each registered parameter.

    Gradients are left untouched by ``step``; call ``zero_grads``
    between batches.
    """

    def __init__(self, params: Iterable[Tensor], learning_rate: float):
        if learning_rate <= 0:
            raise ValidationError(f"learning_rate must be positive, got {learning_rate}")
        self.params: Sequence[Tensor] = list(params)
        self.learning_rate = float(learning_rate)

    def step(self) -> None:
        for p in self.params:
            if p.frozen:
                raise StateError("cannot step a frozen parameter")
            if p.grad is None:
                raise ValidationError("parameter has no gradient; run backward first")
            p.data -= p.data.dtype.type(self.learning_rate) * p.grad

    def zero_grads(self) -> None:
        for p in self.params:
            p.grad = None
