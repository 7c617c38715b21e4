"""Fixed-capacity replay buffer maintained by reservoir sampling."""

from __future__ import annotations

import random
from typing import List, Tuple

import numpy as np

from .errors import ValidationError


class ReplayBuffer:
    """Uniform random sample of every item seen so far.

    The first ``capacity`` insertions fill the buffer; afterwards the
    (n+1)-th item replaces a uniformly random slot with probability
    capacity/(n+1), which keeps each seen item's retention probability
    at capacity/n.
    """

    def __init__(self, capacity: int, rng: random.Random):
        if capacity < 1:
            raise ValidationError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.rng = rng
        self.items: List[Tuple[np.ndarray, int]] = []
        self.seen = 0

    def __len__(self) -> int:
        return len(self.items)

    def insert(self, image: np.ndarray, label: int) -> None:
        if len(self.items) < self.capacity:
            self.items.append((image, label))
        else:
            slot = self.rng.randrange(self.seen + 1)
            if slot < self.capacity:
                self.items[slot] = (image, label)
        self.seen += 1

    def draw(self, count: int) -> Tuple[np.ndarray, np.ndarray]:
        """Uniform draws with replacement."""
        if not self.items:
            raise ValidationError("cannot draw from an empty buffer")
        picks = [self.items[self.rng.randrange(len(self.items))] for _ in range(count)]
        images = np.stack([p[0] for p in picks])
        labels = np.asarray([p[1] for p in picks], dtype=np.int64)
        return images, labels
