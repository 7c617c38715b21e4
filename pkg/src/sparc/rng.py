"""Deterministic random-stream derivation.

Every source of randomness in an experiment is a named substream of the
single experiment seed, so that fixing the seed fixes the whole
transcript (splits, parameter init, batch order, buffer draws) and
independent components never share generator state.
"""

from __future__ import annotations

import hashlib
import random

import numpy as np


def derive_seed(root_seed: int, *names) -> int:
    """Map (root seed, stream name parts) to a stable 64-bit seed."""
    key = repr(int(root_seed)) + "/" + "/".join(str(n) for n in names)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(root_seed: int, *names) -> np.random.Generator:
    """Independent numpy generator for the named substream."""
    return np.random.default_rng(derive_seed(root_seed, *names))


def py_substream(root_seed: int, *names) -> random.Random:
    """Independent stdlib generator (used for cheap per-item draws)."""
    return random.Random(derive_seed(root_seed, *names))
