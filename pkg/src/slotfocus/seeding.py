"""Named random streams derived from one 64-bit seed.

Each consumer (initialisation, shuffling, dropout, augmentation, ...) draws
from its own stream keyed by a fixed label, so enabling one feature never
shifts the numbers another feature sees.
"""

from __future__ import annotations

import zlib

import numpy as np

INIT = "init"
SHUFFLE = "shuffle"
DROPOUT = "dropout"
AUGMENT = "augment"
SPLIT = "split"


def stream(seed: int, label: str, *extra: int) -> np.random.Generator:
    """Independent PCG64 generator for ``(seed, label, *extra)``."""
    if seed < 0 or seed >= 2 ** 64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    words = [seed & 0xFFFFFFFF, seed >> 32, zlib.crc32(label.encode("utf-8")), *extra]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))
