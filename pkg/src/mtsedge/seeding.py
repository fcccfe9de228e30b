"""Named random streams derived from one 64-bit seed.

Every consumer (parameter init, shuffling, synthetic data, augmentation)
draws from its own stream, so adding a consumer or reordering calls never
perturbs the others.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed, name):
    """Independent Generator for (seed, name)."""
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag]))
