"""Seeded random streams.

Streams are numpy ``Generator`` objects over PCG64: the bit generator and the
ziggurat normal sampler are fixed algorithms, so a seed reproduces the same
draws on every platform numpy supports.
"""

from __future__ import annotations

import numpy as np


def seeded_rng(seed: int, *spawn_key: int) -> np.random.Generator:
    """Deterministic stream for ``seed``; ``spawn_key`` derives independent sub-streams.

    ``seeded_rng(s, i)`` is the stream for item ``i`` under master seed ``s``;
    it does not depend on how many other items were drawn before it.
    """
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in spawn_key))
    return np.random.Generator(np.random.PCG64(ss))
