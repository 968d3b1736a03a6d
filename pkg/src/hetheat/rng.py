"""Counter-based random streams.

Each ``(seed, stream_id)`` pair maps to an independent Philox stream, so the
draws of a replica never depend on how many other replicas were generated,
nor in which order or on how many workers.
"""
from __future__ import annotations

import numpy as np

# domain tags keep streams for different purposes disjoint
CHOLESKY = 0
NOISE_GRID = 1
REFERENCE = 2


def stream(seed: int, stream_id: int, domain: int = CHOLESKY) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(domain), int(stream_id)])
    return np.random.Generator(np.random.Philox(ss))


def normals(seed: int, stream_id: int, size, domain: int = CHOLESKY) -> np.ndarray:
    return stream(seed, stream_id, domain).standard_normal(size)


def derive(seed: int, *keys: int) -> int:
    """A 63-bit child seed determined by ``seed`` and integer ``keys``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) for k in keys])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
