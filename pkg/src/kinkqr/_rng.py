"""Deterministic random streams built on the counter-based Philox generator.

Every stochastic routine in the package draws from ``stream(seed, *ids)``.
Philox is counter-based, so a (seed, stream-id) pair maps to the same byte
sequence on every platform and numpy version that ships the generator, which
is what makes fixed-seed outputs bit-reproducible.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def stream(seed: int, *ids: int) -> np.random.Generator:
    """Return an independent generator keyed by ``seed`` and a stream id tuple."""
    mixed = 0
    for part in ids:
        mixed = (mixed * 0x9E3779B97F4A7C15 + int(part) + 1) & _MASK64
    key = np.array([int(seed) & _MASK64, mixed], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
