"""Seeded random streams.

Every stream is a ``numpy.random.Generator`` over PCG64. Child streams are
derived from a master seed plus integer keys through ``SeedSequence``, so a
stream depends only on ``(seed, *keys)`` and never on call order.
"""
from __future__ import annotations

import numpy as np

RNG_ALGORITHM = "numpy.PCG64/SeedSequence"


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Return the stream identified by ``seed`` and the optional ``keys``."""
    entropy = [int(seed)] + [int(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


class StreamFactory:
    """Hands out independent, keyed child streams of one master seed."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def stream(self, *keys: int) -> np.random.Generator:
        return make_rng(self.seed, *keys)

    @property
    def algorithm(self) -> str:
        return RNG_ALGORITHM
