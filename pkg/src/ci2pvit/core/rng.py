"""Seeded random streams.

Backed by numpy's PCG64 bit generator, which has a fixed, published
output sequence for a given seed on every platform. Draws are produced
in float64 and cast afterwards, so the stream does not depend on the
active precision.
"""

from __future__ import annotations

import numpy as np


class Rng:
    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, key: int | str) -> "Rng":
        """Independent child stream derived from (seed, key); does not advance this stream."""
        if isinstance(key, str):
            key = int.from_bytes(key.encode("utf-8")[:8].ljust(8, b"\0"), "little")
        child = Rng.__new__(Rng)
        child.seed = self.seed
        child._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed, int(key)])))
        return child

    def uniform(self, low: float, high: float, shape=(), dtype=np.float64) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape).astype(dtype)

    def normal(self, std: float = 1.0, shape=(), dtype=np.float64) -> np.ndarray:
        return (self._gen.standard_normal(size=shape) * std).astype(dtype)

    def trunc_normal(self, std: float, shape, dtype=np.float64, bound: float = 2.0) -> np.ndarray:
        """Normal(0, std) resampled until every value lies within +-bound*std."""
        z = self._gen.standard_normal(size=shape)
        bad = np.abs(z) > bound
        while bad.any():
            z[bad] = self._gen.standard_normal(size=int(bad.sum()))
            bad = np.abs(z) > bound
        return (z * std).astype(dtype)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def random(self) -> float:
        return float(self._gen.random())

    def bernoulli(self, p: float) -> bool:
        return self._gen.random() < p

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
