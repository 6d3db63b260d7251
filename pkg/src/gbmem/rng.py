"""Seeded random streams.

Every stochastic routine in the package draws from a Philox4x64 counter-based
generator (numpy's ``Philox`` bit generator), so a given seed reproduces the
same stream on every platform numpy supports.
"""

from __future__ import annotations

import numpy as np

ALGORITHM = "philox4x64-10"


class SeededRng:
    """A Philox-backed ``numpy.random.Generator`` that remembers its seed.

    ``child(*keys)`` derives an independent, reproducible sub-stream, which
    lets callers give each task/class its own stream without threading a
    single generator through unrelated code paths.
    """

    algorithm = ALGORITHM

    def __init__(self, seed: int = 0, _keys: tuple = ()):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
        self.seed = seed
        self.keys = tuple(int(k) for k in _keys)
        ss = np.random.SeedSequence([seed & 0xFFFFFFFF, seed >> 32, *self.keys])
        self.generator = np.random.Generator(np.random.Philox(ss))

    def child(self, *keys: int) -> "SeededRng":
        return SeededRng(self.seed, self.keys + tuple(keys))

    def raw(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit outputs of the bit generator."""
        return self.generator.bit_generator.random_raw(n)

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, keys={self.keys})"


def as_generator(rng) -> np.random.Generator:
    """Accept a SeededRng, a numpy Generator or an integer seed."""
    if isinstance(rng, SeededRng):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None or isinstance(rng, (int, np.integer)):
        return SeededRng(0 if rng is None else int(rng)).generator
    raise TypeError(f"cannot build a random generator from {type(rng).__name__}")
