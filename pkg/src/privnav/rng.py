"""Random sources for sharing and dealing.

``RingRNG`` wraps a Philox counter-based generator keyed by (seed, stream) so
that every party and the dealer draw reproducible, independent streams.  With
``seed=None`` it draws from the operating system CSPRNG instead.
"""
from __future__ import annotations

import os
import zlib

import numpy as np


def _key(seed: int, stream: str) -> int:
    return ((int(seed) & ((1 << 64) - 1)) << 32) | zlib.crc32(stream.encode())


class RingRNG:
    def __init__(self, seed: int | None = None, stream: str = "default"):
        self.seed = seed
        self.stream = stream
        self._bitgen = None if seed is None else np.random.Philox(key=_key(seed, stream))

    @property
    def deterministic(self) -> bool:
        return self._bitgen is not None

    def ring(self, shape) -> np.ndarray:
        """Uniform elements of Z/2^64."""
        shape = tuple(np.atleast_1d(shape)) if not isinstance(shape, tuple) else shape
        n = int(np.prod(shape, dtype=np.int64))
        if self._bitgen is None:
            raw = np.frombuffer(os.urandom(8 * n), dtype="<u8").astype(np.uint64)
        else:
            raw = self._bitgen.random_raw(n).astype(np.uint64, copy=False)
        return raw.reshape(shape)

    def below_pow2(self, bits: int, shape) -> np.ndarray:
        """Uniform integers in [0, 2^bits), bits <= 64."""
        r = self.ring(shape)
        if bits >= 64:
            return r
        return r >> np.uint64(64 - bits)

    def bits(self, shape) -> np.ndarray:
        return self.below_pow2(1, shape)

    def spawn(self, stream: str) -> "RingRNG":
        return RingRNG(self.seed, f"{self.stream}/{stream}")
