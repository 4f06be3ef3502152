"""Counter-based random streams.

A stream is fully described by ``(seed, counter)``; draws come from a
SplitMix64 finaliser applied to ``seed_key + counter * golden``, so the same
pair reproduces the same sequence on every platform and Python build.
Streams are cheap to create, which lets every augmentation call own one.
"""

from __future__ import annotations

import math
from functools import lru_cache

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """SplitMix64 output function."""
    z = (z + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


@lru_cache(maxsize=1024)
def _str_key(k: str) -> int:
    h = 0xCBF29CE484222325
    for b in k.encode():
        h = ((h ^ b) * 0x100000001B3) & MASK64
    return mix64(h)


def _key_of(k) -> int:
    if isinstance(k, str):
        return _str_key(k)
    return mix64(int(k) & MASK64)


class RngStream:
    """Deterministic 64-bit stream. Not thread-safe; never share one."""

    __slots__ = ("seed", "counter", "_key")

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & MASK64
        self.counter = int(counter) & MASK64
        self._key = mix64(self.seed)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed:#x}, counter={self.counter})"

    def copy(self) -> "RngStream":
        return RngStream(self.seed, self.counter)

    def derive(self, *keys) -> "RngStream":
        """Child stream keyed by ``keys`` (ints or strings); ignores the counter."""
        s = self.seed
        for k in keys:
            s = mix64(s ^ _key_of(k))
        return RngStream(s, 0)

    def next_u64(self) -> int:
        z = mix64((self._key + self.counter * _GOLDEN) & MASK64)
        self.counter = (self.counter + 1) & MASK64
        return z

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of resolution."""
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError(f"randint needs n >= 1, got {n}")
        return (self.next_u64() * n) >> 64

    def bernoulli(self, p: float) -> bool:
        return self.random() < p

    def normal(self) -> float:
        # Box-Muller, cosine branch only
        u1 = 1.0 - self.random()
        u2 = self.random()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of ``range(n)``."""
        idx = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.randint(i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return idx
