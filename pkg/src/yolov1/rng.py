"""Portable deterministic random streams.

The generator is xoshiro256** (Blackman & Vigna) with its 256-bit state
filled from four consecutive splitmix64 outputs of the 64-bit seed.  Floats
use the top 53 bits of each output, so a given seed yields the same draws
on every platform and in any language that implements the same recipe.
"""
from __future__ import annotations

_MASK = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; return ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def derive_seed(seed: int, index: int) -> int:
    """Per-item seed for parallel work: splitmix64 of ``seed XOR index``."""
    return splitmix64((seed ^ index) & _MASK)[1]


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


class RngStream:
    """xoshiro256** stream.  Not thread-safe; give each task its own."""

    def __init__(self, seed: int = 0):
        state = seed & _MASK
        s = []
        for _ in range(4):
            state, out = splitmix64(state)
            s.append(out)
        self._s = s

    @classmethod
    def from_state(cls, s0: int, s1: int, s2: int, s3: int) -> "RngStream":
        rng = cls.__new__(cls)
        rng._s = [s0 & _MASK, s1 & _MASK, s2 & _MASK, s3 & _MASK]
        return rng

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK, 7) * 9) & _MASK
        t = (s[1] << 17) & _MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self) -> float:
        """Uniform float in [0, 1)."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in the closed range [lo, hi] (rejection sampling)."""
        if hi < lo:
            raise ValueError("empty range")
        span = hi - lo + 1
        limit = (1 << 64) - ((1 << 64) % span)
        while True:
            x = self.next_u64()
            if x < limit:
                return lo + x % span

    def bernoulli(self, p: float) -> bool:
        return self.random() < p
