"""Portable seeded generator for disturbance sequences.

xorshift64* (shifts 12, 25, 27; multiplier ``0x2545F4914F6CDD1D``) seeded
through one splitmix64 step so that seed 0 is usable.  Uniform doubles take
the top 53 bits, which makes sequences reproducible in any language with
64-bit unsigned arithmetic.
"""

from __future__ import annotations

import numpy as np

__all__ = ["XorShift64Star", "splitmix64"]

_MASK = (1 << 64) - 1
_MULT = 0x2545F4914F6CDD1D


def splitmix64(seed: int) -> int:
    z = (seed + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


class XorShift64Star:
    def __init__(self, seed: int = 0):
        if not 0 <= int(seed) <= _MASK:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
        state = splitmix64(int(seed))
        self.state = state if state else 1

    def next_u64(self) -> int:
        s = self.state
        s ^= s >> 12
        s ^= (s << 25) & _MASK
        s ^= s >> 27
        self.state = s
        return (s * _MULT) & _MASK

    def random(self) -> float:
        """Uniform double in ``[0, 1)``."""
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform(self, low: float, high: float, size: int) -> np.ndarray:
        return np.array([low + (high - low) * self.random() for _ in range(size)])
