"""Deterministic pseudo-random number generation.

SplitMix64 core with Box-Muller Gaussians. The exact bit-level recipe is
frozen so that fixture weights and perturbation streams are reproducible
across platforms and implementations.
"""

import math

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class SplitMix64:
    """SplitMix64 stream with uniform and Gaussian draws.

    uniform(): (next_u64() >> 11) * 2**-53, in [0, 1).
    gaussian(): Box-Muller on pairs u1 in (0, 1], u2 in [0, 1); the pair
    yields z0 = sqrt(-2 ln u1) cos(2 pi u2) then z1 = the sin twin,
    consumed in that order (z1 is cached for the next call).
    """

    def __init__(self, seed: int):
        self._state = seed & _MASK64
        self._spare = None

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return z ^ (z >> 31)

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * 2.0 ** -53

    def gaussian(self) -> float:
        if self._spare is not None:
            z = self._spare
            self._spare = None
            return z
        # 1 - uniform() maps [0,1) onto (0,1] so the log is always finite.
        u1 = 1.0 - self.uniform()
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        z0 = r * math.cos(theta)
        self._spare = r * math.sin(theta)
        return z0

    def bernoulli(self, p: float) -> int:
        """One draw in {0, 1} with P(1) = p."""
        return 1 if self.uniform() < p else 0
