"""Portable deterministic random numbers.

Everything seeded in this package (synthetic data, weight init, shuffling,
dropout masks) draws from SplitMix64 rather than numpy's generators, so that
"same seed => same bytes" holds across numpy versions and platforms. The state
is a single 64-bit counter advanced by a fixed odd constant per draw; outputs
are produced by a finalizing mix. Bulk draws vectorize the counter arithmetic
with uint64 numpy ops, which wrap exactly like the scalar path.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# 2**-53, scale for 53-bit uniform mantissas
_U53 = 1.0 / (1 << 53)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Seedable 64-bit PRNG with exact cross-platform reproducibility."""

    def __init__(self, seed: int):
        self._state = seed & _MASK

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK
        z = self._state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK
        return (z ^ (z >> 31)) & _MASK

    def _u64_array(self, n: int) -> np.ndarray:
        """n raw draws, advancing the state exactly n times."""
        if n < 0:
            raise ValueError(f"draw count must be >= 0, got {n}")
        steps = (np.arange(1, n + 1, dtype=np.uint64)) * np.uint64(_GAMMA)
        with np.errstate(over="ignore"):
            z = _mix(np.uint64(self._state) + steps)
        self._state = (self._state + n * _GAMMA) & _MASK
        return z

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        """Uniform floats in [low, high) with 53-bit resolution."""
        if size is None:
            u = (self.next_u64() >> 11) * _U53
            return low + (high - low) * u
        n = int(np.prod(size))
        u = (self._u64_array(n) >> np.uint64(11)).astype(np.float64) * _U53
        return (low + (high - low) * u).reshape(size)

    def normal(self, size=None, std: float = 1.0):
        """Gaussian draws via Box-Muller on paired uniforms."""
        scalar = size is None
        n = 1 if scalar else int(np.prod(size))
        m = (n + 1) // 2
        raw = self._u64_array(2 * m)
        # u1 in (0, 1] so the log is finite
        u1 = ((raw[:m] >> np.uint64(11)).astype(np.float64) + 1.0) * _U53
        u2 = (raw[m:] >> np.uint64(11)).astype(np.float64) * _U53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n] * std
        if scalar:
            return float(out[0])
        return out.reshape(size)

    def below(self, n: int) -> int:
        """Integer in [0, n). Modulo bias is < 2**-50 for any practical n."""
        if n <= 0:
            raise ValueError(f"bound must be positive, got {n}")
        return self.next_u64() % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> np.ndarray:
        idx = list(range(n))
        self.shuffle(idx)
        return np.asarray(idx, dtype=np.int64)

    def spawn(self, salt: int) -> "SplitMix64":
        """Independent child stream derived from the current state and a salt."""
        child = SplitMix64((self._state ^ (salt * _MIX1)) & _MASK)
        child.next_u64()
        return child
