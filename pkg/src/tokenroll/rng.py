"""Deterministic 64-bit splittable PRNG (SplitMix64) with named sub-streams.

Every random draw in the package flows from a single u64 seed through this
module, so runs are bitwise reproducible across platforms. SplitMix64 is
counter-based: output i is mix64(state0 + (i+1)*GAMMA), which lets bulk
draws vectorize over numpy uint64 arrays.

Stream derivation rules (documented for cross-language reimplementation):
  named sub-stream seed = mix64(seed XOR fnv1a64(name))
  per-record stream seed = mix64(stream_seed XOR record_index)
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a 64-bit integer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return (z ^ (z >> 31)) & MASK64


def fnv1a64(name: str) -> int:
    h = _FNV_OFFSET
    for byte in name.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & MASK64
    return h


def _mix_array(z: np.ndarray) -> np.ndarray:
    # vectorized mix64 on uint64; numpy uint64 arithmetic wraps like C
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Counter-based SplitMix64 stream."""

    def __init__(self, seed: int):
        self._state0 = seed & MASK64
        self._count = 0

    def stream(self, name: str) -> "SplitMix64":
        """Derive an independent named sub-stream; does not advance this one."""
        return SplitMix64(mix64(self._state0 ^ fnv1a64(name)))

    def record_stream(self, index: int) -> "SplitMix64":
        """Derive the stream for record `index` (seed XOR record index)."""
        return SplitMix64(mix64(self._state0 ^ (index & MASK64)))

    def next_u64(self) -> int:
        self._count += 1
        return mix64(self._state0 + self._count * GAMMA)

    def u64_array(self, n: int) -> np.ndarray:
        idx = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        with np.errstate(over="ignore"):
            raw = np.uint64(self._state0) + idx * np.uint64(GAMMA)
        return _mix_array(raw)

    def uniform(self, shape=None) -> np.ndarray | float:
        """float64 in [0, 1) with 53-bit resolution."""
        if shape is None:
            return (self.next_u64() >> 11) * 2.0**-53
        n = int(np.prod(shape)) if shape else 1
        u = (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return u.reshape(shape)

    def below(self, bound: int) -> int:
        """Integer in [0, bound). Uses the 53-bit uniform; bound must be small."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return int(self.uniform() * bound)

    def choice(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from range(n), order of first appearance."""
        if k > n:
            raise ValueError(f"cannot draw {k} distinct from {n}")
        seen: list[int] = []
        while len(seen) < k:
            c = self.below(n)
            if c not in seen:
                seen.append(c)
        return np.array(seen, dtype=np.int64)

    def shuffled(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n)."""
        perm = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        """Box-Muller normals, float64."""
        n = int(np.prod(shape)) if shape else 1
        half = (n + 1) // 2
        # u1 in (0, 1] so log never sees zero
        u1 = ((self.u64_array(half) >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u2 = (self.u64_array(half) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return (out * scale).reshape(shape)
