"""Portable counter-based random numbers (SplitMix64 + Box-Muller).

Draw ``i`` (0-based) of a generator with 64-bit key ``k`` is
``mix(k + (i + 1) * 0x9E3779B97F4A7C15 mod 2^64)`` where ``mix`` is the
SplitMix64 finaliser.  Uniforms in [0, 1) are ``(x >> 11) * 2^-53``.  Normals
are drawn pairwise: uniforms ``(a, b)`` give ``r cos(2 pi b), r sin(2 pi b)``
with ``r = sqrt(-2 log(1 - a))``.  Child streams use key ``mix(k ^ mix(stream + 1))``.

Because every draw is a pure function of ``(key, index)`` the sequences are
reproducible bit for bit in any language with 64-bit unsigned integers and
IEEE doubles.
"""

from __future__ import annotations

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def mix64(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _mix_int(z: int) -> int:
    return int(mix64(np.uint64(z & _MASK)))


class Rng:
    """Sequential view on a counter-based stream."""

    def __init__(self, seed: int, stream: int | None = None):
        key = int(seed) & _MASK
        if stream is not None:
            key = _mix_int(key ^ _mix_int(int(stream) + 1))
        self.seed = int(seed)
        self.key = key
        self.counter = 0

    def spawn(self, stream: int) -> "Rng":
        child = Rng(0)
        child.seed = self.seed
        child.key = _mix_int(self.key ^ _mix_int(int(stream) + 1))
        return child

    def raw(self, count: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + count + 1, dtype=np.uint64)
        self.counter += count
        with np.errstate(over="ignore"):
            state = np.uint64(self.key) + idx * np.uint64(GOLDEN)
        return mix64(state)

    def random(self, size=None) -> np.ndarray:
        n = int(np.prod(size)) if size is not None else 1
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
        return u.reshape(size) if size is not None else float(u[0])

    def uniform(self, low=0.0, high=1.0, size=None):
        return low + (high - low) * self.random(size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        n = int(np.prod(size)) if size is not None else 1
        pairs = (n + 1) // 2
        u = self.random(2 * pairs).reshape(pairs, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.column_stack([r * np.cos(theta), r * np.sin(theta)]).ravel()[:n]
        z = loc + scale * z
        return z.reshape(size) if size is not None else float(z[0])

    def subsets(self, population: int, k: int, rows: int) -> np.ndarray:
        """``rows`` independent uniformly random k-subsets of range(population)."""
        keys = self.random((rows, population))
        return np.argsort(keys, axis=1, kind="stable")[:, :k]
