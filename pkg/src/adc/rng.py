"""Portable seeded random streams.

Every random draw in the package goes through :class:`Stream`, a
xoshiro256++ generator whose 256-bit state is expanded from a 64-bit seed
with splitmix64. Independent substreams are derived by hashing the parent
seed together with a purpose tag, so adding a new consumer never perturbs
the draws of existing ones.

Gaussian variates use the Marsaglia polar method and consume uniforms in a
fixed order, which keeps datasets bit-identical across runs.
"""

from __future__ import annotations

import numba
import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> tuple[int, int]:
    """Advance a splitmix64 state; return (new_state, output)."""
    x = (x + _GOLDEN) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return x, z ^ (z >> 31)


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & MASK64
    return h


def derive_seed(seed: int, *tags: object) -> int:
    """Hash a seed with an ordered tuple of tags into a new 64-bit seed."""
    h = int(seed) & MASK64
    for tag in tags:
        _, h = splitmix64(h ^ fnv1a64(str(tag).encode("utf-8")))
    return h


@numba.njit(cache=True)
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@numba.njit(cache=True)
def _next(s):
    result = _rotl(s[0] + s[3], 23) + s[0]
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


@numba.njit(cache=True)
def _fill_u64(s, out):
    for i in range(out.shape[0]):
        out[i] = _next(s)


@numba.njit(cache=True)
def _unit(s):
    # 53 high bits -> [0, 1)
    return np.float64(_next(s) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@numba.njit(cache=True)
def _fill_uniform(s, out):
    for i in range(out.shape[0]):
        out[i] = _unit(s)


@numba.njit(cache=True)
def _fill_normal(s, out):
    n = out.shape[0]
    i = 0
    while i < n:
        u = 2.0 * _unit(s) - 1.0
        v = 2.0 * _unit(s) - 1.0
        r2 = u * u + v * v
        if r2 >= 1.0 or r2 == 0.0:
            continue
        f = np.sqrt(-2.0 * np.log(r2) / r2)
        out[i] = u * f
        if i + 1 < n:
            out[i + 1] = v * f
        i += 2


class Stream:
    """A xoshiro256++ random stream.

    A single stream is not safe to share between concurrent callers; derive
    one substream per consumer with :meth:`substream` instead.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        x = self.seed
        words = []
        for _ in range(4):
            x, out = splitmix64(x)
            words.append(out)
        self._state = np.array(words, dtype=np.uint64)

    def substream(self, *tags: object) -> "Stream":
        return Stream(derive_seed(self.seed, *tags))

    def next_u64(self, n: int | None = None):
        out = np.empty(1 if n is None else n, dtype=np.uint64)
        _fill_u64(self._state, out)
        return int(out[0]) if n is None else out

    def uniform(self, low: float = 0.0, high: float = 1.0, size: int | None = None):
        out = np.empty(1 if size is None else size, dtype=np.float64)
        _fill_uniform(self._state, out)
        out = low + (high - low) * out
        return float(out[0]) if size is None else out

    def normal(self, loc: float = 0.0, scale: float = 1.0, size: int | None = None):
        out = np.empty(1 if size is None else size, dtype=np.float64)
        _fill_normal(self._state, out)
        out = loc + scale * out
        return float(out[0]) if size is None else out

    def integers(self, high: int) -> int:
        """Uniform integer in [0, high) by rejection (no modulo bias)."""
        if high <= 0:
            raise ValueError("high must be positive")
        limit = (1 << 64) - ((1 << 64) % high)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % high

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n)."""
        perm = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.integers(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm
