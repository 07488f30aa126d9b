"""SplitMix64 mixing and counter-based uniform streams.

Every random number in the package is a pure function of a 64-bit key and
a counter: ``uniform(key, i) = mix64(key + (i + 1) * GOLDEN) >> 11 * 2**-53``,
i.e. output ``i`` of a SplitMix64 generator seeded with ``key``.  This makes
obstacle cells and trajectories reproducible independently of the order in
which they are visited and of how work is split across threads.
"""

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
INV_2_53 = 1.0 / 9007199254740992.0

_GOLDEN_U = np.uint64(GOLDEN)
_M1_U = np.uint64(_M1)
_M2_U = np.uint64(_M2)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)


def mix64_py(z):
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def derive_key_py(seed, *words):
    """Absorb integer words into a 64-bit key (order sensitive)."""
    h = mix64_py((seed & MASK64) + GOLDEN)
    for w in words:
        h = mix64_py(h + GOLDEN + (w & MASK64))
    return h


def uniform_py(key, i):
    return (mix64_py(key + (i + 1) * GOLDEN) >> 11) * INV_2_53


@njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1_U
    z = (z ^ (z >> _S27)) * _M2_U
    return z ^ (z >> _S31)


@njit(cache=True)
def cell_key(seed, cx, cy, cz):
    h = mix64(seed + _GOLDEN_U)
    h = mix64(h + _GOLDEN_U + np.uint64(cx))
    h = mix64(h + _GOLDEN_U + np.uint64(cy))
    h = mix64(h + _GOLDEN_U + np.uint64(cz))
    return h


@njit(cache=True, inline="always")
def uniform(key, i):
    z = mix64(key + (np.uint64(i) + _ONE) * _GOLDEN_U)
    return np.float64(z >> _S11) * INV_2_53


@njit(cache=True)
def uniforms(keys, counters):
    out = np.empty(keys.shape[0])
    for k in range(keys.shape[0]):
        out[k] = uniform(keys[k], counters[k])
    return out


def derive_seeds(base_seed, n):
    """Per-trajectory keys ``derive_key_py(base_seed, i)`` for i < n."""
    return np.array([derive_key_py(base_seed, i) for i in range(n)], dtype=np.uint64)
