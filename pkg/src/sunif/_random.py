"""Counter-based Gaussian noise.

Every variate is a pure function of ``(seed, stream, index)``, so any
partitioning of pixels or frames across workers draws identical values.
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def splitmix64(x):
    """SplitMix64 finalizer applied elementwise to a uint64 array."""
    z = np.asarray(x, dtype=np.uint64) + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _key(seed, stream):
    s = np.array([int(seed) % 2**64], dtype=np.uint64)
    return splitmix64(s ^ splitmix64(np.array([stream], dtype=np.uint64)))[0]


def _unit(h):
    # top 53 bits -> (0, 1]
    return ((h >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53


def standard_normal(seed, stream, index):
    """Standard normal variates keyed by integer ``index`` (any shape)."""
    idx = np.asarray(index, dtype=np.uint64)
    key = _key(seed, stream)
    two = np.uint64(2)
    u1 = _unit(splitmix64(key ^ splitmix64(idx * two)))
    u2 = _unit(splitmix64(key ^ splitmix64(idx * two + np.uint64(1))))
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
