"""Counter-based random streams.

A draw is a pure function of ``(seed, stream, step, particle, component)``:
the counter is hashed with the SplitMix64 finalizer and mapped to a uniform
in (0, 1), then to a standard normal through the inverse CDF. No generator
state is carried, so results do not depend on evaluation order, chunking or
thread count.
"""

from __future__ import annotations

import zlib

import numpy as np
from scipy.special import ndtri

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def _key(seed: int, stream: str, step: int) -> np.uint64:
    base = np.array([(seed & _MASK64)], dtype=np.uint64)
    tag = np.array([zlib.crc32(stream.encode())], dtype=np.uint64)
    with np.errstate(over="ignore"):
        k = _mix(base + _GOLDEN)
        k = _mix(k ^ (tag * _GOLDEN))
        k = _mix(k + np.uint64(step & _MASK64) * _M2)
    return k[0]


def uniforms(seed: int, stream: str, step: int, particles: np.ndarray, width: int) -> np.ndarray:
    """Uniforms in the open interval (0, 1), shape ``(len(particles), width)``."""
    key = _key(seed, stream, step)
    p = np.asarray(particles, dtype=np.uint64)[:, None]
    j = np.arange(width, dtype=np.uint64)[None, :]
    with np.errstate(over="ignore"):
        ctr = p * np.uint64(width) + j
        bits = _mix(_mix(key ^ (ctr * _GOLDEN)) + _GOLDEN)
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * (2.0 ** -53)


def normals(seed: int, stream: str, step: int, particles: np.ndarray, width: int) -> np.ndarray:
    return ndtri(uniforms(seed, stream, step, particles, width))
