"""Deterministic, portable random number generation.

Every random quantity in this package is a pure function of a 64-bit
seed, so results reproduce bit-for-bit across platforms, processes and
reimplementations in other languages.  The generator is SplitMix64 used
in counter mode:

    raw(seed, i) = mix64(seed + i * 0x9E3779B97F4A7C15)   (mod 2**64)

for draw index i = 1, 2, ... where mix64 is the SplitMix64 finalizer

    z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9
    z ^= z >> 27;  z *= 0x94D049BB133111EB
    z ^= z >> 31

Uniforms map the top 53 bits into (0, 1]:

    u(seed, i) = ((raw(seed, i) >> 11) + 1) * 2**-53

Standard normals come from Box-Muller on consecutive uniform pairs:
pair p (0-based) consumes u(2p+1), u(2p+2) and yields

    z[2p]   = sqrt(-2 ln u(2p+1)) * cos(2 pi u(2p+2))
    z[2p+1] = sqrt(-2 ln u(2p+1)) * sin(2 pi u(2p+2))

Counter mode makes draws independent of chunking, and child streams are
derived from a parent seed plus integer tags (see ``derive_seed``), so
concurrent trials keyed by (seed, tags...) are schedule-independent.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_U_GOLDEN = np.uint64(_GOLDEN)
_U_MIX1 = np.uint64(_MIX1)
_U_MIX2 = np.uint64(_MIX2)


def _mix(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer, vectorized over uint64 arrays."""
    z = (z ^ (z >> np.uint64(30))) * _U_MIX1
    z = (z ^ (z >> np.uint64(27))) * _U_MIX2
    return z ^ (z >> np.uint64(31))


def _mix_int(z: int) -> int:
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def raw_uint64(seed: int, n: int, start: int = 0) -> np.ndarray:
    """Raw 64-bit outputs for draw indices start+1 .. start+n."""
    if n < 0:
        raise ValueError("n must be non-negative")
    counters = np.arange(start + 1, start + n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix(np.uint64(seed & _MASK64) + counters * _U_GOLDEN)


def uniform(seed: int, n: int, start: int = 0) -> np.ndarray:
    """i.i.d. uniforms in (0, 1], float64."""
    bits = raw_uint64(seed, n, start=start)
    return ((bits >> np.uint64(11)) + np.uint64(1)) * 2.0**-53


def standard_normal(seed: int, n: int) -> np.ndarray:
    """i.i.d. standard normal draws via Box-Muller, float64."""
    if n < 0:
        raise ValueError("n must be non-negative")
    pairs = (n + 1) // 2
    u = uniform(seed, 2 * pairs)
    r = np.sqrt(-2.0 * np.log(u[0::2]))
    theta = (2.0 * np.pi) * u[1::2]
    out = np.empty(2 * pairs)
    out[0::2] = r * np.cos(theta)
    out[1::2] = r * np.sin(theta)
    return out[:n]


def derive_seed(seed: int, *tags: int) -> int:
    """Deterministic child-stream seed from a parent seed and integer tags.

    Folds each tag through the SplitMix64 finalizer:
    z <- mix64(z * 0x9E3779B97F4A7C15 + tag + 1).
    """
    z = seed & _MASK64
    for tag in tags:
        z = _mix_int((z * _GOLDEN + (tag & _MASK64) + 1) & _MASK64)
    return z
