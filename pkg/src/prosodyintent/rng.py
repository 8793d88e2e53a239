"""Deterministic parameter-initialization streams.

Weight init must be reproducible across runs and platforms, so it does not
go through numpy's global RNG. Each parameter gets its own splitmix64
stream derived from (seed, parameter name).
"""

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):  # uint64 wraparound is the algorithm
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def _fnv1a(name: str) -> int:
    h = 0xCBF29CE484222325
    for b in name.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def stream_seed(seed: int, name: str) -> int:
    """Derive a per-name 64-bit stream seed from a master seed."""
    base = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ np.uint64(_fnv1a(name))
    with np.errstate(over="ignore"):
        return int(_mix64(base + _GAMMA))


def uniform(seed: int, name: str, n: int, low: float, high: float) -> np.ndarray:
    """n uniforms in [low, high) from the (seed, name) splitmix64 stream."""
    s = np.uint64(stream_seed(seed, name))
    with np.errstate(over="ignore"):
        idx = (np.arange(1, n + 1, dtype=np.uint64) * _GAMMA) + s
    bits = _mix64(idx)
    u = (bits >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
    return (low + (high - low) * u).astype(np.float32)


def init_weight(seed: int, name: str, shape: tuple, fan_in: int) -> np.ndarray:
    """Uniform(-s, s) with s = sqrt(1/fan_in)."""
    s = float(np.sqrt(1.0 / fan_in))
    n = int(np.prod(shape))
    return uniform(seed, name, n, -s, s).reshape(shape)
