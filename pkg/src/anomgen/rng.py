"""Counter-based deterministic random number generation.

Every random quantity in the pipeline is a pure function of
(seed, stream_id, index).  There is no shared generator state, so any
draw can be reproduced in isolation and independent streams can be
consumed concurrently without coordination.
"""

from __future__ import annotations

import numpy as np

_MUL1 = np.uint64(0x9E3779B97F4A7C15)  # golden-ratio increment
_MUL2 = np.uint64(0xBF58476D1CE4E5B9)
_MUL3 = np.uint64(0x94D049BB133111EB)
_SEED_MIX = np.uint64(0xD6E8FEB86659FD93)
_STREAM_MIX = np.uint64(0xA5A3564F1FDA2D41)

_INV_2_53 = float(2.0**-53)


def _finalize(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer; full avalanche over a u64 lane."""
    x = x.copy()
    x ^= x >> np.uint64(30)
    x *= _MUL2
    x ^= x >> np.uint64(27)
    x *= _MUL3
    x ^= x >> np.uint64(31)
    return x


def _hash_counters(seed: int, stream_id: int, counters: np.ndarray) -> np.ndarray:
    s = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    st = np.uint64(stream_id & 0xFFFFFFFFFFFFFFFF)
    # u64 arithmetic wraps by design; numpy warns on scalar overflow
    with np.errstate(over="ignore"):
        x = counters.astype(np.uint64) * _MUL1
        x += s * _SEED_MIX
        x += st * _STREAM_MIX
    # two finalizer rounds decorrelate nearby (seed, stream, index) keys
    return _finalize(_finalize(x))


def _uniform_open(seed: int, stream_id: int, counters: np.ndarray) -> np.ndarray:
    """Uniforms in (0, 1]; the +1 keeps log() finite."""
    bits = _hash_counters(seed, stream_id, counters) >> np.uint64(11)
    return (bits.astype(np.float64) + 1.0) * _INV_2_53


def seeded_uniform(shape, seed: int, stream_id: int) -> np.ndarray:
    """Deterministic uniforms in [0, 1) for the given (seed, stream, shape)."""
    shape = tuple(int(d) for d in shape)
    n = int(np.prod(shape)) if shape else 1
    u = _uniform_open(seed, stream_id, np.arange(n, dtype=np.uint64)) - _INV_2_53
    return u.reshape(shape)


def seeded_gaussian(shape, seed: int, stream_id: int) -> np.ndarray:
    """Standard-normal samples via Box-Muller on the counter hash.

    Identical (seed, stream_id, shape) yields bit-identical output
    across runs; zero-sized shapes yield an empty array.
    """
    shape = tuple(int(d) for d in shape)
    if not shape:
        raise ValueError("shape must be non-empty")
    n = int(np.prod(shape))
    if n == 0:
        return np.zeros(shape, dtype=np.float64)
    m = (n + 1) // 2
    idx = np.arange(2 * m, dtype=np.uint64)
    u = _uniform_open(seed, stream_id, idx)
    u1, u2 = u[:m], u[m:]
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    out = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
    return out.reshape(shape)


def seeded_randint(n_values: int, shape, seed: int, stream_id: int) -> np.ndarray:
    """Deterministic integers uniform on {0, ..., n_values-1}."""
    if n_values < 1:
        raise ValueError("n_values must be >= 1")
    u = seeded_uniform(shape, seed, stream_id)
    return np.minimum((u * n_values).astype(np.int64), n_values - 1)
