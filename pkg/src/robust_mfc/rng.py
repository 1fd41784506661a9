"""Counter-based random streams.

Every draw is a pure function of an integer key such as
``(seed, trial, agent, t, channel)``, so agents and trials can be simulated in
any order (or in parallel) and still reproduce bit-for-bit.  The mixing
function is the SplitMix64 finalizer applied to a chained key.
"""
from __future__ import annotations

import numpy as np

# channels keep the randomization sources of one agent independent
INITIAL_STATE = 1
ACTION = 2
IDIOSYNCRATIC = 3
COMMON_NOISE = 4
PERTURBATION = 5
RESTART = 6
INITIAL_LAW = 7

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_KEY_MUL = np.uint64(0xD1B54A32D192ED03)


def _mix(z: np.ndarray) -> np.ndarray:
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _as_u64(x) -> np.ndarray:
    arr = np.asarray(x)
    if arr.dtype.kind == "i" and np.any(arr < 0):
        raise ValueError("stream keys must be nonnegative")
    return arr.astype(np.uint64)


def random_bits(seed: int, *key) -> np.ndarray:
    """64-bit hashes of ``(seed, *key)``; key components broadcast as arrays."""
    with np.errstate(over="ignore"):
        h = _mix(_as_u64(seed))
        for part in key:
            h = _mix(h ^ (_as_u64(part) * _KEY_MUL))
    return h


def uniforms(seed: int, *key) -> np.ndarray:
    """Uniform floats in [0, 1) with 53 random bits each."""
    bits = random_bits(seed, *key)
    return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def inverse_cdf(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Categorical sampling by inverse CDF.

    ``probs`` has shape (..., n) and broadcasts against ``u`` (shape (...)).
    Zero-probability categories are never returned.
    """
    probs = np.asarray(probs, dtype=float)
    cdf = np.cumsum(probs, axis=-1)
    n = probs.shape[-1]
    last = n - 1 - np.argmax(probs[..., ::-1] > 0, axis=-1)
    cdf[np.arange(n) >= last[..., None]] = np.inf
    idx = (np.asarray(u)[..., None] >= cdf).sum(axis=-1)
    return idx.astype(np.int64)
