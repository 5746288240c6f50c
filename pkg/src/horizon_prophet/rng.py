"""Counter-based random streams.

Every uniform is a pure function of (key, counter), so a trial's realization
is identical whether it is drawn one step at a time or vectorized across a
batch of trials. The mixer is the SplitMix64 finalizer.
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_UNIT = 2.0 ** -53

_G = np.uint64(GOLDEN)
_U1 = np.uint64(_M1)
_U2 = np.uint64(_M2)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)

# Stream tags under a trial key.
REALIZATION, POLICY, COIN, UNCOUPLED = 0, 1, 2, 3
# Stream tags under a realization key.
HORIZONS, VALUES, ORDER_STATS = 0, 1, 2


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def derive(key: int, index: int) -> int:
    """Child key for ``index`` under ``key``; distinct indices give distinct keys."""
    return mix64(mix64(key) + (index + 1) * GOLDEN)


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _S30)) * _U1
    z = (z ^ (z >> _S27)) * _U2
    return z ^ (z >> _S31)


def derive_many(key: int, indices: np.ndarray) -> np.ndarray:
    """Vectorized :func:`derive` over an index array; returns uint64 keys."""
    base = np.uint64(mix64(key))
    idx = np.asarray(indices, dtype=np.uint64)
    return _mix_array(base + (idx + np.uint64(1)) * _G)


def derive_each(keys: np.ndarray, index: int) -> np.ndarray:
    """``derive(k, index)`` for every key in a uint64 array."""
    return _mix_array(_mix_array(keys.astype(np.uint64)) + np.uint64(((index + 1) * GOLDEN) & MASK64))


def uniforms_at(key: int | np.ndarray, counters: np.ndarray) -> np.ndarray:
    """Uniforms in (0, 1) at the given counters.

    ``key`` may be a scalar or a uint64 array broadcastable against ``counters``.
    """
    k = np.asarray(key, dtype=np.uint64) if not isinstance(key, int) else np.uint64(key)
    c = np.asarray(counters, dtype=np.uint64)
    z = _mix_array(k + (c + np.uint64(1)) * _G)
    return ((z >> _S11).astype(np.float64) + 0.5) * _UNIT


def uniform_scalar(key: int, counter: int) -> float:
    return ((mix64(key + (counter + 1) * GOLDEN) >> 11) + 0.5) * _UNIT


class Stream:
    """Sequential view of a counter-based stream."""

    __slots__ = ("key", "counter")

    def __init__(self, key: int, counter: int = 0):
        self.key = key & MASK64
        self.counter = counter

    def random(self) -> float:
        u = uniform_scalar(self.key, self.counter)
        self.counter += 1
        return u

    def uniforms(self, n: int) -> np.ndarray:
        out = uniforms_at(self.key, np.arange(self.counter, self.counter + n, dtype=np.uint64))
        self.counter += n
        return out

    def choice(self, weights) -> int:
        """Index drawn proportionally to nonnegative ``weights``."""
        w = np.asarray(weights, dtype=float)
        total = w.sum()
        if not total > 0:
            raise ValueError("weights must have positive total")
        cdf = np.cumsum(w) / total
        idx = int(np.searchsorted(cdf, self.random(), side="right"))
        return min(idx, len(w) - 1)

    def child(self, index: int) -> "Stream":
        return Stream(derive(self.key, index))


class TrialKeys:
    """Keys for the independent streams of one trial."""

    __slots__ = ("trial", "realization", "policy", "coin", "uncoupled")

    def __init__(self, master_seed: int, trial: int):
        t = derive(master_seed, trial)
        self.trial = t
        self.realization = derive(t, REALIZATION)
        self.policy = derive(t, POLICY)
        self.coin = derive(t, COIN)
        self.uncoupled = derive(t, UNCOUPLED)
