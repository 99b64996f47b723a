"""Counter-based random streams keyed by ``(seed, stage, index, counter)``.

Every draw is a pure function of its key, so per-pixel work can be split
across threads in any way without changing results.  The mixing function is
the SplitMix64 finalizer applied to a keyed counter.
"""
from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream_key", "uniform", "normal", "CounterRng", "rng_for"]

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


# uint64 arithmetic wraps by design
@np.errstate(over="ignore")
def _mix64(z):
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _stage_hash(stage: str) -> int:
    digest = hashlib.blake2b(stage.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@np.errstate(over="ignore")
def stream_key(seed: int, stage: str, index=0) -> np.ndarray:
    """Return the 64-bit key(s) of the stream ``(seed, stage, index)``."""
    base = _mix64(np.array([(int(seed) & _MASK64) ^ _stage_hash(stage)], dtype=np.uint64))[0]
    idx = np.asarray(index, dtype=np.uint64)
    return _mix64(base + idx * _GOLDEN)


@np.errstate(over="ignore")
def _bits(key, counter) -> np.ndarray:
    ctr = np.asarray(counter, dtype=np.uint64)
    return _mix64(key + (ctr + np.uint64(1)) * _GOLDEN)


def uniform(seed: int, stage: str, index=0, counter=0) -> np.ndarray:
    """Uniform draws in [0, 1); ``index`` and ``counter`` broadcast."""
    key = stream_key(seed, stage, index)
    return (_bits(key, counter) >> np.uint64(11)).astype(np.float64) * 2.0**-53


@np.errstate(over="ignore")
def normal(seed: int, stage: str, index=0, counter=0) -> np.ndarray:
    """Standard normal draws (Box-Muller over two sub-counters)."""
    key = stream_key(seed, stage, index)
    ctr = np.asarray(counter, dtype=np.uint64) * np.uint64(2)
    u1 = 1.0 - (_bits(key, ctr) >> np.uint64(11)).astype(np.float64) * 2.0**-53
    u2 = (_bits(key, ctr + np.uint64(1)) >> np.uint64(11)).astype(np.float64) * 2.0**-53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


class CounterRng:
    """Sequential view of one stream; each call advances the counter."""

    def __init__(self, seed: int, stage: str, index=0):
        self.seed = int(seed)
        self.stage = stage
        self.index = index
        self.counter = 0

    def _take(self, size: int) -> np.ndarray:
        ctr = np.arange(self.counter, self.counter + size, dtype=np.uint64)
        self.counter += size
        return ctr

    def uniform(self, size: int = 1) -> np.ndarray:
        return uniform(self.seed, self.stage, self.index, self._take(size))

    def normal(self, size: int = 1) -> np.ndarray:
        return normal(self.seed, self.stage, self.index, self._take(size))


def rng_for(seed: int, stage: str, index="global") -> CounterRng:
    """Deterministic stream for a stage and a pixel index (or ``"global"``)."""
    if index == "global":
        return CounterRng(seed, stage + ":global", 0)
    if int(index) < 0:
        raise ValueError("pixel index must be non-negative")
    return CounterRng(seed, stage, int(index))
