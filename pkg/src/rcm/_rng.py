"""Counter-based hashing used for all randomness in the package.

Every random number is a pure function of a seed and a tuple of integer
words (edge coordinates, refresh index, path id, ...).  Nothing is drawn
from a shared generator, so results do not depend on query order or on how
work is split between processes.
"""
from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_TWO_M53 = 2.0 ** -53

# domain separation tags
TAG_STATIC = 1
TAG_COUNT = 2
TAG_TIME = 3
TAG_VALUE = 4
TAG_LAYER = 5
TAG_EXP = 10
TAG_DIR = 11
TAG_REPLICA = 20


def _as_u64(x) -> np.ndarray:
    a = np.asarray(x)
    if a.dtype == np.uint64:
        return a
    if a.dtype.kind == "f":
        raise TypeError("hash words must be integers")
    return a.astype(np.int64).astype(np.uint64)


def splitmix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = z + _GOLDEN
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
        return z ^ (z >> _S31)


def hash_words(seed, *words) -> np.ndarray:
    """Mix ``seed`` and integer ``words`` (broadcastable arrays) into uint64."""
    h = splitmix(np.asarray(seed, dtype=np.uint64))
    for w in words:
        h = splitmix(h ^ _as_u64(w))
    return h


def uniform(seed, *words) -> np.ndarray:
    """Uniform variates in the open interval (0, 1)."""
    h = hash_words(seed, *words)
    return ((h >> _S11).astype(np.float64) + 0.5) * _TWO_M53


def derive_seed(master: int, *words) -> int:
    """Child seed for (master, words), e.g. a replica id."""
    return int(hash_words(np.uint64(master % 2**64), *words))
