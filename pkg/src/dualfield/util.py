"""Seeded randomness helpers shared across training, sampling, and the IDU loop.

Every stochastic draw in the package flows through one of these two entry
points so that runs are reproducible and resumable: streams are derived from
(seed, tag, index) tuples instead of a single mutable generator.
"""

from __future__ import annotations

import numpy as np

# Stream tags keep independently-derived generators from colliding.
TAG_TRAIN = 1
TAG_SCENE = 2
TAG_SA = 3
TAG_RENDER = 4


def derive_rng(seed: int, *tags: int) -> np.random.Generator:
    """Return a Generator for the stream identified by (seed, *tags)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, tags)])))


def _splitmix64(x: np.ndarray) -> np.ndarray:
    # SplitMix64 finalizer; input/output uint64.
    x = (x + np.uint64(0x9E3779B97F4A7C15)).astype(np.uint64)
    x ^= x >> np.uint64(30)
    x = (x * np.uint64(0xBF58476D1CE4E5B9)).astype(np.uint64)
    x ^= x >> np.uint64(27)
    x = (x * np.uint64(0x94D049BB133111EB)).astype(np.uint64)
    x ^= x >> np.uint64(31)
    return x


def hash_u01(seed: int, *indices: np.ndarray) -> np.ndarray:
    """Counter-based uniform draws in [0, 1), one per broadcast index tuple.

    Schedule-independent by construction: the value depends only on the seed
    and the index coordinates, never on call order, so parallel and serial
    evaluation agree bit for bit.
    """
    with np.errstate(over="ignore"):
        h = _splitmix64(np.full(np.broadcast(*indices).shape if indices else (), seed, dtype=np.uint64))
        for idx in indices:
            h = _splitmix64(h ^ _splitmix64(np.asarray(idx, dtype=np.uint64)))
    # 53 high bits -> double in [0, 1).
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
