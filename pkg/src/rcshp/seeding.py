"""Deterministic seed derivation.

All randomness in the package flows through explicit seeds.  Derived streams use
``SeedSequence`` spawn keys, so a per-sample stream is a pure function of
(seed, index) and results do not depend on chunking or thread count.
"""

from __future__ import annotations

from typing import Union

import numpy as np

Seed = Union[int, np.random.SeedSequence]


def as_seed_sequence(seed: Seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def derive(seed: Seed, *key: int) -> np.random.SeedSequence:
    """Child seed for (seed, *key); stable and collision-resistant."""
    base = as_seed_sequence(seed)
    return np.random.SeedSequence(entropy=base.entropy, spawn_key=base.spawn_key + tuple(key))


def rng_from(seed: Seed, *key: int) -> np.random.Generator:
    """Generator for (seed, *key)."""
    return np.random.default_rng(derive(seed, *key) if key else as_seed_sequence(seed))


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Circularly-symmetric unit-variance complex Gaussian draws."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
