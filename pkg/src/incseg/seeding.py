"""Deterministic derivation of independent random streams.

Every random stream in a run is derived from the run seed plus a short
key (a label string and optional integer indices, e.g. session number).
Labels are hashed with crc32 so the derivation is stable across
processes and platforms; two streams with different keys are
statistically independent under PCG64.
"""

import zlib

import numpy as np

_SEED_MASK = (1 << 63) - 1


def derive_rng(seed: int, label: str, *indices: int) -> np.random.Generator:
    """Return a fresh generator for the (seed, label, indices) stream."""
    entropy = [int(seed) & _SEED_MASK, zlib.crc32(label.encode("ascii"))]
    entropy.extend(int(i) & _SEED_MASK for i in indices)
    return np.random.default_rng(np.random.SeedSequence(entropy))
