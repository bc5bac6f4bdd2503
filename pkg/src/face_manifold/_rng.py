"""Seed-stream derivation shared by every randomized operation.

Every random draw in the package comes from a generator built out of
``(seed, purpose, *index)``.  The purpose tag is hashed with CRC-32 so that
streams for different jobs never collide, and the indices let parallel
workers regenerate exactly the stream a serial loop would have used.
"""
import zlib

import numpy as np


def _tag(purpose):
    return zlib.crc32(purpose.encode("utf-8"))


def derive_rng(seed, purpose, *index):
    """Return a ``numpy.random.Generator`` for the stream ``(seed, purpose, *index)``."""
    if isinstance(seed, np.random.Generator):
        raise TypeError("derive_rng needs an integer seed, not a Generator")
    seed = int(seed)
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    entropy = [seed, _tag(purpose)] + [int(i) for i in index]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def as_rng(seed):
    """Accept an int seed or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is not None and int(seed) < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.default_rng(seed)
