"""Seed derivation shared by generators, samplers and the trainer"""
import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """
    Derive a 63-bit seed from arbitrary key parts.

    Uses SHA-256 over the parts' repr, so the result is stable across
    processes and platforms (unlike the salted builtin hash).

    Example:
        derive_seed(7, "img-0003", "fog", 2)
    """
    digest = hashlib.sha256("\x1f".join(repr(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def numpy_rng(seed) -> np.random.Generator:
    """PCG64 generator for an int seed (generators are passed through)"""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
