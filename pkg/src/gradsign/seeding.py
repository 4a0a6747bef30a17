"""Deterministic seed derivation.

All randomness in an experiment flows from one root seed.  Sub-streams are
derived as ``seed_for(root, label, *indices)`` where the label names the
purpose ("init", "shuffle", "bench-archs", ...), so no two components ever
share a stream implicitly and every stream is reproducible from the config.
"""

from __future__ import annotations

import hashlib

import numpy as np


def seed_for(root: int, label: str, *indices: int) -> int:
    """64-bit seed derived from the root seed, a purpose label, and indices."""
    key = f"{root}|{label}|" + "|".join(str(i) for i in indices)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(root: int, label: str, *indices: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_for(root, label, *indices)))
