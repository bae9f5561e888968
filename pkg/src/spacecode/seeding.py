"""Deterministic random-stream derivation.

One experiment seed fans out into per-component generators via stable
hashing, so any run is reproducible from (seed, data) alone.
"""

import hashlib

import numpy as np


def stream_key(*labels) -> int:
    """Stable 64-bit key for a tuple of labels (ints or strings)."""
    text = "/".join(str(part) for part in labels)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(seed: int, *labels) -> np.random.Generator:
    """Child generator for (seed, *labels); stable across runs and platforms."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, stream_key(*labels)]
    return np.random.default_rng(np.random.SeedSequence(entropy))
