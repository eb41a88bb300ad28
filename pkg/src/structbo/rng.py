"""Deterministic named random substreams.

Every source of randomness in a run is derived from (root seed, stream
name, integer indices). Streams are stateless to construct, so a resumed
run re-derives exactly the generators an uninterrupted run would use.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _name_entropy(name: str) -> int:
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def substream(seed: int, name: str, *indices: int) -> np.random.Generator:
    """Generator for stream `name` (+ optional indices) under a root seed."""
    entropy = [int(seed), _name_entropy(name), *[int(i) for i in indices]]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def stream_seed(seed: int, name: str, *indices: int) -> int:
    """A 63-bit integer seed derived the same way as `substream`."""
    entropy = [int(seed), _name_entropy(name), *[int(i) for i in indices]]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0] >> 1)
