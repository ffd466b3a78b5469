"""Seed derivation: one global 64-bit seed, per-task counter-based streams.

Every task label is hashed together with the global seed into a 128-bit
Philox key, so results do not depend on the order in which tasks run.
"""
import hashlib

import numpy as np

MAX_SEED = 2**64 - 1


def derive_key(seed: int, label: str) -> int:
    if not 0 <= int(seed) <= MAX_SEED:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    digest = hashlib.blake2b(f"{int(seed)}/{label}".encode(), digest_size=16).digest()
    return int.from_bytes(digest, "little")


def generator(seed: int, label: str) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=derive_key(seed, label)))
