"""Stable seed derivation.

All randomness in the pipeline flows from one master seed. A stream is
addressed by a key path such as ``(master, "cv", algo_id, fold, rep)`` and
its seed is the leading 8 bytes of a BLAKE2b digest of that path, so seeds
never depend on task scheduling or Python's salted ``hash``.
"""

import hashlib

import numpy as np


def stable_hash(*parts) -> int:
    """64-bit unsigned hash of a tuple of ints/strings/floats."""
    text = "\x1f".join(f"{type(p).__name__}:{p}" for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_seed(master: int, *keys) -> int:
    return stable_hash(int(master), *keys)


def rng_for(master: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *keys))
