"""Derived random streams: every consumer hashes (root seed, purpose, index)."""

import hashlib

import numpy as np


def derive_seed(root, purpose, index=0):
    digest = hashlib.sha256(f"{int(root)}|{purpose}|{int(index)}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(root, purpose, index=0):
    return np.random.default_rng(derive_seed(root, purpose, index))
