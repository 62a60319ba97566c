"""Deterministic, platform-stable random streams.

Python's built-in hash() is salted per process, so stream keys are derived
from sha256 instead. Every stochastic component (masking, shuffles, dropout,
parameter init) draws from a stream keyed by explicit parts, which keeps
runs bit-reproducible and order-independent across records.
"""

import hashlib

import numpy as np


def stable_seed(*parts) -> int:
    """Map a tuple of ints/strings to a stable 64-bit seed."""
    digest = hashlib.sha256("\x1f".join(repr(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def stream(*parts) -> np.random.Generator:
    """A fresh Generator keyed by the given parts."""
    return np.random.default_rng(stable_seed(*parts))
