"""Deterministic RNG stream derivation.

Every random consumer gets its own generator keyed by
``(component, index, seed)``; the key is hashed with SHA-256 so the mapping
is stable across Python processes (unlike the builtin ``hash``).
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_id(component: str, index: int, seed: int) -> int:
    key = f"{component}:{index}:{seed}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:16], "little")


def stream(component: str, index: int, seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(stream_id(component, index, seed)))
