"""Deterministic RNG stream derivation.

Every random draw in the system comes from a generator derived here, keyed by
a path of integers and strings (fleet seed, device index, purpose tag, round
number, ...). No module touches ambient randomness, which is what makes full
runs bit-reproducible.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _as_entropy(part: int | str) -> int:
    if isinstance(part, str):
        return int.from_bytes(hashlib.sha256(part.encode("utf-8")).digest()[:8], "big")
    value = int(part)
    if value < 0:
        raise ValueError(f"seed parts must be non-negative, got {value}")
    return value


def derive_seed(*parts: int | str) -> int:
    """64-bit seed from a derivation path."""
    ss = np.random.SeedSequence([_as_entropy(p) for p in parts])
    return int(ss.generate_state(1, np.uint64)[0])


def derive_rng(*parts: int | str) -> np.random.Generator:
    ss = np.random.SeedSequence([_as_entropy(p) for p in parts])
    return np.random.default_rng(ss)
