"""Deterministic random streams.

Every stochastic operation in the package draws from a Philox-4x64-10
counter-based generator whose 64-bit key is derived from
``(master_seed, purpose, epoch, client)`` by a SplitMix64 absorb chain:

    state = splitmix64(master_seed)
    state = splitmix64(state XOR fnv1a64(purpose))
    state = splitmix64(state XOR epoch)
    state = splitmix64(state XOR client)

The purpose tag is a short ASCII string naming the consumer ("select",
"train", "poison", ...). Streams for distinct (purpose, epoch, client)
tuples are statistically independent, and any sub-computation can be
replayed in isolation given the master seed.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


def derive_key(seed: int, purpose: str, epoch: int = 0, client: int = 0) -> int:
    """64-bit stream key for (seed, purpose, epoch, client)."""
    state = _splitmix64(seed & _MASK64)
    state = _splitmix64(state ^ _fnv1a64(purpose))
    state = _splitmix64(state ^ (epoch & _MASK64))
    state = _splitmix64(state ^ (client & _MASK64))
    return state


def stream(seed: int, purpose: str, epoch: int = 0, client: int = 0) -> np.random.Generator:
    """Independent generator for one (purpose, epoch, client) sub-computation."""
    return np.random.Generator(np.random.Philox(key=derive_key(seed, purpose, epoch, client)))
