"""Deterministic seeding for every randomized component.

All randomness in the package flows from a single master seed. Child seeds
are derived by folding context labels (repetition, fold, equation, learner
index, ...) into the master seed with the splitmix64 mixing function
(constants 0x9E3779B97F4A7C15, 0xBF58476D1CE4E5B9, 0x94D049BB133111EB).
Sampling then uses numpy's PCG64 stream seeded with the derived value.

Because every task derives its own seed from its coordinates, results do
not depend on scheduling: parallel and serial execution produce identical
output.
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1

_SM64_GAMMA = 0x9E3779B97F4A7C15
_SM64_MIX1 = 0xBF58476D1CE4E5B9
_SM64_MIX2 = 0x94D049BB133111EB


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; return (new_state, output)."""
    state = (state + _SM64_GAMMA) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * _SM64_MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _SM64_MIX2) & MASK64
    z = z ^ (z >> 31)
    return state, z


def _as_u64(part) -> int:
    if isinstance(part, str):
        digest = hashlib.blake2b(part.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    if isinstance(part, (bool, np.bool_)):
        return int(part)
    if isinstance(part, (int, np.integer)):
        return int(part) & MASK64
    raise TypeError(f"cannot fold {type(part).__name__} into a seed")


def derive_seed(seed: int, *parts) -> int:
    """Derive a 64-bit child seed from a master seed and context parts.

    Parts may be integers or strings; strings are hashed first. The same
    (seed, parts) always yields the same child seed.
    """
    state = seed & MASK64
    for part in parts:
        state ^= _as_u64(part)
        state, _ = splitmix64(state)
        state, _ = splitmix64(state)
    _, out = splitmix64(state)
    return out


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator for a derived seed."""
    return np.random.Generator(np.random.PCG64(seed & MASK64))
