"""Seed derivation and random streams.

One 64-bit master seed feeds everything. Replication ``r`` gets the seed
``splitmix64(master ^ r)`` and draws from a counter-based Philox stream keyed
by that value, so results never depend on which worker ran which replication.
"""

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (int(x) + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def replication_seed(master_seed: int, r: int) -> int:
    if not 0 <= master_seed <= MASK64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {master_seed}")
    return splitmix64((int(master_seed) ^ int(r)) & MASK64)


def stream(seed: int) -> np.random.Generator:
    """Counter-based generator for one replication."""
    return np.random.Generator(np.random.Philox(key=int(seed) & MASK64))
