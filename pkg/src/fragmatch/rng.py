"""Per-run random streams.

A run's generator is seeded with SplitMix64(seed XOR (run_index * golden)),
all arithmetic mod 2**64, so any implementation can rebuild the same
streams and runs can execute in any order or process.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One SplitMix64 output for state ``x`` (the state is advanced by GOLDEN first)."""
    z = (x + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def run_stream_id(seed: int, run_index: int) -> int:
    return splitmix64((seed & MASK64) ^ ((run_index * GOLDEN) & MASK64))


def run_rng(seed: int, run_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(run_stream_id(seed, run_index)))
