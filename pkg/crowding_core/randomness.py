"""
Random streams for the crowding simulator.

Every stochastic draw in the package comes from a generator derived here.
A generator is identified by the experiment's master seed, the purpose of the
stream and a tuple of counters (run index, car index, station index ...), so

- reruns with the same master seed are bit-identical,
- runs can be executed in any order or in parallel,
- one run can be reproduced on its own without replaying the others.
"""

from __future__ import annotations

from enum import Enum

import numpy as np


class Stream(Enum):
    """Purposes a random stream can serve."""
    BOARDING = 1      # Poisson boarding counts
    APC = 2           # APC measurement noise
    MCMC = 3          # Metropolis-Hastings proposals and accept draws
    DISTORTION = 4    # Prior rate distortion


def derive_seed(master_seed: int, stream: Stream, *counters: int) -> np.random.SeedSequence:
    """Counter-based seed: ``SeedSequence(master_seed, spawn_key=(stream, *counters))``."""
    if master_seed < 0:
        raise ValueError(f"master_seed must be non-negative, got {master_seed}")
    if any(c < 0 for c in counters):
        raise ValueError(f"stream counters must be non-negative, got {counters}")
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=(stream.value, *map(int, counters)))


def derive_rng(master_seed: int, stream: Stream, *counters: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master_seed, stream, *counters)))
