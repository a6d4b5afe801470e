"""Deterministic seed derivation.

Every RNG stream in a run is derived from one master seed through
``SeedSequence([master, PURPOSE_CODES[purpose], index])``.  The purpose
codes below are frozen; two runs with the same master seed consume
identical random streams everywhere.
"""

from __future__ import annotations

import numpy as np

PURPOSE_CODES = {
    "params": 1,     # network initialization
    "env": 2,        # training episode seeds, by global episode index
    "trainer": 3,    # action exploration and message noise
    "eval": 4,       # evaluation episode seeds
}


def derive_seed_sequence(master_seed: int, purpose: str, index: int = 0
                         ) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), PURPOSE_CODES[purpose], int(index)])


def derive_rng(master_seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_seed_sequence(master_seed, purpose, index))


def derive_episode_seed(master_seed: int, purpose: str, index: int) -> int:
    """A 63-bit integer seed for a single-episode environment."""
    return int(derive_seed_sequence(master_seed, purpose, index).generate_state(1)[0] >> 1)
