"""Deterministic random-stream derivation.

Every stochastic component draws from its own named stream so that, for
example, changing a library's service noise can never perturb the shared
arrival pattern. Streams are derived from (base_seed, library_index,
stream_label) through numpy's SeedSequence, which is a stable 64-bit hash
construction.
"""

import numpy as np

# Stream labels. Arrivals and placement are shared across all libraries of
# an array run; service noise is private to each library instance.
ARRIVALS = 0
PLACEMENT = 1
SERVICE = 2


def derive_rng(base_seed: int, library_index: int, stream: int) -> np.random.Generator:
    """Return the generator for one (library, stream) pair."""
    seq = np.random.SeedSequence(base_seed, spawn_key=(library_index, stream))
    return np.random.Generator(np.random.PCG64(seq))


def sweep_rng_seed(base_seed: int, sweep_index: int, repetition: int) -> int:
    """Derive an independent 64-bit seed for one sweep point repetition."""
    seq = np.random.SeedSequence(base_seed, spawn_key=(0x53EE9, sweep_index, repetition))
    return int(seq.generate_state(1, np.uint64)[0])
