"""Deterministic, splittable random streams.

Every consumer of randomness derives its own counter-based Philox stream
from (seed, purpose, indices).  Streams for distinct purposes or indices
are statistically independent, and draw order within a stream is fixed,
so e.g. filter initialization for a given (task, layer) is identical no
matter which training mode requests it.
"""

import numpy as np

PURPOSES = {
    "filter_init": 1,
    "w_init": 2,
    "disc_init": 3,
    "shuffle": 4,
    "scene": 5,
    "split": 6,
    "probe": 7,
    "rp_proj": 8,
}


def rng_stream(seed, purpose, *indices):
    """A fresh Generator keyed by (seed, purpose, indices)."""
    try:
        pid = PURPOSES[purpose]
    except KeyError:
        raise ValueError(f"unknown rng purpose {purpose!r}") from None
    ss = np.random.SeedSequence(int(seed), spawn_key=(pid, *(int(i) for i in indices)))
    return np.random.Generator(np.random.Philox(ss))
