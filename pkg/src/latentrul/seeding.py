"""Seed management.

Every stage of the pipeline draws randomness from one root seed through
numpy's SeedSequence spawn keys (PCG64 streams), so each stage is
reproducible on its own and independent of the others.
"""

import numpy as np

# Stage identifiers; keep stable, they are part of the reproducibility contract.
STREAM_PARAMS = 0
STREAM_SHUFFLE = 1
STREAM_FLEET = 2


def substream(seed: int, *key: int) -> np.random.Generator:
    """Return a generator for the (seed, key) stream, independent of all other keys."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)))
