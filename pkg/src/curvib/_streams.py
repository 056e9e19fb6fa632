"""Counter-based random streams.

Every random draw in the toolkit comes from a generator keyed by
(seed, purpose, counters...), so runs are reproducible bit-for-bit and a
checkpointed run can resume mid-stream without serializing generator state.
"""

import numpy as np

# purpose tags (first spawn key)
PARAMS = 0
DROPOUT = 1
REPARAM = 2
CONCRETE = 3
NOISE = 4
SPLITS = 5
SBM = 6
CANDIDATES = 7
FEATURES = 8


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for (seed, *keys); same keys, same stream."""
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(keys)))
