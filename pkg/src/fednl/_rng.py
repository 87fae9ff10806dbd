"""Deterministic random-stream derivation.

Every stochastic operation in the simulator draws from a generator derived
from (master seed, stream tag, *indices). Streams are independent, so adding
or removing a consumer never shifts the draws of another stream.
"""

import numpy as np

# Stream tags. Values are part of the reproducibility contract: changing them
# changes every derived stream.
SERVER_INIT = 1
SERVER_SPLIT = 2
TRAIN = 3
ESTIMATE = 4
EXCHANGE = 5
SYNTH = 6
PARTITION = 7
FOLDS = 8
INJECT = 9
MEASURE = 10
INIT_GAP = 11


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Generator for the stream identified by (seed, *keys)."""
    entropy = (int(seed),) + tuple(int(k) for k in keys)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(seed: int, *keys: int) -> int:
    """A plain integer seed derived from (seed, *keys), for APIs taking one seed."""
    entropy = (int(seed),) + tuple(int(k) for k in keys)
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])
