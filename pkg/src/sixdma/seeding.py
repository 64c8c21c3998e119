"""Counter-based random stream splitting.

Every random consumer gets its own stream keyed by ``(master_seed, *key)``
through :class:`numpy.random.SeedSequence` spawn keys, so results do not
depend on the order in which streams are created.
"""
import numpy as np

SPLIT_RULE = "numpy.SeedSequence(entropy=master_seed, spawn_key=(stage, *indices)) -> PCG64"

STAGE_GROUND_TRUTH = 0
STAGE_TRAINING = 1
STAGE_EVALUATION = 2
STAGE_BENCHMARK = 3


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))
