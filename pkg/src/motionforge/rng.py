"""Counter-based random streams.

Every consumer derives its own Philox generator from (seed, stream, index),
so results do not depend on how work is scheduled across workers: a worker
re-keyed with the same coordinates always sees the same draws.
"""

from __future__ import annotations

from enum import IntEnum

import numpy as np


class Stream(IntEnum):
    INIT = 0
    TRAIN_BATCH = 1
    TRAIN_NOISE = 2
    ROLLOUT = 3
    CANDIDATES = 4
    POLICY = 5
    ENV = 6
    EVAL = 7
    SERVE = 8


def philox(seed: int, stream: int, index: int = 0,
           substream: int = 0) -> np.random.Generator:
    """Independent generator for logical coordinates (seed, stream, index)."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, int(stream)], dtype=np.uint64)
    counter = np.array([0, 0, int(substream), int(index)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))
