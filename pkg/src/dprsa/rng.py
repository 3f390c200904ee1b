"""Counter-based random streams keyed by (seed, worker, round, purpose).

Each stream is a Philox generator whose key comes from ``(seed, worker)`` and
whose counter starts at ``(0, 0, round, purpose)``. Streams for different
rounds or purposes never overlap, and a stream's values do not depend on
which other streams were drawn first, so worker evaluation order is
irrelevant.
"""

from __future__ import annotations

from enum import IntEnum
from functools import lru_cache

import numpy as np

MASTER = 2**31 - 1


class Purpose(IntEnum):
    INIT = 0
    MINIBATCH = 1
    MECHANISM = 2
    ATTACK = 3
    PARTITION = 4
    DATA = 5
    EVAL = 6


@lru_cache(maxsize=4096)
def _key(seed: int, worker: int) -> tuple[int, int]:
    state = np.random.SeedSequence([seed, worker]).generate_state(2, np.uint64)
    return int(state[0]), int(state[1])


def stream(seed: int, worker: int, round_index: int, purpose: Purpose) -> np.random.Generator:
    """Independent generator for one (seed, worker, round, purpose) cell."""
    if min(seed, worker, round_index) < 0:
        raise ValueError("seed, worker and round must be nonnegative")
    k0, k1 = _key(int(seed), int(worker))
    key = np.array([k0, k1], dtype=np.uint64)
    counter = np.array([0, 0, round_index, int(purpose)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))
