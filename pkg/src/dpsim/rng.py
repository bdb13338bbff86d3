"""Counter-based random streams keyed by (master seed, trial index)."""
from __future__ import annotations

import numpy as np


def derive_seed(master_seed: int, index: int) -> int:
    """64-bit seed for stream ``index`` of ``master_seed``.

    Depends only on the pair, so any scheduling of trials reproduces it.
    """
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))
