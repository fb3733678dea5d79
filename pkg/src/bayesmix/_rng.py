"""Seed-splitting rule used everywhere randomness is consumed.

A replicate (or chunk) ``i`` drawn under master seed ``s`` always uses the
stream ``SeedSequence(s, spawn_key=(i,))``, so results never depend on how
work is scheduled across threads.
"""

import numpy as np


def stream(seed, index=0):
    """Generator for replicate/chunk ``index`` under master ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.PCG64(ss))
