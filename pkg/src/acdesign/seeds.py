"""Deterministic seed derivation.

Every stochastic operation in the package takes an explicit 64-bit seed.
Child seeds are derived from a root seed plus an integer path (a counter
scheme) via numpy's SeedSequence, so any subtree of the computation can be
reproduced in isolation:

    derive(root, 3)       -> seed for worker/iteration 3
    derive(root, 3, 17)   -> seed for rollout 17 inside iteration 3
"""

from __future__ import annotations

import numpy as np

__all__ = ["derive", "rng_from"]


def derive(root: int, *path: int) -> int:
    """Return the 64-bit child seed at `path` below `root`."""
    ss = np.random.SeedSequence(root, spawn_key=tuple(path))
    return int(ss.generate_state(1, np.uint64)[0])


def rng_from(root: int, *path: int) -> np.random.Generator:
    """Generator seeded at `path` below `root` (root itself if no path)."""
    return np.random.default_rng(np.random.SeedSequence(root, spawn_key=tuple(path)))
