"""Named, collision-resistant random substreams.

Every stochastic routine in the package takes an integer seed.  Workflows
that need several independent streams derive them from one root seed plus
a tuple of tags (strings or integers), so the same root seed always yields
the same full set of draws no matter which subset of steps actually runs.
"""

from __future__ import annotations

import zlib

import numpy as np


def _spawn_key(tags) -> tuple[int, ...]:
    return tuple(zlib.crc32(repr(t).encode("utf8")) for t in tags)


def substream(seed: int, *tags) -> np.random.Generator:
    """Generator for the stream named by ``tags`` under root ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=_spawn_key(tags)))


def derive_seed(seed: int, *tags) -> int:
    """Integer seed for handing to routines that spawn their own streams."""
    ss = np.random.SeedSequence(seed, spawn_key=_spawn_key(tags))
    return int(ss.generate_state(1, np.uint32)[0])
