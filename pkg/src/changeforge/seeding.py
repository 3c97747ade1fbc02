"""Named random streams derived from one integer seed.

Each stage draws from ``stream(seed, name)``, a generator seeded by
``SeedSequence(seed, spawn_key=(crc32(name),))``. Streams are independent of
each other and of the order in which stages run, so any stage can be re-run
alone with the same seed. Names in use:

* ``"init"``: network weight initialization
* ``"data"``: epoch shuffles and patch crops
* ``"replay"``: replay-buffer swaps
* ``"synthetic"``: the built-in demo dataset
* ``"eval"``: evaluation-time sampling (permutation nulls)
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(key,)))
