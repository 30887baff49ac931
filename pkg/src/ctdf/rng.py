"""Seeded random streams.

Every random draw in ctdf comes from a Philox (counter-based) generator keyed
by ``SeedSequence([seed, purpose, *indices])``. A sample's stream therefore
depends only on the run seed and the sample's own index, never on the order
in which samples are generated.
"""
from __future__ import annotations

import numpy as np

SEED_MASK = (1 << 64) - 1

# purpose tags
PHANTOM = 1
NDCT_NOISE = 2
LDCT_NOISE = 3
AUGMENT = 4
TRAIN_DRAW = 5
INIT = 6
SPLIT = 7


def stream(seed: int, purpose: int, *indices: int) -> np.random.Generator:
    entropy = [int(seed) & SEED_MASK, int(purpose), *(int(i) for i in indices)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
