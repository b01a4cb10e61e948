"""Stable seed derivation.

Every stage and every per-item draw gets its own Generator derived from
(global seed, label) through sha256, so runs are reproducible across
processes and platforms and independent of Python hash randomization.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, *labels) -> int:
    key = ":".join([str(int(seed))] + [str(l) for l in labels])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(seed: int, *labels) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, *labels)))
