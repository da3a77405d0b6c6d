"""Deterministic random-stream derivation.

Every stochastic component of a run (init, splits, dropout, perturbation,
sampling, poisoning) draws from its own substream derived from the run seed
and a string label, so changing one component's consumption pattern never
shifts another's draws.
"""

from __future__ import annotations

import zlib

import numpy as np


def _label_entropy(label: str | int) -> int:
    if isinstance(label, int):
        return label & 0xFFFFFFFF
    return zlib.crc32(label.encode("utf-8"))


def substream(seed: int, *labels: str | int) -> np.random.Generator:
    """Generator for the (seed, labels...) substream.

    The same (seed, labels) pair always yields an identically seeded PCG64
    stream, on any platform.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_label_entropy(l) for l in labels]
    return np.random.default_rng(np.random.SeedSequence(entropy))
