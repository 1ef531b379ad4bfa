"""Seed-derived random substreams.

Every random purpose (supports, Gaussians, channel noise, codebook
initialisation, ...) gets its own generator derived from the experiment seed
and a tuple of labels, so any piece of an experiment can be re-run alone and
reproduce the same draws.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_words(labels) -> tuple[int, ...]:
    words = []
    for label in labels:
        digest = hashlib.sha256(repr(label).encode("utf-8")).digest()
        words.append(int.from_bytes(digest[:4], "little"))
    return tuple(words)


def substream(seed: int, *labels) -> np.random.Generator:
    """Return an independent generator for ``(seed, *labels)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=_label_words(labels))
    return np.random.Generator(np.random.PCG64(ss))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
