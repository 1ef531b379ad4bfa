"""Scalar pre-quantisation of measurement entries.

Each entry of a measurement vector is mapped to the nearest of ``2**r_y``
codepoints trained with the LBG (Lloyd) iteration on zero-mean Gaussian
samples. The tuple of entry indices is the discrete cell key used by the
encoder's lookup tables.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from dcvq.errors import InvalidParameterError

LBG_MAX_ITERS = 200
LBG_REL_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class PreQuantizer:
    bits: int
    codepoints: np.ndarray
    variance: float
    distortion_history: tuple = ()

    def __post_init__(self):
        c = np.array(self.codepoints, dtype=float)
        if c.ndim != 1 or len(c) != 2 ** self.bits:
            raise InvalidParameterError(f"need {2 ** self.bits} codepoints, got {c.shape}")
        if np.any(np.diff(c) <= 0):
            raise InvalidParameterError("codepoints must be strictly increasing")
        c.setflags(write=False)
        object.__setattr__(self, "codepoints", c)

    @property
    def levels(self) -> int:
        return len(self.codepoints)

    @property
    def boundaries(self) -> np.ndarray:
        return 0.5 * (self.codepoints[1:] + self.codepoints[:-1])

    def indices(self, y) -> np.ndarray:
        """Nearest-codepoint index per entry; midpoints go to the lower index."""
        return np.searchsorted(self.boundaries, np.asarray(y, dtype=float), side="left")

    def reconstruct(self, idx) -> np.ndarray:
        return self.codepoints[np.asarray(idx)]

    def cell_keys(self, Y) -> np.ndarray:
        """Pack each row's entry indices into one integer (base ``levels``)."""
        idx = self.indices(np.atleast_2d(Y)).astype(np.int64)
        place = self.levels ** np.arange(idx.shape[1], dtype=np.int64)
        return idx @ place

    def unpack_keys(self, keys, M: int) -> np.ndarray:
        keys = np.asarray(keys, dtype=np.int64)
        out = np.empty((keys.size, M), dtype=np.int64)
        k = keys.copy()
        for m in range(M):
            out[:, m] = k % self.levels
            k //= self.levels
        return out


def prequantize(y, pq: PreQuantizer) -> tuple:
    """Cell key of one measurement vector as a tuple of entry indices."""
    return tuple(int(i) for i in pq.indices(np.atleast_1d(y)))


def design_prequantizer(
    r_y: int, variance: float, rng, n_samples: int = 100_000
) -> PreQuantizer:
    """Train ``2**r_y`` scalar codepoints with the LBG iteration.

    Training data are antithetic Gaussian samples (``s`` and ``-s``) so the
    symmetric initialisation stays symmetric.
    """
    if r_y < 1 or int(r_y) != r_y:
        raise InvalidParameterError(f"r_y must be a positive integer, got {r_y}")
    if not variance > 0:
        raise InvalidParameterError(f"variance must be positive, got {variance}")
    if n_samples < 1000:
        raise InvalidParameterError("need at least 1000 training samples")
    half = rng.standard_normal(n_samples // 2) * np.sqrt(variance)
    x = np.sort(np.r_[half, -half])
    levels = 2 ** int(r_y)
    c = np.sqrt(variance) * norm.ppf((np.arange(levels) + 0.5) / levels)
    history = []
    prev = np.inf
    for _ in range(LBG_MAX_ITERS):
        b = 0.5 * (c[1:] + c[:-1])
        cell = np.searchsorted(b, x, side="left")
        dist = float(np.mean((x - c[cell]) ** 2))
        history.append(dist)
        sums = np.bincount(cell, weights=x, minlength=levels)
        counts = np.bincount(cell, minlength=levels)
        c = np.where(counts > 0, sums / np.maximum(counts, 1), c)
        if prev < np.inf and (prev - dist) <= LBG_REL_TOL * prev:
            break
        prev = dist
    return PreQuantizer(int(r_y), np.sort(c), float(variance), tuple(history))
