"""Discrete memoryless channels on quantizer indices, with the binary
symmetric channel built analytically from bit cross-over probability."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dcvq.errors import InvalidArgumentError, InvalidParameterError
from dcvq.matrixio import dump_matrix, load_matrix


@dataclass(frozen=True, eq=False)
class DmcModel:
    """Row-stochastic transition matrix ``transition[i, j] = P(j | i)``."""

    rate_bits: int
    transition: np.ndarray

    def __post_init__(self):
        p = np.array(self.transition, dtype=float)
        size = 2 ** int(self.rate_bits)
        if p.shape != (size, size):
            raise InvalidParameterError(
                f"transition must be {size}x{size} for {self.rate_bits} bits, got {p.shape}"
            )
        if np.any(p < 0) or not np.allclose(p.sum(axis=1), 1.0, rtol=0, atol=1e-12):
            raise InvalidParameterError("transition rows must be nonnegative and sum to 1")
        p.setflags(write=False)
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "rate_bits", int(self.rate_bits))

    @property
    def size(self) -> int:
        return self.transition.shape[0]

    def dump(self, path) -> None:
        dump_matrix(self.transition, path)

    @classmethod
    def load(cls, path) -> "DmcModel":
        p = load_matrix(path)
        rate = int(round(np.log2(p.shape[0])))
        return cls(rate, p)


def hamming_distances(rate_bits: int) -> np.ndarray:
    """Pairwise Hamming distances between natural-binary index labels."""
    idx = np.arange(2 ** rate_bits)
    x = idx[:, None] ^ idx[None, :]
    return np.array([[int(v).bit_count() for v in row] for row in x], dtype=int)


def bsc_matrix(rate_bits: int, epsilon: float) -> DmcModel:
    """Index-level transition matrix of ``rate_bits`` uses of a BSC(epsilon)."""
    if rate_bits < 0 or int(rate_bits) != rate_bits:
        raise InvalidParameterError(f"rate_bits must be a nonnegative integer, got {rate_bits}")
    if not (0.0 <= epsilon <= 0.5):
        raise InvalidParameterError(f"epsilon must lie in [0, 0.5], got {epsilon}")
    R = int(rate_bits)
    h = hamming_distances(R)
    p = np.power(float(epsilon), h) * np.power(1.0 - epsilon, R - h)
    return DmcModel(R, p)


def transmit(i: int, dmc: DmcModel, rng) -> int:
    """Pass one index through the channel."""
    if not (0 <= int(i) < dmc.size) or int(i) != i:
        raise InvalidArgumentError(f"index {i} outside [0, {dmc.size})")
    return int(transmit_many(np.array([int(i)]), dmc, rng)[0])


def transmit_many(indices, dmc: DmcModel, rng) -> np.ndarray:
    """Vectorised :func:`transmit` by inverse-CDF sampling of each row."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= dmc.size):
        raise InvalidArgumentError(f"indices outside [0, {dmc.size})")
    if dmc.size == 1:
        return np.zeros_like(idx)
    cdf = np.cumsum(dmc.transition, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(idx.shape)
    out = np.empty_like(idx)
    # group by input row to keep memory at O(T)
    for i in np.unique(idx):
        sel = idx == i
        out[sel] = np.searchsorted(cdf[i], u[sel], side="right")
    return np.minimum(out, dmc.size - 1)
