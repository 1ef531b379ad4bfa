"""Codebooks, the trained distributed system, and the centroid (decoder)
update shared by training and tests."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dcvq.channel import DmcModel, transmit_many
from dcvq.errors import InvalidArgumentError
from dcvq.model import ModelParams
from dcvq.quantizer.prequant import PreQuantizer
from dcvq.quantizer.tables import (
    NEAREST,
    SideTables,
    encoder_costs,
    marginal_costs,
)

ANALYTIC = "analytic"
SAMPLED = "sampled"


@dataclass(eq=False)
class Codebook:
    """Decoder lookup table: ``vectors[j1, j2] = [x1_hat, x2_hat]``."""

    vectors: np.ndarray  # (2**R1, 2**R2, 2N)

    def __post_init__(self):
        v = np.array(self.vectors, dtype=float)
        if v.ndim != 3 or v.shape[2] % 2:
            raise InvalidArgumentError(f"codebook must be (J1, J2, 2N), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidArgumentError("codevectors must be finite")
        self.vectors = v

    @property
    def shape(self) -> tuple[int, int]:
        return self.vectors.shape[:2]

    @property
    def n_sources(self) -> int:
        return self.vectors.shape[2] // 2

    def __len__(self) -> int:
        return self.shape[0] * self.shape[1]

    def copy(self) -> "Codebook":
        return Codebook(self.vectors.copy())


def decode(j1: int, j2: int, codebook: Codebook):
    """Look up the codevector pair for received indices ``(j1, j2)``."""
    J1, J2 = codebook.shape
    if not (0 <= j1 < J1 and 0 <= j2 < J2):
        raise InvalidArgumentError(f"({j1}, {j2}) outside {J1}x{J2} codebook")
    v = codebook.vectors[j1, j2]
    N = codebook.n_sources
    return v[:N], v[N:]


def index_sums(i1, i2, x, shape) -> tuple[np.ndarray, np.ndarray]:
    """Counts ``n[i1, i2]`` and source sums ``S[i1, i2, :]``."""
    I1, I2 = shape
    flat = np.asarray(i1) * I2 + np.asarray(i2)
    n = np.bincount(flat, minlength=I1 * I2).astype(float)
    s = np.stack(
        [np.bincount(flat, weights=x[:, d], minlength=I1 * I2) for d in range(x.shape[1])],
        axis=1,
    )
    return n.reshape(I1, I2), s.reshape(I1, I2, -1)


def update_decoder(
    codebook: Codebook,
    x,
    i1,
    i2,
    dmc1: DmcModel,
    dmc2: DmcModel,
    terminal: int | None = None,
    mode: str = ANALYTIC,
    rng=None,
) -> Codebook:
    """Centroid update of the decoder for ``terminal`` (both when None).

    ``analytic``: ``D(j1, j2) = sum P(j1|i1) P(j2|i2) S(i1, i2) /
    sum P(j1|i1) P(j2|i2) n(i1, i2)`` with the known transition matrices.
    ``sampled``: indices are passed through the channels once with ``rng`` and
    each codevector is the mean over draws received as ``(j1, j2)``.
    Empty cells take the batch mean of the source.
    """
    x = np.asarray(x, dtype=float)
    N = codebook.n_sources
    shape = codebook.shape
    if mode == ANALYTIC:
        n, s = index_sums(i1, i2, x, shape)
        T1, T2 = dmc1.transition, dmc2.transition
        den = T1.T @ n @ T2
        num = np.einsum("ab,bcd->acd", T1.T, np.einsum("bcd,ce->bed", s, T2))
    elif mode == SAMPLED:
        if rng is None:
            raise InvalidArgumentError("sampled decoder update needs a random stream")
        j1 = transmit_many(i1, dmc1, rng)
        j2 = transmit_many(i2, dmc2, rng)
        den, num = index_sums(j1, j2, x, shape)
    else:
        raise InvalidArgumentError(f"unknown decoder update mode {mode!r}")
    prior = x.mean(axis=0)
    occupied = den > 0
    new = np.broadcast_to(prior, num.shape).copy()
    new[occupied] = num[occupied] / den[occupied, None]
    out = codebook.vectors.copy()
    part = slice(None) if terminal is None else (slice(0, N) if terminal == 1 else slice(N, 2 * N))
    out[..., part] = new[..., part]
    return Codebook(out)


def channel_averaged(codebook: Codebook, dmc1: DmcModel, dmc2: DmcModel):
    """Per sent pair ``(i1, i2)``: expected codevector and expected squared norm."""
    T1, T2 = dmc1.transition, dmc2.transition
    v = codebook.vectors
    mean = np.einsum("ab,bcd->acd", T1, np.einsum("bcd,ec->bed", v, T2))
    sq = T1 @ np.sum(v * v, axis=2) @ T2.T
    return mean, sq


def expected_distortion(codebook: Codebook, x, i1, i2, dmc1, dmc2, K: int) -> np.ndarray:
    """Per-draw end-to-end distortion averaged over both channels."""
    x = np.asarray(x, dtype=float)
    mean, sq = channel_averaged(codebook, dmc1, dmc2)
    e = np.sum(x * x, axis=1) - 2.0 * np.sum(x * mean[i1, i2], axis=1) + sq[i1, i2]
    return e / (2.0 * K)


def point_to_point_costs(x_tilde, vectors, transition) -> np.ndarray:
    """Costs ``sum_j P(j|i) (||D(j)||^2 - 2 x_tilde^T D(j))`` of a single
    channel-optimised VQ for each row of ``x_tilde`` and each index ``i``."""
    x_tilde = np.atleast_2d(np.asarray(x_tilde, float))
    v = np.asarray(vectors, float)
    T = np.asarray(transition, float)
    return (T @ np.sum(v * v, axis=1))[None, :] - 2.0 * x_tilde @ (T @ v).T


@dataclass(eq=False)
class HistoryEntry:
    iteration: int
    step: str
    mse: float
    stderr: float


@dataclass(eq=False)
class QuantizerSystem:
    """Trained (or initialised) distributed quantiser over two channels."""

    params: ModelParams
    phi1: np.ndarray
    phi2: np.ndarray
    prequantizers: tuple[PreQuantizer, PreQuantizer]
    tables: tuple[SideTables, SideTables]
    codebook: Codebook
    channels: tuple[DmcModel, DmcModel]
    rates: tuple[int, int]
    history: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    fallback: str = NEAREST
    decoder_update: str = ANALYTIC
    _index_cache: dict = field(default_factory=dict, repr=False)

    @property
    def total_rate(self) -> int:
        return self.rates[0] + self.rates[1]

    def _cell_indices(self, terminal: int):
        if terminal not in self._index_cache:
            tab = self.tables[terminal - 1]
            own, partner = self.channels if terminal == 1 else self.channels[::-1]
            costs = encoder_costs(tab, self.codebook.vectors, own.transition, partner.transition)
            per_cell = np.argmin(costs, axis=1)  # first minimum: lowest index wins ties
            unseen = int(np.argmin(marginal_costs(
                tab, self.codebook.vectors, own.transition, partner.transition)))
            self._index_cache[terminal] = (per_cell, unseen)
        return self._index_cache[terminal]

    def encode_batch(self, Y, terminal: int) -> np.ndarray:
        """Encoder output index for each row of the terminal's measurements."""
        pq = self.prequantizers[terminal - 1]
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        keys = pq.cell_keys(Y)
        points = pq.reconstruct(pq.indices(Y))
        rows = self.tables[terminal - 1].rows_for(keys, points, self.fallback)
        per_cell, unseen = self._cell_indices(terminal)
        return np.where(rows >= 0, per_cell[np.maximum(rows, 0)], unseen)

    def reconstruct(self, batch, rng) -> np.ndarray:
        """Encode, transmit and decode a batch; returns stacked estimates."""
        i1 = self.encode_batch(batch.y1, 1)
        i2 = self.encode_batch(batch.y2, 2)
        j1 = transmit_many(i1, self.channels[0], rng)
        j2 = transmit_many(i2, self.channels[1], rng)
        return self.codebook.vectors[j1, j2]


def encode(y, system: QuantizerSystem, terminal: int = 1) -> int:
    """Index chosen by ``terminal``'s encoder for one measurement vector."""
    return int(system.encode_batch(np.asarray(y, float)[None, :], terminal)[0])
