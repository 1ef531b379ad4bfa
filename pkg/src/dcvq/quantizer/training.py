"""Alternating encoder/decoder training, the centralised benchmark and
end-to-end evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from dcvq.channel import DmcModel, bsc_matrix, transmit_many
from dcvq.errors import InvalidArgumentError, InvalidParameterError
from dcvq.estimator import SupportPosterior, per_sample_distortion
from dcvq.model import ModelParams, sample_sources
from dcvq.quantizer.core import (
    ANALYTIC,
    SAMPLED,
    Codebook,
    HistoryEntry,
    QuantizerSystem,
    expected_distortion,
    point_to_point_costs,
    update_decoder,
)
from dcvq.quantizer.prequant import design_prequantizer
from dcvq.quantizer.tables import FALLBACKS, NEAREST, build_side_tables, encoder_costs
from dcvq.streams import as_generator

log = logging.getLogger(__name__)

STEPS = ("encoder1", "decoder1", "encoder2", "decoder2")


@dataclass
class TrainingConfig:
    params: ModelParams
    phi1: np.ndarray
    phi2: np.ndarray
    rates: tuple[int, int] = (5, 5)
    epsilon: float = 0.0
    train_size: int = 300_000
    r_y: int = 3
    max_iters: int = 50
    tol: float = 1e-4
    decoder_update: str = ANALYTIC
    fallback: str = NEAREST
    prequant_samples: int = 100_000
    channels: tuple | None = None  # explicit DmcModels override epsilon

    def __post_init__(self):
        self.phi1 = np.asarray(self.phi1, dtype=float)
        self.phi2 = np.asarray(self.phi2, dtype=float)
        if any(r < 0 or int(r) != r for r in self.rates):
            raise InvalidParameterError(f"rates must be nonnegative integers: {self.rates}")
        if self.decoder_update not in (ANALYTIC, SAMPLED):
            raise InvalidParameterError(f"unknown decoder update {self.decoder_update!r}")
        if self.fallback not in FALLBACKS:
            raise InvalidParameterError(f"unknown fallback {self.fallback!r}")
        if self.max_iters < 1 or self.tol < 0:
            raise InvalidParameterError("need max_iters >= 1 and tol >= 0")

    @property
    def dmcs(self) -> tuple[DmcModel, DmcModel]:
        if self.channels is not None:
            return tuple(self.channels)
        return bsc_matrix(self.rates[0], self.epsilon), bsc_matrix(self.rates[1], self.epsilon)


def _sparse_random_codevectors(config: TrainingConfig, count: int, rng) -> np.ndarray:
    draw = sample_sources(config.params, config.phi1, config.phi2, rng, size=count)
    return draw.x


def _stderr(values: np.ndarray) -> float:
    return float(np.std(values, ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0


def train(config: TrainingConfig, rng, batch=None) -> QuantizerSystem:
    """Design both encoders and decoders by alternating optimisation.

    Each iteration runs, in order: terminal-1 encoder, terminal-1 decoder
    components, terminal-2 encoder, terminal-2 decoder components. The side
    tables of the other terminal are rebuilt after each encoder change.
    The recorded MSE is the training-set distortion averaged over the
    channels. Stops when one full iteration improves the MSE by less than
    ``tol`` (relative) or after ``max_iters``.
    """
    rng = as_generator(rng)
    rng_pq, rng_batch, rng_init, rng_chan = rng.spawn(4)
    p = config.params
    R1, R2 = config.rates
    dmc1, dmc2 = config.dmcs
    if batch is None:
        batch = sample_sources(p, config.phi1, config.phi2, rng_batch, size=config.train_size)
    if len(batch) < 1:
        raise InvalidArgumentError("empty training batch")
    pq = design_prequantizer(config.r_y, p.K / p.M, rng_pq, config.prequant_samples)
    x = batch.x
    Y = (batch.y1, batch.y2)
    keys = tuple(pq.cell_keys(y) for y in Y)
    points = tuple(pq.reconstruct(pq.indices(y)) for y in Y)
    sizes = (2 ** R1, 2 ** R2)

    codebook = Codebook(
        _sparse_random_codevectors(config, sizes[0] * sizes[1], rng_init).reshape(
            sizes[0], sizes[1], 2 * p.N
        )
    )
    idx = [_initial_indices(keys[l], x, codebook, l + 1) for l in range(2)]

    history: list[HistoryEntry] = []

    def record(it, step):
        e = expected_distortion(codebook, x, idx[0], idx[1], dmc1, dmc2, p.K)
        history.append(HistoryEntry(it, step, float(e.mean()), _stderr(e)))
        return history[-1].mse

    def tables_for(terminal):
        l = terminal - 1
        return build_side_tables(keys[l], points[l], idx[1 - l], x, sizes[1 - l], terminal)

    def encoder_step(terminal):
        l = terminal - 1
        tab = tables_for(terminal)
        own, partner = (dmc1, dmc2) if terminal == 1 else (dmc2, dmc1)
        costs = encoder_costs(tab, codebook.vectors, own.transition, partner.transition)
        cell_rows = np.searchsorted(tab.cell_keys, keys[l])
        idx[l] = np.argmin(costs, axis=1)[cell_rows]

    prev = record(0, "init")
    best = (prev, codebook.copy(), [i.copy() for i in idx])
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        encoder_step(1)
        record(it, STEPS[0])
        codebook = update_decoder(codebook, x, idx[0], idx[1], dmc1, dmc2, 1,
                                  config.decoder_update, rng_chan)
        record(it, STEPS[1])
        encoder_step(2)
        record(it, STEPS[2])
        codebook = update_decoder(codebook, x, idx[0], idx[1], dmc1, dmc2, 2,
                                  config.decoder_update, rng_chan)
        cur = record(it, STEPS[3])
        if cur < best[0]:
            best = (cur, codebook.copy(), [i.copy() for i in idx])
        log.debug("iteration %d: mse %.6g", it, cur)
        if prev > 0 and (prev - cur) / prev < config.tol:
            converged = True
            break
        prev = cur

    _, codebook, idx = best
    final_tables = (tables_for(1), tables_for(2))
    return QuantizerSystem(
        params=p,
        phi1=config.phi1,
        phi2=config.phi2,
        prequantizers=(pq, pq),
        tables=final_tables,
        codebook=codebook,
        channels=(dmc1, dmc2),
        rates=(R1, R2),
        history=history,
        converged=converged,
        iterations=it,
        fallback=config.fallback,
        decoder_update=config.decoder_update,
    )


def _initial_indices(keys, x, codebook: Codebook, terminal: int) -> np.ndarray:
    """Nearest-codevector encoding of each cell's mean source (noiseless cost)."""
    cells, rows = np.unique(keys, return_inverse=True)
    n = np.bincount(rows).astype(float)
    means = np.stack([np.bincount(rows, weights=x[:, d]) for d in range(x.shape[1])], axis=1)
    means /= n[:, None]
    J1, J2 = codebook.shape
    flat = codebook.vectors.reshape(J1 * J2, -1)
    cost = np.sum(flat * flat, axis=1)[None, :] - 2.0 * means @ flat.T
    j1, j2 = np.unravel_index(np.argmin(cost, axis=1), (J1, J2))
    per_cell = j1 if terminal == 1 else j2
    return per_cell[rows]


@dataclass(eq=False)
class CentralizedSystem:
    """Single channel-optimised VQ over the stacked measurements ``[y1, y2]``.

    The encoder maps the closed-form estimate ``x_tilde(y)`` to the index
    minimising the channel-averaged distortion; the decoder is the
    channel-weighted centroid of each index's training sources.
    """

    params: ModelParams
    posterior: SupportPosterior
    vectors: np.ndarray  # (2**R, 2N)
    channel: DmcModel
    history: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0

    def encode_estimates(self, x_tilde) -> np.ndarray:
        return np.argmin(point_to_point_costs(x_tilde, self.vectors, self.channel.transition), axis=1)

    def reconstruct(self, batch, rng) -> np.ndarray:
        xt = self.posterior.estimate_or_oracle(batch.y, batch.supports)
        i = self.encode_estimates(xt)
        return self.vectors[transmit_many(i, self.channel, rng)]


def _centroids(vectors, x, idx, transition) -> np.ndarray:
    I = vectors.shape[0]
    n = np.bincount(idx, minlength=I).astype(float)
    s = np.stack([np.bincount(idx, weights=x[:, d], minlength=I) for d in range(x.shape[1])], axis=1)
    den = transition.T @ n
    num = transition.T @ s
    out = np.broadcast_to(x.mean(axis=0), vectors.shape).copy()
    occ = den > 0
    out[occ] = num[occ] / den[occ, None]
    return out


def _p2p_expected(vectors, x, idx, transition, K) -> np.ndarray:
    mean = transition @ vectors
    sq = transition @ np.sum(vectors * vectors, axis=1)
    e = np.sum(x * x, axis=1) - 2.0 * np.sum(x * mean[idx], axis=1) + sq[idx]
    return e / (2.0 * K)


def train_centralized(config: TrainingConfig, rng, batch=None) -> CentralizedSystem:
    """Point-to-point channel-optimised VQ of the stacked sources at rate
    ``R1 + R2`` over one BSC with the same cross-over probability."""
    rng = as_generator(rng)
    _, rng_batch, rng_init, _ = rng.spawn(4)
    p = config.params
    R = sum(config.rates)
    if config.channels is not None:
        raise InvalidParameterError("centralised design builds its own BSC from epsilon")
    channel = bsc_matrix(R, config.epsilon)
    T = channel.transition
    if batch is None:
        batch = sample_sources(p, config.phi1, config.phi2, rng_batch, size=config.train_size)
    post = SupportPosterior(config.phi1, config.phi2, p)
    x = batch.x
    xt = post.estimate_or_oracle(batch.y, batch.supports)
    vectors = _sparse_random_codevectors(config, 2 ** R, rng_init)
    noiseless = np.eye(2 ** R)
    idx = np.argmin(point_to_point_costs(xt, vectors, noiseless), axis=1)
    history = []

    def record(it, step):
        e = _p2p_expected(vectors, x, idx, T, p.K)
        history.append(HistoryEntry(it, step, float(e.mean()), _stderr(e)))
        return history[-1].mse

    prev = record(0, "init")
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        idx = np.argmin(point_to_point_costs(xt, vectors, T), axis=1)
        record(it, "encoder")
        vectors = _centroids(vectors, x, idx, T)
        cur = record(it, "decoder")
        if prev > 0 and (prev - cur) / prev < config.tol:
            converged = True
            break
        prev = cur
    return CentralizedSystem(p, post, vectors, channel, history, converged, it)


@dataclass(frozen=True)
class Evaluation:
    d: float
    d_cs: float
    d_q: float
    d_se: float
    d_cs_se: float
    d_q_se: float
    cross: float  # d - d_cs - d_q
    cross_se: float
    n: int


def distortion_report(x, x_tilde, x_hat, K: int) -> Evaluation:
    """End-to-end, estimation and quantisation distortions with standard errors."""
    x = np.asarray(x, float)
    if len(x) == 0:
        raise InvalidArgumentError("empty batch")
    d = per_sample_distortion(x, x_hat, K)
    cs = per_sample_distortion(x, x_tilde, K)
    q = per_sample_distortion(x_tilde, x_hat, K)
    cross = d - cs - q
    return Evaluation(
        float(d.mean()), float(cs.mean()), float(q.mean()),
        _stderr(d), _stderr(cs), _stderr(q),
        float(cross.mean()), _stderr(cross), len(x),
    )


def evaluate(system, batch, rng, posterior: SupportPosterior | None = None) -> Evaluation:
    """Run a fresh test batch end to end.

    The estimation distortion uses the closed-form MMSE estimator, or the
    known-support estimator when the measurements are noiseless.
    """
    if len(batch) == 0:
        raise InvalidArgumentError("empty batch")
    rng = as_generator(rng)
    p = system.params
    if posterior is None:
        posterior = getattr(system, "posterior", None) or SupportPosterior(system.phi1, system.phi2, p)
    x_tilde = posterior.estimate_or_oracle(batch.y, batch.supports)
    x_hat = system.reconstruct(batch, rng)
    return distortion_report(batch.x, x_tilde, x_hat, p.K)
