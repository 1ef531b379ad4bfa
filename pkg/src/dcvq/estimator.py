"""Closed-form Bayesian estimation of the two sparse sources from both
terminals' measurements.

For a fixed support ``S`` the latent vector ``q = [theta_S, z1_S, z2_S]`` and
the stacked measurement ``y = [y1, y2]`` are jointly Gaussian with
``y = F q + w``, ``cov(q) = E``, ``cov(w) = N_mat``, ``cov(y, q) = C`` and
``cov(y) = D_mat``. The MMSE estimate mixes the per-support conditional means
with posterior support weights computed in the log domain.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import linalg as la
from scipy.special import logsumexp

from dcvq.errors import DegenerateModelError, InvalidArgumentError
from dcvq.linalg import factor_logdet, gaussian_logpdf_rows, spd_factor
from dcvq.model import ModelParams

SYMMETRIC_WEIGHTING = "symmetric"
ASYMMETRIC_WEIGHTING = "asymmetric"


@lru_cache(maxsize=64)
def enumerate_supports(N: int, K: int) -> tuple[tuple[int, ...], ...]:
    """All K-subsets of ``range(N)`` in lexicographic order."""
    return tuple(itertools.combinations(range(N), K))


def support_ranks(supports: np.ndarray, N: int, K: int) -> np.ndarray:
    """Position of each sorted support row in :func:`enumerate_supports`."""
    table = np.array(enumerate_supports(N, K), dtype=np.int64)
    weights = N ** np.arange(K - 1, -1, -1, dtype=np.int64)
    keys = table @ weights
    q = np.asarray(supports, dtype=np.int64) @ weights
    pos = np.searchsorted(keys, q)
    if np.any(pos >= len(keys)) or np.any(keys[np.minimum(pos, len(keys) - 1)] != q):
        raise InvalidArgumentError("supports must be sorted K-subsets of range(N)")
    return pos


def _selector(K: int) -> np.ndarray:
    """Maps ``q`` to ``[x1_S, x2_S]``: ``[[I, I, 0], [I, 0, I]]``."""
    eye, zero = np.eye(K), np.zeros((K, K))
    return np.block([[eye, eye, zero], [eye, zero, eye]])


def oracle_weighting_matrix(K: int, variant: str = SYMMETRIC_WEIGHTING) -> np.ndarray:
    eye, zero = np.eye(K), np.zeros((K, K))
    if variant == SYMMETRIC_WEIGHTING:
        return np.block([[2 * eye, eye, eye], [eye, eye, zero], [eye, zero, eye]])
    if variant == ASYMMETRIC_WEIGHTING:
        return np.block([[2 * eye, eye, eye], [eye, eye, zero], [eye, eye, eye]])
    raise InvalidArgumentError(f"unknown weighting variant {variant!r}")


@dataclass(frozen=True, eq=False)
class SupportBlockMatrices:
    support: tuple
    C: np.ndarray  # (2M, 3K)
    D_mat: np.ndarray  # (2M, 2M)
    N_mat: np.ndarray  # (2M, 2M)
    E_mat: np.ndarray  # (3K, 3K)
    F: np.ndarray  # (2M, 3K)
    n_sources: int = 0  # source dimension N, for scattering estimates
    regularize: bool = False


def assemble_blocks(support, phi1, phi2, params: ModelParams) -> SupportBlockMatrices:
    """Covariance blocks of ``(y, q)`` for one support."""
    phi1 = np.asarray(phi1, dtype=float)
    phi2 = np.asarray(phi2, dtype=float)
    S = list(support)
    M, K = params.M, params.K
    if len(S) != K:
        raise InvalidArgumentError(f"support must have {K} elements, got {len(S)}")
    p1, p2 = phi1[:, S], phi2[:, S]
    st, sz = params.sigma_theta_sq, params.sigma_z_sq
    s1, s2 = params.sigma_w_sq
    zmk = np.zeros((M, K))
    C = np.block([[st * p1, sz * p1, zmk], [st * p2, zmk, sz * p2]])
    D_mat = np.block(
        [
            [p1 @ p1.T + s1 * np.eye(M), st * p1 @ p2.T],
            [st * p2 @ p1.T, p2 @ p2.T + s2 * np.eye(M)],
        ]
    )
    N_mat = np.diag(np.r_[np.full(M, s1), np.full(M, s2)])
    E_mat = np.diag(np.r_[np.full(K, st), np.full(2 * K, sz)])
    F = np.block([[p1, p1, zmk], [p2, zmk, p2]])
    return SupportBlockMatrices(tuple(S), C, D_mat, N_mat, E_mat, F, params.N, params.noiseless)


def _latent_mask(params: ModelParams) -> np.ndarray:
    K = params.K
    var = np.r_[np.full(K, params.sigma_theta_sq), np.full(2 * K, params.sigma_z_sq)]
    return var > 0


def _scatter(est_s: np.ndarray, support, N: int) -> np.ndarray:
    """Place ``[x1_S, x2_S]`` rows into zero-filled ``(T, 2N)`` output."""
    K = len(support)
    out = np.zeros((est_s.shape[0], 2 * N))
    S = np.asarray(support)
    out[:, S] = est_s[:, :K]
    out[:, N + S] = est_s[:, K:]
    return out


def oracle_gain(blocks: SupportBlockMatrices) -> np.ndarray:
    """``[[I, I, 0], [I, 0, I]] C^T D^{-1}``, shape (2K, 2M)."""
    K = blocks.C.shape[1] // 3
    fac = spd_factor(blocks.D_mat, regularize=blocks.regularize)
    # D symmetric: C^T D^{-1} = (D^{-1} C)^T
    return _selector(K) @ la.cho_solve(fac, blocks.C).T


def oracle_conditional_mean(y, support, blocks: SupportBlockMatrices) -> np.ndarray:
    """``E[X | y, S]`` as a stacked 2N-vector (zero off the support)."""
    y = np.asarray(y, dtype=float)
    if blocks.support != tuple(support):
        raise InvalidArgumentError("blocks were assembled for a different support")
    est = np.atleast_2d(y) @ oracle_gain(blocks).T
    out = _scatter(est, support, blocks.n_sources)
    return out[0] if y.ndim == 1 else out


@dataclass(frozen=True, eq=False)
class SupportWeightTable:
    supports: tuple
    log_weights: np.ndarray
    normalized_weights: np.ndarray

    def argmax_support(self) -> tuple:
        return self.supports[int(np.argmax(self.log_weights))]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["support", "weight"])
            for s, p in zip(self.supports, self.normalized_weights):
                w.writerow([" ".join(str(i) for i in s), repr(float(p))])


class SupportPosterior:
    """Per-support quantities precomputed once for a fixed model and
    sensing pair, evaluated on batches of stacked measurements."""

    def __init__(self, phi1, phi2, params: ModelParams):
        self.params = params
        self.phi1 = np.asarray(phi1, dtype=float)
        self.phi2 = np.asarray(phi2, dtype=float)
        self.supports = enumerate_supports(params.N, params.K)
        self.blocks = []
        self.gains = []
        for S in self.supports:
            b = assemble_blocks(S, self.phi1, self.phi2, params)
            self.blocks.append(b)
            self.gains.append(oracle_gain(b))
        self._weight_terms = None if params.noiseless else self._build_weight_terms()

    def _build_weight_terms(self):
        mask = _latent_mask(self.params)
        n_inv = 1.0 / np.diag(self.blocks[0].N_mat)
        terms = []
        for b in self.blocks:
            Fk = b.F[:, mask]
            e_inv = 1.0 / np.diag(b.E_mat)[mask]
            proj = n_inv[:, None] * Fk  # N^{-1} F
            A = np.diag(e_inv) + Fk.T @ proj
            fac = spd_factor(A)
            terms.append((proj, fac[0], factor_logdet(fac)))
        return terms

    def log_weights(self, Y) -> np.ndarray:
        """Unnormalised ``log beta_S`` for each row of ``Y`` (T, |Omega|).

        ``log beta_S = 0.5 * (b^T A^{-1} b - log det A)`` with
        ``A = E^{-1} + F^T N^{-1} F`` and ``b = F^T N^{-1} y``; zero-variance
        latent blocks are dropped from ``q`` before forming ``A``.
        """
        if self._weight_terms is None:
            raise DegenerateModelError(
                "support weights need positive measurement noise; use the oracle path"
            )
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        out = np.empty((Y.shape[0], len(self.supports)))
        for k, (proj, chol, logdet) in enumerate(self._weight_terms):
            v = la.solve_triangular(chol, (Y @ proj).T, lower=True)
            out[:, k] = 0.5 * (np.sum(v * v, axis=0) - logdet)
        return out

    def normalized_weights(self, Y) -> np.ndarray:
        lw = self.log_weights(Y)
        return np.exp(lw - logsumexp(lw, axis=1, keepdims=True))

    def conditional_mean(self, Y, k: int) -> np.ndarray:
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        return _scatter(Y @ self.gains[k].T, self.supports[k], self.params.N)

    def estimate(self, Y) -> tuple[np.ndarray, np.ndarray]:
        """MMSE estimates (T, 2N) and normalised weights (T, |Omega|)."""
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        w = self.normalized_weights(Y)
        N = self.params.N
        out = np.zeros((Y.shape[0], 2 * N))
        for k, S in enumerate(self.supports):  # fixed order: bit-stable sums
            est = (Y @ self.gains[k].T) * w[:, k : k + 1]
            Sa = np.asarray(S)
            out[:, Sa] += est[:, : len(S)]
            out[:, N + Sa] += est[:, len(S) :]
        return out, w

    def oracle_estimate(self, Y, supports) -> np.ndarray:
        """Known-support conditional means for each row."""
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        ranks = support_ranks(supports, self.params.N, self.params.K)
        out = np.zeros((Y.shape[0], 2 * self.params.N))
        for k in np.unique(ranks):
            sel = ranks == k
            out[sel] = self.conditional_mean(Y[sel], int(k))
        return out

    def estimate_or_oracle(self, Y, supports) -> np.ndarray:
        """MMSE estimate, or the known-support estimate when noiseless."""
        if self.params.noiseless:
            return self.oracle_estimate(Y, supports)
        return self.estimate(Y)[0]


def log_support_weights(y, phi1, phi2, params: ModelParams) -> SupportWeightTable:
    """Posterior support weights for one stacked measurement ``y = [y1, y2]``."""
    if params.noiseless:
        raise DegenerateModelError(
            "support weights need positive measurement noise; use the oracle path"
        )
    post = SupportPosterior(phi1, phi2, params)
    lw = post.log_weights(np.asarray(y, dtype=float)[None, :])[0]
    w = np.exp(lw - logsumexp(lw))
    return SupportWeightTable(post.supports, lw, w)


def mmse_estimate(y1, y2, phi1, phi2, params: ModelParams):
    """Return ``(x1_tilde, x2_tilde, weights)`` for one measurement pair."""
    if params.noiseless:
        raise DegenerateModelError(
            "MMSE support weights need positive measurement noise; use the oracle path"
        )
    post = SupportPosterior(phi1, phi2, params)
    y = np.r_[np.asarray(y1, float), np.asarray(y2, float)]
    est, w = post.estimate(y[None, :])
    lw = post.log_weights(y[None, :])[0]
    N = params.N
    return est[0, :N], est[0, N:], SupportWeightTable(post.supports, lw, w[0])


def per_sample_distortion(x, x_hat, K: int) -> np.ndarray:
    """``sum_l ||x_l - x_hat_l||^2 / (2K)`` per row of stacked (T, 2N) arrays."""
    d = np.asarray(x, float) - np.asarray(x_hat, float)
    return np.sum(d * d, axis=1) / (2.0 * K)


def cs_distortion(batch, x1_tilde, x2_tilde) -> float:
    """Empirical CS distortion of a batch of draws and their estimates."""
    if len(batch) == 0:
        raise InvalidArgumentError("empty batch")
    K = batch.supports.shape[1]
    est = np.hstack([np.atleast_2d(x1_tilde), np.atleast_2d(x2_tilde)])
    return float(np.mean(per_sample_distortion(batch.x, est, K)))


def oracle_cs_bound(phi1, phi2, params: ModelParams, weighting: str = SYMMETRIC_WEIGHTING) -> float:
    """MSE of the known-support estimator averaged over all supports."""
    K = params.K
    W = oracle_weighting_matrix(K, weighting)
    acc = np.zeros((3 * K, 3 * K))
    supports = enumerate_supports(params.N, K)
    for S in supports:
        b = assemble_blocks(S, phi1, phi2, params)
        fac = spd_factor(b.D_mat, regularize=b.regularize)
        acc += b.C.T @ la.cho_solve(fac, b.C)
    acc /= len(supports)
    return float(1.0 - np.trace(W @ acc) / (2 * K))


def log_cond_density(y2, y1, phi1, phi2, params: ModelParams) -> float:
    """``ln p(y2 | y1)`` as the ratio of two uniform Gaussian mixtures over
    supports: joint covariance ``D_mat`` over marginal
    ``Psi E1 Psi^T + sigma_w1^2 I`` with ``Psi = [Phi_1S, Phi_1S]``."""
    if params.noiseless:
        raise DegenerateModelError("conditional density needs positive measurement noise")
    phi1 = np.asarray(phi1, float)
    phi2 = np.asarray(phi2, float)
    y = np.r_[np.asarray(y1, float), np.asarray(y2, float)]
    y1 = np.asarray(y1, float)
    M, K = params.M, params.K
    e1 = np.diag(np.r_[np.full(K, params.sigma_theta_sq), np.full(K, params.sigma_z_sq)])
    joint, marg = [], []
    for S in enumerate_supports(params.N, K):
        b = assemble_blocks(S, phi1, phi2, params)
        joint.append(gaussian_logpdf_rows(y, b.D_mat)[0])
        psi = np.hstack([phi1[:, S], phi1[:, S]])
        cov1 = psi @ e1 @ psi.T + params.sigma_w_sq[0] * np.eye(M)
        marg.append(gaussian_logpdf_rows(y1, cov1)[0])
    # the uniform support prior cancels between numerator and denominator
    return float(logsumexp(joint) - logsumexp(marg))


def log_joint_density(y1, y2, phi1, phi2, params: ModelParams) -> float:
    y = np.r_[np.asarray(y1, float), np.asarray(y2, float)]
    vals = [
        gaussian_logpdf_rows(y, assemble_blocks(S, phi1, phi2, params).D_mat)[0]
        for S in enumerate_supports(params.N, params.K)
    ]
    return float(logsumexp(vals) - math.log(len(vals)))


def log_marginal_density(y1, phi1, params: ModelParams) -> float:
    phi1 = np.asarray(phi1, float)
    vals = []
    for S in enumerate_supports(params.N, params.K):
        p = phi1[:, S]
        vals.append(gaussian_logpdf_rows(np.asarray(y1, float), p @ p.T + params.sigma_w_sq[0] * np.eye(params.M))[0])
    return float(logsumexp(vals) - math.log(len(vals)))
