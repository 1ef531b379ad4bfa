"""Symmetric positive-definite factor/solve helpers with a single jitter retry."""

from __future__ import annotations

import numpy as np
from scipy import linalg as la

JITTER_SCALE = 1e-10


def _jitter(a: np.ndarray) -> float:
    return JITTER_SCALE * np.trace(a) / a.shape[0]


def spd_factor(a: np.ndarray, regularize: bool = False):
    """Cholesky factor of ``a`` as returned by :func:`scipy.linalg.cho_factor`.

    On failure the factorisation is retried once with diagonal jitter of
    ``1e-10 * trace / dim``; ``regularize=True`` applies that jitter up front
    (used for known-singular covariances such as noiseless measurements).
    """
    a = np.asarray(a, dtype=float)
    if regularize:
        return la.cho_factor(a + _jitter(a) * np.eye(a.shape[0]), lower=True)
    try:
        return la.cho_factor(a, lower=True)
    except la.LinAlgError:
        return la.cho_factor(a + _jitter(a) * np.eye(a.shape[0]), lower=True)


def spd_solve(a: np.ndarray, b: np.ndarray, regularize: bool = False) -> np.ndarray:
    return la.cho_solve(spd_factor(a, regularize), b)


def factor_logdet(factor) -> float:
    c, _ = factor
    return 2.0 * float(np.sum(np.log(np.diag(c))))


def gaussian_logpdf_rows(y: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Zero-mean Gaussian log density of each row of ``y``."""
    y = np.atleast_2d(y)
    fac = spd_factor(cov)
    c, _ = fac
    v = la.solve_triangular(c, y.T, lower=True)
    d = cov.shape[0]
    return -0.5 * (np.sum(v * v, axis=0) + factor_logdet(fac) + d * np.log(2 * np.pi))
