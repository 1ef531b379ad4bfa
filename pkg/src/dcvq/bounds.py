"""Analytic lower bounds on the end-to-end distortion."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from dcvq.errors import InvalidParameterError
from dcvq.estimator import oracle_cs_bound
from dcvq.model import ModelParams

COUPLING_PLUS = "plus"
COUPLING_MINUS = "minus"


def support_bits(N: int, K: int) -> float:
    """Bits needed to index one support of size K out of N positions."""
    return math.log2(math.comb(N, K))


def _coupling(rho: float, variant: str) -> float:
    if variant == COUPLING_PLUS:
        if math.isinf(rho):
            return 1.0
        return rho * rho / ((1.0 + rho) ** 2)
    if variant == COUPLING_MINUS:
        # singular at rho = 1; kept only for side-by-side comparison
        if math.isinf(rho):
            return 1.0
        return rho * rho / ((1.0 - rho) ** 2)
    raise InvalidParameterError(f"unknown bound variant {variant!r}")


def dq_oracle(R: float, N: int, K: int, rho: float, variant: str = COUPLING_PLUS) -> float:
    """Quantisation-distortion bound for a known support and R total bits.

    The first ``log2 C(N, K)`` bits go to the support; the remainder is
    split over the 2K active coefficients. With ``variant='minus'`` the
    coupling coefficient uses ``(1 - rho)**2`` in the denominator, which can
    make the radicand negative (result is then nan) and is infinite at
    ``rho = 1``.
    """
    if K < 1 or N < K:
        raise InvalidParameterError(f"need 1 <= K <= N, got N={N}, K={K}")
    if rho < 0 or math.isnan(rho):
        raise InvalidParameterError(f"rho must be nonnegative, got {rho}")
    r = R - support_bits(N, K)
    if variant == COUPLING_MINUS and rho == 1.0:
        return math.inf
    c = _coupling(rho, variant)
    if variant == COUPLING_PLUS and not math.isinf(rho):
        # 1 - c without cancellation at large rho
        one_minus_c = (1.0 + 2.0 * rho) / (1.0 + rho) ** 2
    else:
        one_minus_c = 1.0 - c
    radicand = one_minus_c * 2.0 ** (-2.0 * r / K) + c * 2.0 ** (-4.0 * r / K)
    if radicand < 0:
        return math.nan
    return math.sqrt(radicand)


def asymptotic_slope(rho_regime: str, K: int) -> float:
    """Limiting decay of ``10 log10 dq_oracle`` in dB per total bit."""
    if K < 1:
        raise InvalidParameterError(f"K must be >= 1, got {K}")
    if rho_regime == "high":
        return -6.0 / K
    if rho_regime == "low":
        return -3.0 / K
    raise InvalidParameterError(f"rho_regime must be 'high' or 'low', got {rho_regime!r}")


def fitted_slope(R_values, N: int, K: int, rho: float) -> float:
    """Least-squares slope of ``10 log10 dq_oracle`` against R (dB per bit)."""
    R_values = np.asarray(R_values, dtype=float)
    db = np.array([10.0 * math.log10(dq_oracle(R, N, K, rho)) for R in R_values])
    return float(np.polyfit(R_values, db, 1)[0])


@dataclass(frozen=True)
class BoundReport:
    d_cs_oracle: float
    d_q_oracle: float
    composite: float
    N: int
    K: int
    M: int
    R: float
    rho: float
    sigma_w_sq: tuple[float, float]
    support_budget_feasible: bool

    def as_dict(self) -> dict:
        return {
            "N": self.N,
            "K": self.K,
            "M": self.M,
            "R": self.R,
            "rho": self.rho,
            "sigma_w1_sq": self.sigma_w_sq[0],
            "sigma_w2_sq": self.sigma_w_sq[1],
            "d_cs_oracle": self.d_cs_oracle,
            "d_q_oracle": self.d_q_oracle,
            "composite": self.composite,
            "support_budget_feasible": self.support_budget_feasible,
        }


def composite_bound(params: ModelParams, phi1, phi2, R: float, weighting: str = "symmetric",
                    variant: str = COUPLING_PLUS, d_cs_oracle: float | None = None) -> BoundReport:
    """Both lower bounds and their maximum. ``d_cs_oracle`` may be passed in
    when already computed for the same matrices and parameters."""
    if d_cs_oracle is None:
        d_cs_oracle = oracle_cs_bound(phi1, phi2, params, weighting=weighting)
    dq = dq_oracle(R, params.N, params.K, params.rho, variant)
    return BoundReport(
        d_cs_oracle=float(d_cs_oracle),
        d_q_oracle=float(dq),
        composite=float(max(d_cs_oracle, dq)),
        N=params.N,
        K=params.K,
        M=params.M,
        R=float(R),
        rho=float(params.rho),
        sigma_w_sq=tuple(params.sigma_w_sq),
        support_budget_feasible=R >= support_bits(params.N, params.K),
    )
