import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal
from scipy import integrate

from conftest import dct_pair
from dcvq.errors import DegenerateModelError, InvalidArgumentError
from dcvq.estimator import (
    SupportPosterior,
    assemble_blocks,
    cs_distortion,
    enumerate_supports,
    log_cond_density,
    log_joint_density,
    log_marginal_density,
    log_support_weights,
    mmse_estimate,
    oracle_conditional_mean,
    oracle_cs_bound,
    oracle_weighting_matrix,
    support_ranks,
)
from dcvq.model import ModelParams, sample_sources, sigma_w_sq_for_smnr
from oracles import gaussian_conditional_mean, mixture_logpdf, oracle_error_trace


def noisy(N, K, M, rho=1.0, db=10.0):
    return ModelParams(N, K, M, rho=rho, sigma_w_sq=sigma_w_sq_for_smnr(K, M, db))


class TestEnumeration:
    def test_lexicographic(self):
        assert enumerate_supports(4, 2) == ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))

    def test_count(self):
        assert len(enumerate_supports(10, 2)) == math.comb(10, 2)

    def test_ranks(self):
        sup = np.array(enumerate_supports(6, 3))
        assert_array_equal(support_ranks(sup, 6, 3), np.arange(len(sup)))


class TestBlocks:
    def test_consistency_identity(self, rng):
        p = noisy(10, 2, 5)
        phi1, phi2 = dct_pair(10, 5)
        for _ in range(5):
            S = tuple(sorted(rng.choice(10, 2, replace=False)))
            b = assemble_blocks(S, phi1, phi2, p)
            assert np.linalg.norm(b.D_mat - (b.F @ b.E_mat @ b.F.T + b.N_mat)) <= 1e-10
            assert_allclose(b.C, b.F @ b.E_mat, atol=1e-15)

    def test_top_left_block(self):
        phi = np.array([[1.0, 0.0, 0.6], [0.0, 1.0, 0.8]])
        p = ModelParams(3, 2, 2, rho=1.0, sigma_w_sq=1.0)
        b = assemble_blocks((0, 1), phi, phi, p)
        assert_allclose(b.D_mat[:2, :2], 2 * np.eye(2), atol=1e-15)

    def test_e_matrix(self):
        phi1, phi2 = dct_pair(10, 5)
        b = assemble_blocks((3, 7), phi1, phi2, noisy(10, 2, 5))
        assert_array_equal(b.E_mat, np.diag([0.5] * 6))

    def test_wrong_support_size(self):
        phi1, phi2 = dct_pair(10, 5)
        with pytest.raises(InvalidArgumentError):
            assemble_blocks((1,), phi1, phi2, noisy(10, 2, 5))


class TestConditionalMean:
    def test_zero_input(self):
        phi1, phi2 = dct_pair(10, 5)
        b = assemble_blocks((2, 4), phi1, phi2, noisy(10, 2, 5))
        assert_array_equal(oracle_conditional_mean(np.zeros(10), (2, 4), b), np.zeros(20))

    @pytest.mark.parametrize("rho", [0.0, 0.3, 1.0, 7.0])
    def test_matches_gaussian_conditioning(self, rng, rho):
        N, K, M = 4, 1, 3
        p = noisy(N, K, M, rho=rho, db=15.0)
        phi1, phi2 = dct_pair(N, M)
        for S in enumerate_supports(N, K):
            y = rng.standard_normal(2 * M)
            ours = oracle_conditional_mean(y, S, assemble_blocks(S, phi1, phi2, p))
            ref = gaussian_conditional_mean(y, S, N, phi1, phi2, p.sigma_theta_sq, p.sigma_z_sq,
                                            *p.sigma_w_sq)
            assert np.linalg.norm(ours - ref) <= 1e-8 * np.linalg.norm(ref)

    def test_matches_oracle_larger(self, rng):
        p = ModelParams(10, 2, 5, rho=2.0, sigma_w_sq=(0.03, 0.07))
        phi1, phi2 = dct_pair(10, 5)
        S = (1, 8)
        y = rng.standard_normal(10)
        ours = oracle_conditional_mean(y, S, assemble_blocks(S, phi1, phi2, p))
        ref = gaussian_conditional_mean(y, S, 10, phi1, phi2, p.sigma_theta_sq, p.sigma_z_sq,
                                        *p.sigma_w_sq)
        assert_allclose(ours, ref, rtol=1e-8, atol=1e-12)

    def test_off_support_zero(self, rng):
        phi1, phi2 = dct_pair(10, 5)
        est = oracle_conditional_mean(rng.standard_normal(10), (0, 9),
                                      assemble_blocks((0, 9), phi1, phi2, noisy(10, 2, 5)))
        keep = [0, 9, 10, 19]
        assert np.all(np.delete(est, keep) == 0.0)

    @given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2 ** 31))
    def test_linear_in_y(self, a, c, seed):
        r = np.random.default_rng(seed)
        phi1, phi2 = dct_pair(10, 5)
        b = assemble_blocks((3, 6), phi1, phi2, noisy(10, 2, 5))
        y, y2 = r.standard_normal(10), r.standard_normal(10)
        lhs = oracle_conditional_mean(a * y + c * y2, (3, 6), b)
        rhs = a * oracle_conditional_mean(y, (3, 6), b) + c * oracle_conditional_mean(y2, (3, 6), b)
        assert_allclose(lhs, rhs, atol=1e-10)

    def test_orthogonality(self):
        # E[(X - X~) Y^T] = 0 for the known-support estimator
        p = noisy(10, 2, 5)
        phi1, phi2 = dct_pair(10, 5)
        S = (2, 5)
        r = np.random.default_rng(77)
        T = 10_000
        g = r.standard_normal((T, 3, 2))
        x = np.zeros((T, 20))
        th = math.sqrt(p.sigma_theta_sq) * g[:, 0]
        x[:, [2, 5]] = th + math.sqrt(p.sigma_z_sq) * g[:, 1]
        x[:, [12, 15]] = th + math.sqrt(p.sigma_z_sq) * g[:, 2]
        y = np.hstack([x[:, :10] @ phi1.T, x[:, 10:] @ phi2.T]) + math.sqrt(p.sigma_w_sq[0]) * r.standard_normal((T, 10))
        est = oracle_conditional_mean(y, S, assemble_blocks(S, phi1, phi2, p))
        cross = (x - est).T @ y / T
        assert np.max(np.abs(cross)) <= 0.02


class TestSupportWeights:
    def test_single_support(self, rng):
        p = ModelParams(3, 3, 3, sigma_w_sq=0.1)
        phi = np.eye(3)
        t = log_support_weights(rng.standard_normal(6), phi, phi, p)
        assert_array_equal(t.normalized_weights, [1.0])

    @given(st.integers(0, 2 ** 31), st.floats(0.1, 1e3))
    def test_probability_vector(self, seed, scale):
        r = np.random.default_rng(seed)
        phi1, phi2 = dct_pair(10, 5)
        t = log_support_weights(scale * r.standard_normal(10), phi1, phi2, noisy(10, 2, 5))
        assert np.all(np.isfinite(t.log_weights))
        assert np.all(t.normalized_weights >= 0)
        assert abs(t.normalized_weights.sum() - 1.0) <= 1e-12

    def test_map_support_recovery(self):
        p = noisy(6, 1, 3, db=30.0)
        phi1, phi2 = dct_pair(6, 3)
        b = sample_sources(p, phi1, phi2, np.random.default_rng(11), size=1000)
        post = SupportPosterior(phi1, phi2, p)
        hits = np.argmax(post.log_weights(b.y), axis=1) == support_ranks(b.supports, 6, 1)
        assert hits.mean() >= 0.95

    def test_argmax(self, rng):
        phi1, phi2 = dct_pair(10, 5)
        t = log_support_weights(rng.standard_normal(10), phi1, phi2, noisy(10, 2, 5))
        assert t.argmax_support() == t.supports[int(np.argmax(t.normalized_weights))]

    def test_log_weights_against_mixture(self, rng):
        # differences of log weights equal differences of Gaussian log-likelihoods
        p = noisy(6, 2, 4)
        phi1, phi2 = dct_pair(6, 4)
        y = rng.standard_normal(8)
        t = log_support_weights(y, phi1, phi2, p)
        _, _, cyy = zip(*[_cov(S, phi1, phi2, p) for S in t.supports])
        lik = np.array([mixture_logpdf(y, [c]) for c in cyy])
        assert_allclose(t.log_weights - t.log_weights[0], lik - lik[0], atol=1e-9)

    def test_noiseless_rejected(self, rng):
        phi1, phi2 = dct_pair(10, 5)
        with pytest.raises(DegenerateModelError):
            log_support_weights(rng.standard_normal(10), phi1, phi2, ModelParams(10, 2, 5))

    def test_csv(self, rng, tmp_path):
        phi1, phi2 = dct_pair(5, 3)
        t = log_support_weights(rng.standard_normal(6), phi1, phi2, noisy(5, 2, 3))
        t.to_csv(tmp_path / "w.csv")
        lines = (tmp_path / "w.csv").read_text().splitlines()
        assert len(lines) == 1 + math.comb(5, 2)


def _cov(S, phi1, phi2, p):
    from oracles import joint_covariance

    return joint_covariance(S, phi1, phi2, p.sigma_theta_sq, p.sigma_z_sq, *p.sigma_w_sq)


class TestMmse:
    def test_zero_measurements(self):
        phi1, phi2 = dct_pair(10, 5)
        x1, x2, _ = mmse_estimate(np.zeros(5), np.zeros(5), phi1, phi2, noisy(10, 2, 5))
        assert_array_equal(x1, 0.0)
        assert_array_equal(x2, 0.0)

    def test_weighted_sum_identity(self, rng):
        p = noisy(10, 2, 5)
        phi1, phi2 = dct_pair(10, 5)
        y = rng.standard_normal(10)
        x1, x2, t = mmse_estimate(y[:5], y[5:], phi1, phi2, p)
        acc = np.zeros(20)
        for w, S in zip(t.normalized_weights, t.supports):
            acc += w * oracle_conditional_mean(y, S, assemble_blocks(S, phi1, phi2, p))
        assert_allclose(np.r_[x1, x2], acc, atol=1e-13)

    def test_matches_oracle_mixture(self, rng):
        # full posterior mean from textbook conditioning and mixture weights
        p = ModelParams(5, 2, 3, rho=0.7, sigma_w_sq=(0.05, 0.09))
        phi1, phi2 = dct_pair(5, 3)
        y = rng.standard_normal(6)
        covs = [_cov(S, phi1, phi2, p)[2] for S in itertools.combinations(range(5), 2)]
        logs = np.array([mixture_logpdf(y, [c]) for c in covs])
        w = np.exp(logs - logs.max())
        w /= w.sum()
        ref = sum(wk * gaussian_conditional_mean(y, S, 5, phi1, phi2, p.sigma_theta_sq, p.sigma_z_sq,
                                                 *p.sigma_w_sq)
                  for wk, S in zip(w, itertools.combinations(range(5), 2)))
        x1, x2, _ = mmse_estimate(y[:3], y[3:], phi1, phi2, p)
        assert_allclose(np.r_[x1, x2], ref, rtol=1e-8, atol=1e-12)

    @given(st.integers(0, 2 ** 31))
    def test_terminal_swap(self, seed):
        r = np.random.default_rng(seed)
        p = ModelParams(8, 2, 4, rho=1.5, sigma_w_sq=(0.05, 0.2))
        phi1, phi2 = dct_pair(8, 4)
        y1, y2 = r.standard_normal(4), r.standard_normal(4)
        a1, a2, _ = mmse_estimate(y1, y2, phi1, phi2, p)
        b2, b1, _ = mmse_estimate(y2, y1, phi2, phi1, p.swapped())
        assert_allclose(a1, b1, atol=1e-12)
        assert_allclose(a2, b2, atol=1e-12)

    def test_noiseless_rejected(self):
        phi1, phi2 = dct_pair(10, 5)
        with pytest.raises(DegenerateModelError):
            mmse_estimate(np.ones(5), np.ones(5), phi1, phi2, ModelParams(10, 2, 5))

    def test_batch_matches_single(self, reference_params, reference_phis, rng):
        b = sample_sources(reference_params, *reference_phis, rng, size=20)
        est, _ = SupportPosterior(*reference_phis, reference_params).estimate(b.y)
        for t in range(20):
            x1, x2, _ = mmse_estimate(b.y1[t], b.y2[t], *reference_phis, reference_params)
            assert_allclose(est[t], np.r_[x1, x2], atol=1e-13)

    def test_large_inputs_finite(self, reference_params, reference_phis):
        y = np.full(10, 1e3 / math.sqrt(10))
        x1, x2, t = mmse_estimate(y[:5], y[5:], *reference_phis, reference_params)
        assert np.all(np.isfinite(np.r_[x1, x2, t.log_weights]))

    def test_degenerate_variances(self, rng):
        # zero-variance latent blocks are dropped, matching the limiting model
        phi1, phi2 = dct_pair(6, 3)
        y = rng.standard_normal(6)
        for rho in (0.0, math.inf):
            p = ModelParams(6, 1, 3, rho=rho, sigma_w_sq=0.1)
            x1, x2, t = mmse_estimate(y[:3], y[3:], phi1, phi2, p)
            assert np.all(np.isfinite(np.r_[x1, x2]))
            assert abs(t.normalized_weights.sum() - 1) < 1e-12
        p = ModelParams(6, 1, 3, rho=math.inf, sigma_w_sq=0.1)
        x1, x2, _ = mmse_estimate(y[:3], y[3:], phi1, phi2, p)
        assert_allclose(x1, x2, atol=1e-14)
        near = ModelParams(6, 1, 3, rho=1e9, sigma_w_sq=0.1)
        n1, _, _ = mmse_estimate(y[:3], y[3:], phi1, phi2, near)
        assert_allclose(x1, n1, atol=1e-6)


class TestCsDistortion:
    def test_perfect(self, reference_params, reference_phis, rng):
        b = sample_sources(reference_params, *reference_phis, rng, size=100)
        assert cs_distortion(b, b.x1, b.x2) == 0.0

    def test_zero_estimate(self, reference_params, reference_phis, rng):
        b = sample_sources(reference_params, *reference_phis, rng, size=100_000)
        z = np.zeros_like(b.x1)
        assert cs_distortion(b, z, z) == pytest.approx(1.0, abs=0.02)

    def test_empty(self, reference_params, reference_phis, rng):
        b = sample_sources(reference_params, *reference_phis, rng, size=3)
        empty = type(b)(b.supports[:0], b.theta[:0], b.z1[:0], b.z2[:0], b.y1[:0], b.y2[:0])
        with pytest.raises(InvalidArgumentError):
            cs_distortion(empty, empty.x1, empty.x2)


class TestOracleBound:
    @pytest.mark.parametrize("rho", [1e-3, 1.0, 1e3])
    @pytest.mark.parametrize("M", [3, 6])
    def test_matches_error_covariance(self, rho, M):
        p = noisy(10, 2, M, rho=rho)
        phi1, phi2 = dct_pair(10, M)
        ref = oracle_error_trace(10, 2, phi1, phi2, p.sigma_theta_sq, p.sigma_z_sq, *p.sigma_w_sq)
        assert oracle_cs_bound(phi1, phi2, p) == pytest.approx(ref, rel=1e-10)

    def test_asymmetric_weighting_differs(self):
        p = noisy(10, 2, 5)
        phi1, phi2 = dct_pair(10, 5)
        W = oracle_weighting_matrix(2, "asymmetric")
        assert not np.allclose(W, W.T)
        assert oracle_cs_bound(phi1, phi2, p, "asymmetric") != pytest.approx(oracle_cs_bound(phi1, phi2, p))

    def test_monotone_in_rho(self):
        phi1, phi2 = dct_pair(10, 5)
        vals = [oracle_cs_bound(phi1, phi2, noisy(10, 2, 5, rho=r)) for r in (1e-3, 1.0, 1e3)]
        assert vals[0] > vals[1] > vals[2]
        assert all(0 <= v <= 1 for v in vals)

    def test_vanishes_with_full_clean_sensing(self):
        phi1, phi2 = dct_pair(10, 10)
        p = ModelParams(10, 2, 10, rho=1.0, sigma_w_sq=1e-6)
        d = oracle_cs_bound(phi1, phi2, p)
        assert d <= 1e-3
        # Monte Carlo of the known-support estimator agrees
        b = sample_sources(p, phi1, phi2, np.random.default_rng(3), size=2000)
        est = SupportPosterior(phi1, phi2, p).oracle_estimate(b.y, b.supports)
        assert cs_distortion(b, est[:, :10], est[:, 10:]) == pytest.approx(d, rel=0.15)

    def test_dominance(self, reference_params, reference_phis):
        b = sample_sources(reference_params, *reference_phis, np.random.default_rng(8), size=20_000)
        est, _ = SupportPosterior(*reference_phis, reference_params).estimate(b.y)
        e = np.sum((b.x - est) ** 2, axis=1) / 4
        assert e.mean() >= oracle_cs_bound(*reference_phis, reference_params)

    def test_noiseless_known_support(self):
        # clean measurements: the estimate uses the true support
        phi1, phi2 = dct_pair(10, 5)
        p = ModelParams(10, 2, 5, rho=1.0)
        b = sample_sources(p, phi1, phi2, np.random.default_rng(1), size=500)
        est = SupportPosterior(phi1, phi2, p).estimate_or_oracle(b.y, b.supports)
        assert np.max(np.abs(est - b.x)) < 1e-6


class TestConditionalDensity:
    def test_bayes_consistency(self, rng):
        p = noisy(6, 2, 3)
        phi1, phi2 = dct_pair(6, 3)
        y1, y2 = rng.standard_normal(3), rng.standard_normal(3)
        lhs = log_cond_density(y2, y1, phi1, phi2, p) + log_marginal_density(y1, phi1, p)
        rhs = log_joint_density(y1, y2, phi1, phi2, p)
        assert math.exp(lhs - rhs) == pytest.approx(1.0, abs=1e-10)

    def test_joint_matches_mixture_oracle(self, rng):
        p = noisy(5, 1, 3, rho=2.0)
        phi1, phi2 = dct_pair(5, 3)
        y = rng.standard_normal(6)
        covs = [_cov(S, phi1, phi2, p)[2] for S in itertools.combinations(range(5), 1)]
        assert log_joint_density(y[:3], y[3:], phi1, phi2, p) == pytest.approx(mixture_logpdf(y, covs), abs=1e-10)

    def test_normalizes(self):
        p = ModelParams(3, 1, 1, rho=1.0, sigma_w_sq=0.1)
        phi1, phi2 = dct_pair(3, 1)
        grid = np.arange(-8.0, 8.0 + 1e-9, 0.01)
        for y1 in (-0.7, 0.0, 1.9):
            dens = np.exp([log_cond_density(np.array([g]), np.array([y1]), phi1, phi2, p) for g in grid])
            assert integrate.trapezoid(dens, grid) == pytest.approx(1.0, abs=1e-3)

    @given(st.integers(0, 2 ** 31))
    def test_swap_symmetry(self, seed):
        r = np.random.default_rng(seed)
        p = ModelParams(6, 2, 3, rho=0.8, sigma_w_sq=(0.05, 0.3))
        phi1, phi2 = dct_pair(6, 3)
        y1, y2 = r.standard_normal(3), r.standard_normal(3)
        q = p.swapped()
        # p(y1 | y2) with the terminal roles exchanged equals joint over y2-marginal
        swapped = log_cond_density(y1, y2, phi2, phi1, q)
        original = log_joint_density(y1, y2, phi1, phi2, p) - log_marginal_density(y2, phi2, q)
        assert swapped == pytest.approx(original, abs=1e-10)

    def test_noiseless_rejected(self):
        phi1, phi2 = dct_pair(6, 3)
        with pytest.raises(DegenerateModelError):
            log_cond_density(np.zeros(3), np.zeros(3), phi1, phi2, ModelParams(6, 2, 3))
