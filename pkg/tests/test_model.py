import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats

from conftest import dct_pair
from dcvq.errors import InvalidArgumentError, InvalidParameterError
from dcvq.model import (
    ModelParams,
    SensingMatrix,
    SourceBatch,
    build_dct_sensing_matrix,
    derive_variances,
    sample_sources,
    sample_support,
    sample_supports,
    sigma_w_sq_for_smnr,
    smnr,
)


class TestDeriveVariances:
    def test_equal_split(self):
        assert derive_variances(1.0) == (0.5, 0.5)

    def test_uncorrelated(self):
        assert derive_variances(0.0) == (0.0, 1.0)

    def test_highly_correlated(self):
        th, z = derive_variances(1e3)
        assert th == pytest.approx(1000 / 1001, abs=1e-15)
        assert z == pytest.approx(1 / 1001, abs=1e-15)
        assert round(th, 6) == 0.999001
        assert round(z, 6) == 0.000999

    @pytest.mark.parametrize("rho", [-1e-9, -1.0, math.inf, math.nan])
    def test_rejects(self, rho):
        with pytest.raises(InvalidParameterError):
            derive_variances(rho)

    @given(st.floats(min_value=0.0, max_value=1e300, allow_nan=False))
    def test_sum_is_exactly_one(self, rho):
        th, z = derive_variances(rho)
        assert th + z == 1.0
        assert th >= 0 and z > 0

    @given(st.floats(min_value=0.0, max_value=1e6), st.floats(min_value=0.0, max_value=1e6))
    def test_ratio_matches_rho(self, a, b):
        lo, hi = sorted((a, b))
        assert derive_variances(lo)[0] <= derive_variances(hi)[0]


class TestModelParams:
    def test_scalar_noise_becomes_pair(self):
        p = ModelParams(10, 2, 5, sigma_w_sq=0.04)
        assert p.sigma_w_sq == (0.04, 0.04)

    def test_derived_variances(self):
        p = ModelParams(10, 2, 5, rho=3.0)
        assert p.sigma_theta_sq == 0.75
        assert p.sigma_z_sq == 0.25
        assert p.alpha == 0.5

    def test_infinite_rho_is_exact(self):
        p = ModelParams(10, 2, 5, rho=math.inf)
        assert (p.sigma_theta_sq, p.sigma_z_sq) == (1.0, 0.0)

    @pytest.mark.parametrize("N,K,M", [(10, 6, 5), (10, 2, 11), (10, 0, 5), (10, 2.5, 5)])
    def test_dimension_checks(self, N, K, M):
        with pytest.raises(InvalidParameterError):
            ModelParams(N, K, M)

    def test_negative_noise(self):
        with pytest.raises(InvalidParameterError):
            ModelParams(10, 2, 5, sigma_w_sq=(0.1, -0.1))

    def test_swapped(self):
        p = ModelParams(10, 2, 5, sigma_w_sq=(0.1, 0.2)).swapped()
        assert p.sigma_w_sq == (0.2, 0.1)


class TestSmnr:
    def test_reference_setting(self):
        assert smnr(ModelParams(10, 2, 5, sigma_w_sq=0.04)) == pytest.approx((10.0, 10.0), abs=1e-12)

    def test_zero_db(self):
        assert smnr(ModelParams(10, 3, 3, sigma_w_sq=1.0)) == (0.0, 0.0)

    def test_clean_is_infinite(self):
        assert smnr(ModelParams(10, 2, 5)) == (math.inf, math.inf)

    @given(st.floats(min_value=-20, max_value=60))
    def test_inverse_of_noise_level(self, db):
        s = sigma_w_sq_for_smnr(2, 5, db)
        assert smnr(ModelParams(10, 2, 5, sigma_w_sq=s))[0] == pytest.approx(db, abs=1e-9)

    def test_inf_db_is_clean(self):
        assert sigma_w_sq_for_smnr(2, 5, math.inf) == 0.0


class TestSensingMatrix:
    def test_full_dct_orthonormal(self):
        phi = np.asarray(build_dct_sensing_matrix(8, 8, 1))
        assert_allclose(phi.T @ phi, np.eye(8), atol=1e-12)

    def test_unit_columns(self):
        for t in (1, 2):
            phi = np.asarray(build_dct_sensing_matrix(10, 5, t))
            assert_allclose(np.linalg.norm(phi, axis=0), 1.0, atol=1e-12)

    def test_row_selection(self):
        # independent DCT-II construction from the cosine definition
        N, M = 10, 5
        n = np.arange(N)
        C = np.array([np.cos(np.pi * (2 * n + 1) * k / (2 * N)) for k in range(N)])
        C[0] *= math.sqrt(1 / N)
        C[1:] *= math.sqrt(2 / N)
        top = C[:M] / np.linalg.norm(C[:M], axis=0)
        bottom = C[::-1][:M] / np.linalg.norm(C[::-1][:M], axis=0)
        assert_allclose(np.asarray(build_dct_sensing_matrix(N, M, 1)), top, atol=1e-12)
        assert_allclose(np.asarray(build_dct_sensing_matrix(N, M, 2)), bottom, atol=1e-12)

    def test_terminals_disjoint_rows(self):
        # DCT-II row k changes sign k times; positive column scaling keeps that
        def frequencies(phi):
            return [int(np.sum(np.diff(np.sign(row)) != 0)) for row in phi]

        r1 = np.asarray(build_dct_sensing_matrix(10, 5, 1))
        r2 = np.asarray(build_dct_sensing_matrix(10, 5, 2))
        assert frequencies(r1) == [0, 1, 2, 3, 4]
        assert frequencies(r2) == [9, 8, 7, 6, 5]

    def test_too_many_rows(self):
        with pytest.raises(InvalidParameterError):
            build_dct_sensing_matrix(5, 6, 1)

    def test_rejects_non_unit_columns(self):
        with pytest.raises(InvalidArgumentError):
            SensingMatrix(np.ones((2, 3)))

    def test_read_only(self):
        phi = build_dct_sensing_matrix(6, 3, 1)
        with pytest.raises(ValueError):
            phi.entries[0, 0] = 1.0

    def test_text_roundtrip(self, tmp_path):
        phi = build_dct_sensing_matrix(10, 5, 2)
        phi.dump(tmp_path / "phi.txt")
        back = SensingMatrix.load(tmp_path / "phi.txt", terminal=2)
        assert_array_equal(np.asarray(back), np.asarray(phi))
        assert (tmp_path / "phi.txt").read_text().splitlines()[0] == "5 10"


class TestSupports:
    def test_full_support(self, rng):
        p = ModelParams(4, 4, 4)
        for _ in range(20):
            assert sample_support(p, rng) == (0, 1, 2, 3)

    def test_singleton_frequencies(self, rng):
        s = sample_supports(4, 1, 100_000, rng)[:, 0]
        freq = np.bincount(s, minlength=4) / len(s)
        assert_allclose(freq, 0.25, atol=0.01)
        assert stats.chisquare(np.bincount(s, minlength=4)).pvalue > 1e-4

    def test_pairs_uniform(self, rng):
        s = sample_supports(6, 2, 60_000, rng)
        codes = s[:, 0] * 6 + s[:, 1]
        counts = np.unique(codes, return_counts=True)[1]
        assert len(counts) == 15
        assert stats.chisquare(counts).pvalue > 1e-4

    def test_cardinality_and_order(self, rng):
        p = ModelParams(10, 2, 5)
        for _ in range(50):
            s = sample_support(p, rng)
            assert len(s) == 2 and s[0] < s[1]

    def test_exchangeable(self, rng):
        # each position is equally likely to be in the support
        s = sample_supports(10, 3, 50_000, rng)
        counts = np.bincount(s.ravel(), minlength=10)
        assert stats.chisquare(counts).pvalue > 1e-4

    def test_k_above_n(self, rng):
        with pytest.raises(InvalidParameterError):
            sample_supports(3, 4, 1, rng)


class TestSampleSources:
    def test_structure(self, reference_params, reference_phis, rng):
        b = sample_sources(reference_params, *reference_phis, rng, size=500)
        mask = np.zeros((500, 10), bool)
        mask[np.arange(500)[:, None], b.supports] = True
        for arr in (b.theta, b.z1, b.z2, b.x1, b.x2):
            assert np.all(arr[~mask] == 0.0)
        assert np.all(b.x1 == b.theta + b.z1)
        assert_array_equal(np.count_nonzero(b.x1, axis=1), 2)

    def test_single_draw(self, reference_params, reference_phis, rng):
        d = sample_sources(reference_params, *reference_phis, rng)
        assert len(d.support) == 2
        assert d.y1.shape == (5,)

    def test_measurements(self, reference_phis, rng):
        p = ModelParams(10, 2, 5, rho=1.0)
        b = sample_sources(p, *reference_phis, rng, size=100)
        assert_allclose(b.y1, b.x1 @ reference_phis[0].T, atol=1e-14)
        assert_allclose(b.y2, b.x2 @ reference_phis[1].T, atol=1e-14)

    def test_high_correlation(self, reference_phis, rng):
        b = sample_sources(ModelParams(10, 2, 5, rho=1e6), *reference_phis, rng, size=1000)
        assert np.max(np.abs(b.x1 - b.x2)) < 0.01

    @pytest.mark.parametrize("rho", [1e-3, 1.0, 1e3])
    def test_unit_power(self, reference_phis, rng, rho):
        b = sample_sources(ModelParams(10, 2, 5, rho=rho), *reference_phis, rng, size=100_000)
        vals = np.take_along_axis(b.x1, b.supports, axis=1).ravel()
        assert np.var(vals) == pytest.approx(1.0, abs=0.02)
        energy = np.mean(np.sum(b.x1 ** 2, axis=1))
        assert energy == pytest.approx(2.0, rel=0.02)

    def test_pair_correlation(self, reference_phis, rng):
        b = sample_sources(ModelParams(10, 2, 5, rho=1.0), *reference_phis, rng, size=100_000)
        a1 = np.take_along_axis(b.x1, b.supports, axis=1).ravel()
        a2 = np.take_along_axis(b.x2, b.supports, axis=1).ravel()
        assert np.corrcoef(a1, a2)[0, 1] == pytest.approx(0.5, abs=0.02)

    def test_noise_energy(self, reference_params, reference_phis, rng):
        b = sample_sources(reference_params, *reference_phis, rng, size=100_000)
        w1 = b.y1 - b.x1 @ reference_phis[0].T
        assert np.mean(np.sum(w1 ** 2, axis=1)) == pytest.approx(5 * 0.04, rel=0.02)

    def test_shape_mismatch(self, reference_params, rng):
        phi1, phi2 = dct_pair(10, 4)
        with pytest.raises(InvalidArgumentError):
            sample_sources(reference_params, phi1, phi2, rng, size=3)

    def test_seeded(self, reference_params, reference_phis):
        a = sample_sources(reference_params, *reference_phis, np.random.default_rng(5), size=10)
        b = sample_sources(reference_params, *reference_phis, np.random.default_rng(5), size=10)
        assert_array_equal(a.y, b.y)

    def test_batch_roundtrip(self, reference_params, reference_phis, rng, tmp_path):
        b = sample_sources(reference_params, *reference_phis, rng, size=7)
        b.dump(tmp_path / "b.txt")
        c = SourceBatch.load(tmp_path / "b.txt", reference_params)
        assert_array_equal(c.x, b.x)
        assert_array_equal(c.y, b.y)
        assert_array_equal(c.supports, b.supports)
