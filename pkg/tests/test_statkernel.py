import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

import oracles
from safersim.statkernel import (
    RngStream,
    bivariate_normal_cdf,
    exponential_from_uniform,
    normal_cdf,
    normal_quantile,
    sample_exponential,
    sample_gamma,
    sample_uniform,
)


class TestNormal:
    def test_cdf_at_zero(self):
        assert normal_cdf(0.0) == 0.5

    def test_cdf_known_point(self):
        assert normal_cdf(1.6448536269514722) == pytest.approx(0.95, abs=1e-12)

    def test_symmetry(self):
        assert normal_cdf(-2.772) == pytest.approx(1.0 - normal_cdf(2.772), abs=1e-15)

    @pytest.mark.parametrize("x", [-8.0, -3.3, -1.0, -0.1, 0.4, 1.96, 2.5, 6.0])
    def test_cdf_against_mpmath(self, x):
        assert abs(normal_cdf(x) - oracles.normal_cdf(x)) <= 1e-12

    @pytest.mark.parametrize("p, z", [(0.5, 0.0), (0.95, 1.6448536), (0.80, 0.8416212)])
    def test_quantile_examples(self, p, z):
        assert normal_quantile(p) == pytest.approx(z, abs=1e-7)
        assert normal_quantile(p) == pytest.approx(oracles.normal_quantile(p), abs=1e-12)

    def test_quantile_inverts_cdf(self):
        p = np.concatenate([np.geomspace(1e-8, 0.5, 200), 1.0 - np.geomspace(1e-8, 0.5, 200)])
        assert np.max(np.abs(normal_cdf(normal_quantile(p)) - p)) <= 1e-10

    def test_cdf_monotone(self):
        x = np.linspace(-9, 9, 5001)
        assert np.all(np.diff(normal_cdf(x)) >= 0)

    @pytest.mark.parametrize("x", [math.inf, -math.inf, math.nan])
    def test_cdf_rejects_nonfinite(self, x):
        with pytest.raises(ValueError):
            normal_cdf(x)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
    def test_quantile_rejects_out_of_range(self, p):
        with pytest.raises(ValueError):
            normal_quantile(p)


class TestBivariateNormal:
    def test_infinite_corner(self):
        assert bivariate_normal_cdf(math.inf, math.inf, 0.7071) == 1.0

    def test_independent_orthant(self):
        assert bivariate_normal_cdf(0.0, 0.0, 0.0) == pytest.approx(0.25, abs=1e-15)

    def test_correlated_orthant_closed_form(self):
        expected = 0.25 + math.asin(0.5) / (2 * math.pi)
        assert bivariate_normal_cdf(0.0, 0.0, 0.5) == pytest.approx(expected, abs=1e-14)

    @pytest.mark.parametrize("rho", [-0.95, -0.5, 0.0, 0.3, 0.7071, 0.9, 0.99])
    @pytest.mark.parametrize("a, b", [(-2.0, 1.0), (0.5, 0.5), (2.5381, 1.6776), (-1.2, -0.3), (3.0, -2.5)])
    def test_against_quadrature(self, a, b, rho):
        assert abs(bivariate_normal_cdf(a, b, rho) - oracles.bivariate_normal_cdf(a, b, rho)) <= 1e-8

    @given(st.floats(-6, 6), st.floats(-6, 6))
    @settings(max_examples=100, deadline=None)
    def test_zero_correlation_factorises(self, a, b):
        assert bivariate_normal_cdf(a, b, 0.0) == pytest.approx(normal_cdf(a) * normal_cdf(b), abs=1e-12)

    @given(st.floats(-6, 6), st.floats(-0.99, 0.99))
    @settings(max_examples=100, deadline=None)
    def test_infinite_margin_reduces(self, a, rho):
        assert bivariate_normal_cdf(a, math.inf, rho) == pytest.approx(normal_cdf(a), abs=1e-8)
        assert bivariate_normal_cdf(math.inf, a, rho) == pytest.approx(normal_cdf(a), abs=1e-8)

    def test_negative_infinity_is_zero(self):
        assert bivariate_normal_cdf(-math.inf, 1.0, 0.3) == 0.0

    @pytest.mark.parametrize("rho", [1.0, -1.0, 1.5])
    def test_rejects_degenerate_correlation(self, rho):
        with pytest.raises(ValueError):
            bivariate_normal_cdf(0.0, 0.0, rho)


class TestRngStream:
    def test_replay_is_bit_exact(self):
        a = RngStream(123, 7).uniform(1000)
        b = RngStream(123, 7).uniform(1000)
        assert np.array_equal(a, b)

    def test_streams_differ(self):
        assert not np.array_equal(RngStream(123, 7).uniform(10), RngStream(123, 8).uniform(10))
        assert not np.array_equal(RngStream(123, 7).uniform(10), RngStream(124, 7).uniform(10))

    def test_streams_uncorrelated(self):
        x = RngStream(5, 0).uniform(100_000)
        y = RngStream(5, 1).uniform(100_000)
        assert abs(np.corrcoef(x, y)[0, 1]) < 3 / math.sqrt(100_000) * 1.5

    @pytest.mark.parametrize("seed", [-1, 2**64, 1.5])
    def test_rejects_bad_seed(self, seed):
        with pytest.raises(ValueError):
            RngStream(seed)

    def test_accepts_full_64bit_range(self):
        RngStream(2**64 - 1, 2**64 - 1).uniform()


class TestSamplers:
    def test_inverse_cdf_algebra(self):
        assert exponential_from_uniform(math.exp(-1.0), 1.0) == pytest.approx(1.0, abs=1e-15)

    def test_exponential_median(self):
        x = sample_exponential(math.log(2) / 10, RngStream(1), 1_000_000)
        assert abs(np.median(x) - 10.0) < 0.05

    def test_exponential_mean(self):
        rate = math.log(2) / 1.5
        x = sample_exponential(rate, RngStream(2), 1_000_000)
        se = (1 / rate) / math.sqrt(x.size)
        assert abs(x.mean() - 1 / rate) < 3 * se
        assert 1 / rate == pytest.approx(2.164, abs=1e-3)

    def test_exponential_ks(self):
        x = sample_exponential(0.5, RngStream(3), 100_000)
        assert stats.kstest(x, "expon", args=(0, 2.0)).pvalue > 0.01

    @pytest.mark.parametrize("rate", [0.0, -1.0])
    def test_exponential_rejects_rate(self, rate):
        with pytest.raises(ValueError):
            sample_exponential(rate, RngStream(1))

    def test_gamma_moments(self):
        shape, scale = 50.0, 0.001
        x = sample_gamma(shape, scale, RngStream(4), 1_000_000)
        n = x.size
        var = shape * scale**2
        assert abs(x.mean() - 0.05) < 3 * math.sqrt(var / n)
        assert x.std() == pytest.approx(0.00707, abs=5e-5)
        # Var of the sample variance for a gamma: (mu4 - var^2)/n with mu4 = 3var^2(1 + 2/shape).
        se_var = math.sqrt((3 * var**2 * (1 + 2 / shape) - var**2) / n)
        assert abs(x.var() - var) < 5 * se_var
        assert np.all(x >= 0)

    def test_gamma_mean_small_scale(self):
        x = sample_gamma(50.0, 0.0002, RngStream(5), 200_000)
        assert x.mean() == pytest.approx(0.01, rel=2e-3)

    @pytest.mark.parametrize("shape, scale", [(50.0, 0.0), (0.0, 1.0), (50.0, -1.0)])
    def test_gamma_rejects_degenerate(self, shape, scale):
        with pytest.raises(ValueError):
            sample_gamma(shape, scale, RngStream(1))

    def test_uniform(self):
        x = sample_uniform(0.0, 48.0, RngStream(6), 1_000_000)
        assert abs(x.mean() - 24.0) < 3 * 48 / math.sqrt(12 * x.size)
        assert np.all((x >= 0) & (x < 48))
        assert sample_uniform(5.0, 5.0, RngStream(6)) == 5.0

    def test_uniform_rejects_reversed(self):
        with pytest.raises(ValueError):
            sample_uniform(1.0, 0.0, RngStream(1))
