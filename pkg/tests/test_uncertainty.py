import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from hpdro.evaluation import sample_power_errors
from hpdro.uncertainty import (ErrorHistory, GaussianModel, KdeModel, dro_margin, dual_worst_case,
                               error_interval, fit_gaussian, fit_kde, fit_streams, g_min_kde,
                               gaussian_margin, golden_section, kde_dual_objective, kl_divergence_estimate,
                               radius_from_risk, radius_schedule, worst_case_expectation)

# 30-digit references
SQRT_2ETA = 2.14597297280277973  # sqrt(2 * 2.3026)
TWO_POINT_WORST = 0.719794626161409731  # {(0, 1/2), (1, 1/2)}, eta = 0.1


def hist(samples, stream="power", slot=0):
    return ErrorHistory(stream, slot, np.asarray(samples, float))


class TestFitting:
    def test_constant_samples(self):
        g = fit_gaussian(hist([0, 0, 0]))
        assert (g.mu, g.sigma) == (0.0, 0.0)

    def test_population_moments(self):
        g = fit_gaussian(hist([-1, 1]))
        assert g.mu == 0.0 and g.sigma == 1.0

    def test_large_sample(self):
        rng = np.random.default_rng(0)
        n = 100_000
        g = fit_gaussian(hist(rng.normal(0.3, 0.7, n)))
        assert abs(g.mu - 0.3) < 3 * 0.7 / math.sqrt(n)
        assert abs(g.sigma - 0.7) < 3 * 0.7 / math.sqrt(2 * n)

    def test_too_few_samples(self):
        with pytest.raises(ValueError, match=">= 2"):
            fit_gaussian(hist([1.0]))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            hist([0.0, np.nan])

    def test_single_center_peak(self):
        k = fit_kde(hist([0.0]), 1.0)
        assert float(k.pdf(0.0)) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-15)

    @pytest.mark.parametrize("stream,h", [("power", 0.2), ("temperature", 0.1)])
    def test_default_bandwidths(self, stream, h):
        assert fit_kde(hist([0.0, 1.0], stream)).bandwidth == h

    @pytest.mark.parametrize("h", [0.0, -0.1])
    def test_bad_bandwidth(self, h):
        with pytest.raises(ValueError, match="bandwidth"):
            fit_kde(hist([0.0, 1.0]), h)

    def test_density_integrates_to_one(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            c = rng.normal(0, 1, 40)
            h = rng.uniform(0.05, 0.5)
            k = KdeModel(c, h)
            total, _ = quad(lambda v: float(k.pdf(v)), c.min() - 6 * h, c.max() + 6 * h,
                            points=np.sort(c)[::4].tolist(), limit=500, epsabs=1e-12, epsrel=1e-12)
            assert total == pytest.approx(1.0, abs=1e-6)

    def test_fit_streams_orders_slots(self):
        hs = [hist([t, t + 1.0], slot=t) for t in (2, 0, 1)]
        assert [m.mu for m in fit_streams(hs, "gaussian")] == [0.5, 1.5, 2.5]


class TestRadius:
    @pytest.mark.parametrize("beta,eta", [(0.1, 2.3026), (0.05, 2.9957), (0.01, 4.6052), (0.001, 6.9078)])
    def test_published_pairs(self, beta, eta):
        assert radius_from_risk(beta) == pytest.approx(eta, abs=1e-4)

    def test_beta_one(self):
        assert radius_from_risk(1.0) == 0.0

    @pytest.mark.parametrize("beta", [0.0, -0.1, 1.5])
    def test_out_of_range(self, beta):
        with pytest.raises(ValueError):
            radius_from_risk(beta)

    def test_constant_schedule(self):
        np.testing.assert_allclose(radius_schedule(0.1, 3), [math.log(10)] * 3)

    def test_sqrt_schedule_hours(self):
        r = radius_schedule(0.1, 48, "sqrt_t", dt=0.5)
        assert r[1] == pytest.approx(math.log(10), rel=1e-12)  # slot ending at 1 h
        assert r[7] == pytest.approx(2 * math.log(10), rel=1e-12)  # 4 h
        assert r[0] > 0

    def test_hyphenated_mode(self):
        np.testing.assert_array_equal(radius_schedule(0.1, 4, "sqrt-t"), radius_schedule(0.1, 4, "sqrt_t"))


class TestMargins:
    def test_gaussian_closed_form(self):
        assert gaussian_margin(GaussianModel(0, 1), 2.3026) == pytest.approx(SQRT_2ETA, abs=1e-12)

    @pytest.mark.parametrize("mu,sigma,eta", [(1.5, 0.0, 2.0), (-0.3, 2.0, 0.0)])
    def test_gaussian_degenerate(self, mu, sigma, eta):
        assert gaussian_margin(GaussianModel(mu, sigma), eta) == mu

    def test_gaussian_matches_numeric_dual(self):
        # alpha-form of the Gaussian dual: alpha*eta + mu + sigma^2/(2 alpha)
        f = lambda u: 2.3026 * math.exp(u) + 1 / (2 * math.exp(u))
        _, val = golden_section(f, -10, 10)
        assert val == pytest.approx(SQRT_2ETA, abs=1e-9)

    def test_single_center_kde(self):
        assert g_min_kde(KdeModel([0.0], 0.2), 2.3026) == pytest.approx(0.2 * SQRT_2ETA, abs=1e-9)

    def test_kde_zero_radius_is_mean(self):
        assert g_min_kde(KdeModel([-1.0, 0.0, 1.0], 0.7), 0.0) == 0.0

    def test_negative_radius_rejected(self):
        with pytest.raises(ValueError):
            g_min_kde(KdeModel([0.0], 1.0), -1.0)
        with pytest.raises(ValueError):
            gaussian_margin(GaussianModel(0, 1), -1.0)

    def test_dispatch(self):
        assert dro_margin(GaussianModel(0, 1), 2.0) == gaussian_margin(GaussianModel(0, 1), 2.0)
        assert dro_margin(KdeModel([0.0, 1.0], 0.2), 2.0) == g_min_kde(KdeModel([0.0, 1.0], 0.2), 2.0)
        with pytest.raises(TypeError):
            dro_margin(object(), 1.0)

    def test_no_overflow_for_large_centers(self):
        v = g_min_kde(KdeModel(np.array([500.0, 800.0, 1000.0]), 0.1), 2.3)
        assert math.isfinite(v) and 800.0 < v <= 1000.0 + 0.1 * math.sqrt(2 * 2.3)

    @settings(max_examples=200, deadline=None)
    @given(c=st.floats(-50, 50), h=st.floats(0.01, 10), eta=st.floats(0, 10))
    def test_single_center_equals_gaussian(self, c, h, eta):
        assert g_min_kde(KdeModel([c], h), eta) == pytest.approx(gaussian_margin(GaussianModel(c, h), eta),
                                                                 abs=1e-6)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_monotone_concave_in_radius(self, seed):
        rng = np.random.default_rng(seed)
        k = KdeModel(rng.normal(0, 1, 30), rng.uniform(0.05, 0.5))
        etas = np.linspace(0.1, 7, 15)
        g = np.array([g_min_kde(k, e) for e in etas])
        assert np.all(np.diff(g) >= -1e-9)
        assert np.all(np.diff(g, 2) <= 1e-6)
        assert np.all(g >= k.mean - 1e-12)


class TestConvexity:
    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_midpoint_and_second_differences(self, seed):
        rng = np.random.default_rng(seed)
        c = rng.normal(0, rng.uniform(0.1, 3), rng.integers(2, 60))
        h, eta = rng.uniform(0.01, 1), rng.uniform(0, 7)
        a = np.logspace(-3, 3, 121)
        g = kde_dual_objective(a, c, h, eta)
        mid = kde_dual_objective((a[:-1] + a[1:]) / 2, c, h, eta)
        assert np.all(mid <= (g[:-1] + g[1:]) / 2 + 1e-9 * np.maximum(1, np.abs(g[1:])))
        # second difference on a uniform grid
        u = np.linspace(1e-3, 10, 400)
        gu = kde_dual_objective(u, c, h, eta)
        assert np.all(np.diff(gu, 2) >= -1e-6)


class TestWorstCase:
    def test_zero_radius_is_expectation(self):
        assert worst_case_expectation([1.0, 3.0], [0.25, 0.75], 0.0) == pytest.approx(2.5)

    def test_constant_values(self):
        assert worst_case_expectation([2.0, 2.0, 2.0], [0.2, 0.3, 0.5], 5.0) == 2.0

    def test_large_radius_returns_max(self):
        assert worst_case_expectation([0.0, 1.0], [0.5, 0.5], math.log(2) + 1e-3) == 1.0

    def test_two_point_primal_and_dual(self):
        assert worst_case_expectation([0, 1], [0.5, 0.5], 0.1) == pytest.approx(TWO_POINT_WORST, abs=1e-12)
        assert dual_worst_case([0, 1], [0.5, 0.5], 0.1) == pytest.approx(TWO_POINT_WORST, abs=1e-9)

    def test_rejects_bad_probabilities(self):
        with pytest.raises(ValueError):
            worst_case_expectation([0, 1], [0.5, 0.6], 0.1)

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), eta=st.sampled_from([0.0, 0.1, 1.0, 2.3026]))
    def test_dual_primal_agreement(self, seed, eta):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 11))
        v = rng.normal(0, 2, n)
        p = rng.dirichlet(np.ones(n))
        assert dual_worst_case(v, p, eta) == pytest.approx(worst_case_expectation(v, p, eta), abs=1e-6)

    def test_small_bandwidth_kde_approaches_empirical_worst_case(self):
        rng = np.random.default_rng(5)
        c = rng.normal(0, 1, 50)
        primal = worst_case_expectation(c, np.full(50, 1 / 50), 2.3026)
        assert g_min_kde(KdeModel(c, 1e-5), 2.3026) == pytest.approx(primal, abs=1e-4)


class TestKlEstimate:
    def test_self_consistency(self):
        rng = np.random.default_rng(2)
        m = GaussianModel(0.2, 0.5)
        assert kl_divergence_estimate(rng.normal(0.2, 0.5, 100_000), m) < 0.02

    def test_exact_match_is_zero(self):
        class Uniform:
            @staticmethod
            def cdf(x):
                return np.clip(np.asarray(x, float), 0.0, 1.0)

        # 128 equally spaced points: Sturges gives 8 bins of 16 points each
        s = (np.arange(128) + 0.5) / 128
        s[0], s[-1] = 0.0, 1.0
        assert kl_divergence_estimate(s, Uniform()) == pytest.approx(0.0, abs=1e-12)

    def test_zero_model_mass_is_infinite(self):
        class Point:
            @staticmethod
            def cdf(x):
                return (np.asarray(x, float) >= 10).astype(float)

        with pytest.warns(RuntimeWarning):
            assert kl_divergence_estimate(np.linspace(0, 1, 200), Point()) == math.inf

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            kl_divergence_estimate(np.zeros(50), GaussianModel(0, 1))

    def test_kde_beats_gaussian_on_skewed_power_errors(self):
        s = sample_power_errors(5000, 1, 11)[:, 0]
        kde = fit_kde(hist(s), 0.2)
        gauss = fit_gaussian(hist(s))
        assert kl_divergence_estimate(s, kde) < kl_divergence_estimate(s, gauss)


class TestInterval:
    def test_symmetric(self):
        s = np.concatenate([np.linspace(-1, 1, 101), [5.0]])
        lo, hi = error_interval(s, 0.95)
        assert lo == -hi and hi == pytest.approx(np.quantile(np.abs(s), 0.95))

    def test_percentile(self):
        s = np.arange(1001.0)
        assert error_interval(s, 0.95, symmetric=False) == pytest.approx((25.0, 975.0), abs=1e-9)

    def test_bad_coverage(self):
        with pytest.raises(ValueError):
            error_interval([0.0, 1.0], 1.0)
