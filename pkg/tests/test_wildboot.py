import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy.stats import norm

from drboot.errors import DegenerateDraws, PositivityViolation
from drboot.weighting import Estimand
from drboot.wildboot import (
    EXPONENTIAL,
    NORMAL_IQR,
    RADEMACHER,
    InfluenceVector,
    WildDraws,
    bias_corrected,
    efficient_influence,
    iqr_se,
    wild_bootstrap,
    wild_ci,
)

import oracles


def influence_instance(seed=0, n=16):
    rng = np.random.default_rng(seed)
    z = np.zeros(n)
    z[: n // 3] = 1.0
    rng.shuffle(z)
    e = rng.uniform(0.1, 0.9, n)
    y = rng.normal(1.0, 2.0, n)
    m = rng.normal(0.5, 1.0, n)
    tau = rng.normal(0.0, 1.0)
    return z, e, y, m, tau


instances = st.integers(min_value=0, max_value=2 ** 31 - 1).map(
    influence_instance
)


def make_vector(values, estimand=Estimand.ATT, p_hat=0.5, centered=True):
    return InfluenceVector(np.asarray(values, float), estimand, p_hat, centered)


class TestEfficientInfluence:
    def test_single_treated_hand_value(self):
        # one treated, one control; residual 2 on the treated unit with
        # e = 1/2 gives (1/p)(1 * 2 - 0) = 4, and the control contributes 0
        z = np.array([1.0, 0.0])
        e = np.array([0.5, 0.5])
        y = np.array([2.0, 3.0])
        m = np.array([0.0, 3.0])
        iv = efficient_influence(Estimand.ATT, z, e, y, m, 0.0, center=False)
        assert_allclose(iv.phi, [4.0, 0.0])
        assert iv.p_hat == 0.5
        assert not iv.centered

    def test_zero_when_residuals_and_estimate_zero(self):
        z, e, y, _, _ = influence_instance(3)
        for est in (Estimand.ATT, Estimand.ATC):
            iv = efficient_influence(est, z, e, y, y, 0.0, center=False)
            assert_allclose(iv.phi, 0.0)

    @given(instances)
    @settings(max_examples=40, deadline=None)
    def test_matches_oracle(self, inst):
        z, e, y, m, tau = inst
        for est in (Estimand.ATT, Estimand.ATC):
            iv = efficient_influence(est, z, e, y, m, tau, center=False)
            assert_allclose(
                iv.phi, oracles.influence_direct(est.name, z, e, y, m, tau),
                rtol=1e-12, atol=1e-12,
            )

    @given(instances)
    @settings(max_examples=40, deadline=None)
    def test_centering_is_exact(self, inst):
        z, e, y, m, tau = inst
        iv = efficient_influence(Estimand.ATT, z, e, y, m, tau)
        scale = max(1.0, np.abs(iv.phi).max())
        assert abs(iv.phi.mean()) < 1e-12 * scale
        assert iv.centered

    @given(instances)
    @settings(max_examples=40, deadline=None)
    def test_uncentered_mean_identity(self, inst):
        # averaging the raw influence values recovers the gap between the
        # unnormalized one-step estimate and whatever tau_hat was supplied
        z, e, y, m, tau = inst
        treated = z == 1.0
        resid = y - m

        iv = efficient_influence(Estimand.ATT, z, e, y, m, tau, center=False)
        unnorm = (resid[treated].sum()
                  - ((e / (1 - e))[~treated] * resid[~treated]).sum())
        unnorm /= treated.sum()
        assert_allclose(iv.phi.mean(), unnorm - tau, rtol=1e-9, atol=1e-9)

        iv = efficient_influence(Estimand.ATC, z, e, y, m, tau, center=False)
        unnorm = ((((1 - e) / e)[treated] * resid[treated]).sum()
                  - resid[~treated].sum())
        unnorm /= (~treated).sum()
        assert_allclose(iv.phi.mean(), unnorm - tau, rtol=1e-9, atol=1e-9)

    def test_boundary_rules(self):
        z = np.array([1.0, 1.0, 0.0, 0.0])
        y = np.zeros(4)
        m = np.zeros(4)
        # control at e == 1 breaks the treated-target tilt
        e = np.array([0.5, 0.5, 1.0, 0.5])
        with pytest.raises(PositivityViolation):
            efficient_influence(Estimand.ATT, z, e, y, m, 0.0)
        # a treated unit at e == 1 is the harmless cancelling case
        e = np.array([1.0, 0.5, 0.5, 0.5])
        iv = efficient_influence(Estimand.ATT, z, e, y, m, 0.0, center=False)
        assert np.all(np.isfinite(iv.phi))
        # and symmetrically for the control target
        e = np.array([0.0, 0.5, 0.5, 0.5])
        with pytest.raises(PositivityViolation):
            efficient_influence(Estimand.ATC, z, e, y, m, 0.0)
        e = np.array([0.5, 0.5, 0.0, 0.5])
        iv = efficient_influence(Estimand.ATC, z, e, y, m, 0.0, center=False)
        assert np.all(np.isfinite(iv.phi))

    def test_ate_not_supported(self):
        z, e, y, m, tau = influence_instance(1)
        with pytest.raises(ValueError):
            efficient_influence(Estimand.ATE, z, e, y, m, tau)


class TestWildBootstrap:
    def test_zero_influence_gives_zero_deltas(self):
        iv = make_vector(np.zeros(10))
        draws = wild_bootstrap(iv, 1.5, R=20, seed=7)
        assert_allclose(draws.deltas, 0.0)
        assert draws.n == 10
        assert draws.tau_hat == 1.5

    def test_reproducible_and_seed_sensitive(self):
        iv = make_vector(np.random.default_rng(0).normal(size=30))
        a = wild_bootstrap(iv, 0.0, R=25, seed=11)
        b = wild_bootstrap(iv, 0.0, R=25, seed=11)
        c = wild_bootstrap(iv, 0.0, R=25, seed=12)
        assert np.array_equal(a.deltas, b.deltas)
        assert not np.array_equal(a.deltas, c.deltas)

    def test_families_use_distinct_streams(self):
        iv = make_vector(np.random.default_rng(1).normal(size=30))
        r = wild_bootstrap(iv, 0.0, R=25, multiplier=RADEMACHER, seed=5)
        e = wild_bootstrap(iv, 0.0, R=25, multiplier=EXPONENTIAL, seed=5)
        assert not np.array_equal(r.deltas, e.deltas)

    def test_replicates_are_addressed_not_sequential(self):
        # growing R extends the draws without disturbing earlier ones
        iv = make_vector(np.random.default_rng(2).normal(size=30))
        short = wild_bootstrap(iv, 0.0, R=10, seed=3)
        long = wild_bootstrap(iv, 0.0, R=25, seed=3)
        assert np.array_equal(short.deltas, long.deltas[:10])

    def test_rademacher_second_moment(self):
        # conditional on phi, E delta^2 = mean(phi^2) exactly under
        # Rademacher multipliers
        phi = np.random.default_rng(4).normal(size=200)
        iv = make_vector(phi)
        draws = wild_bootstrap(iv, 0.0, R=4000, seed=9)
        rms = np.sqrt(np.mean(phi ** 2))
        assert abs(np.sqrt(np.mean(draws.deltas ** 2)) - rms) < 0.05 * rms

    def test_exponential_mean_zero_for_centered(self):
        phi = np.random.default_rng(5).normal(size=150)
        phi -= phi.mean()
        iv = make_vector(phi)
        draws = wild_bootstrap(
            iv, 0.0, R=4000, multiplier=EXPONENTIAL, seed=13
        )
        rms = np.sqrt(np.mean(phi ** 2))
        assert abs(draws.deltas.mean()) < 4 * rms / np.sqrt(4000)

    def test_linear_in_influence_scale(self):
        phi = np.random.default_rng(6).normal(size=40)
        base = wild_bootstrap(make_vector(phi), 0.0, R=50, seed=21)
        scaled = wild_bootstrap(make_vector(7.0 * phi), 0.0, R=50, seed=21)
        assert_allclose(scaled.deltas, 7.0 * base.deltas, rtol=1e-12)

    def test_rejects_unknown_family_and_tiny_R(self):
        iv = make_vector(np.ones(4))
        with pytest.raises(ValueError):
            wild_bootstrap(iv, 0.0, multiplier="gaussian")
        with pytest.raises(ValueError):
            wild_bootstrap(iv, 0.0, R=1)


class TestIqrSE:
    def test_hand_values(self):
        draws = WildDraws(
            np.array([0.2, 0.4, 0.6, 0.8]), RADEMACHER, 4, 1.0, 0
        )
        out = iqr_se(draws)
        # q75 - q25 = 0.65 - 0.35 = 0.3 under linear interpolation
        assert abs(out.sigma_half - 0.3 / NORMAL_IQR) < 1e-12
        assert abs(out.se - 0.111195) < 1e-5

    def test_direct_variance_reading(self):
        draws = WildDraws(np.array([1.0, -1.0, 1.0, -1.0]), RADEMACHER, 4, 0.0, 0)
        out = iqr_se(draws)
        assert out.sigma_star == 1.0
        assert out.se_direct == 0.5

    def test_degenerate_quartiles_raise(self):
        draws = WildDraws(
            np.array([1.0, 1.0, 1.0, 1.0, 2.0]), RADEMACHER, 5, 0.0, 0
        )
        with pytest.raises(DegenerateDraws):
            iqr_se(draws)

    def test_constant_draws_give_zero_iqr_se(self):
        draws = WildDraws(np.full(6, 0.5), RADEMACHER, 9, 0.0, 0)
        out = iqr_se(draws)
        assert out.se == 0.0
        assert_allclose(out.se_direct, 0.5 / 3.0)

    def test_agrees_with_normal_sd_at_scale(self):
        rng = np.random.default_rng(8)
        draws = WildDraws(rng.normal(0.0, 2.0, 20000), RADEMACHER, 100, 0.0, 0)
        out = iqr_se(draws)
        assert abs(out.sigma_half - 2.0) < 0.06
        assert abs(np.sqrt(out.sigma_star) - 2.0) < 0.06
        assert abs(out.se - 0.2) < 0.006

    def test_scale_equivariance(self):
        rng = np.random.default_rng(10)
        base = rng.normal(size=500)
        a = iqr_se(WildDraws(base, RADEMACHER, 50, 0.0, 0))
        b = iqr_se(WildDraws(4.0 * base, RADEMACHER, 50, 0.0, 0))
        assert_allclose(b.se, 4.0 * a.se, rtol=1e-10)
        assert_allclose(b.sigma_star, 16.0 * a.sigma_star, rtol=1e-10)


class TestWildCI:
    def test_published_scale_p_value(self):
        lo, hi, p = wild_ci(0.10, 0.053)
        assert round(p, 2) == 0.06
        assert abs(p - 0.0592) < 5e-4
        assert lo < 0.0 < hi

    def test_interval_uses_requested_level(self):
        lo, hi, _ = wild_ci(1.0, 0.5, alpha=0.32)
        half = (hi - lo) / 2.0
        assert abs(half - 0.994458 * 0.5) < 1e-5
        assert_allclose((hi + lo) / 2.0, 1.0)

    def test_zero_se_collapses(self):
        lo, hi, p = wild_ci(2.0, 0.0)
        assert (lo, hi, p) == (2.0, 2.0, 0.0)
        lo, hi, p = wild_ci(0.0, 0.0)
        assert (lo, hi, p) == (0.0, 0.0, 1.0)

    def test_negative_se_rejected(self):
        with pytest.raises(ValueError):
            wild_ci(0.0, -1.0)


class TestBiasCorrected:
    def test_hand_value(self):
        draws = WildDraws(
            np.array([0.2, 0.4, 0.6, 0.8]), RADEMACHER, 4, 1.0, 0
        )
        est, lo, hi = bias_corrected(1.0, draws)
        # mean perturbed estimate is 1.25, so the reflection lands at 0.75
        assert_allclose(est, 0.75)
        zq = norm.ppf(0.975)
        se = iqr_se(draws).se
        assert_allclose(lo, 0.75 - zq * se)
        assert_allclose(hi, 0.75 + zq * se)

    def test_symmetric_draws_leave_estimate_alone(self):
        draws = WildDraws(np.array([-0.3, 0.3, -1.1, 1.1]), RADEMACHER, 9, 2.0, 0)
        est, _, _ = bias_corrected(2.0, draws)
        assert_allclose(est, 2.0)
