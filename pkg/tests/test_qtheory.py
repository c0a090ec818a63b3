import math

import numpy as np
import pytest
from scipy import integrate, stats

from conftest import ASSET_MANAGERS, COMPANIES, INDIVIDUALS, bilinear
from costfolio import qtheory as qt
from costfolio.tailfit import LogNormalFit, ParetoTailFit, WeibullFit

Q_GRID = np.geomspace(1e-6, 10, 300)


def random_sets(k, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(k):
        yield (qt.TurnoverWealthModel.single(rng.uniform(-2, 6), rng.uniform(0.3, 1.0),
                                             rng.uniform(0.3, 1.2)),
               rng.uniform(8, 16), rng.uniform(0.5, 3.0))


class TestClosedForm:
    def test_example_arithmetic(self):
        qm = qt.closed_form_q(qt.TurnoverWealthModel.single(0.0, 0.84, 0.71), 13.94, 2.87)
        assert qm.M == pytest.approx(-0.16 * 13.94, abs=1e-12)
        assert qm.S ** 2 == pytest.approx(0.71 ** 2 + 0.16 ** 2 * 2.87 ** 2, abs=1e-12)
        assert qm.S ** 2 == pytest.approx(0.71494, abs=1e-4)

    def test_example_monte_carlo(self):
        rng = np.random.default_rng(0)
        n = 1_000_000
        logq = 0.71 * rng.standard_normal(n) - 0.16 * rng.normal(13.94, 2.87, n)
        qm = qt.closed_form_q(qt.TurnoverWealthModel.single(0.0, 0.84, 0.71), 13.94, 2.87)
        assert logq.mean() == pytest.approx(qm.M, abs=4 * qm.S / math.sqrt(n))
        assert logq.var() == pytest.approx(qm.S ** 2, rel=4 * math.sqrt(2 / n))

    def test_proportional_regime(self):
        qm = qt.closed_form_q(qt.TurnoverWealthModel.single(1.3, 1.0, 0.6), 12.0, 2.0)
        assert (qm.M, qm.S) == (1.3, 0.6)

    def test_deterministic_wealth(self):
        qm = qt.closed_form_q(qt.TurnoverWealthModel.single(1.0, 0.7, 0.5), 12.0, 0.0)
        assert qm.S == 0.5

    def test_two_regimes_rejected(self):
        with pytest.raises(ValueError):
            qt.closed_form_q(bilinear(INDIVIDUALS), 13.94, 2.87)

    @pytest.mark.parametrize("case", list(random_sets(20)), ids=[str(i) for i in range(20)])
    def test_quadrature_agrees(self, case):
        model, mu, sigma = case
        qm = qt.closed_form_q(model, mu, sigma)
        pv = LogNormalFit(mu, sigma)
        assert np.max(np.abs(qt.q_cdf(Q_GRID, model, pv) - qm.cdf(Q_GRID))) < 1e-6
        ref = qm.pdf(Q_GRID)
        assert np.max(np.abs(qt.q_pdf(Q_GRID, model, pv) - ref) / np.maximum(1.0, ref)) < 1e-6


class TestDensity:
    def test_proportional_ignores_wealth_law(self):
        model = qt.TurnoverWealthModel.single(-1.0, 1.0, 0.8)
        ref = stats.lognorm(s=0.8, scale=math.exp(-1.0))
        for pv in (LogNormalFit(12, 2), WeibullFit(0.5, 1e5), ParetoTailFit(2.5, 1e4)):
            np.testing.assert_allclose(qt.q_pdf(Q_GRID, model, pv), ref.pdf(Q_GRID), rtol=1e-12)

    def test_flat_law_monte_carlo(self):
        # beta = 0: Q = exp(a + xi X) / P_v with independent factors
        model = qt.TurnoverWealthModel.single(8.0, 0.0, 0.5)
        pv = WeibullFit(1.5, 2e4)
        rng = np.random.default_rng(3)
        n = 1_000_000
        q = np.exp(8.0 + 0.5 * rng.standard_normal(n)) / (2e4 * rng.weibull(1.5, n))
        edges = np.quantile(q, np.linspace(0.05, 0.95, 10))
        for lo, hi in zip(edges[:-1], edges[1:]):
            p_mc = np.mean((q >= lo) & (q < hi))
            p_th = integrate.quad(lambda v: qt.q_pdf(v, model, pv), lo, hi, epsabs=1e-10)[0]
            assert abs(p_mc - p_th) < 3 * math.sqrt(p_mc * (1 - p_mc) / n)

    @pytest.mark.parametrize("pv", [LogNormalFit(13.94, 2.87), WeibullFit(0.6, 1e5),
                                    ParetoTailFit(2.2, 1e4)], ids=["lognormal", "weibull", "pareto"])
    def test_finite_difference_of_cdf(self, pv):
        model = qt.TurnoverWealthModel.single(0.73, 0.84, 0.71)
        q = np.geomspace(1e-4, 1.0, 25)
        h = 1e-4 * q
        fd = (qt.q_cdf(q + h, model, pv) - qt.q_cdf(q - h, model, pv)) / (2 * h)
        dens = qt.q_pdf(q, model, pv)
        assert np.max(np.abs(fd - dens) / np.maximum(1.0, dens)) < 1e-5

    @pytest.mark.parametrize("model", [qt.TurnoverWealthModel.single(0.73, 0.84, 0.71),
                                       bilinear(INDIVIDUALS), bilinear(ASSET_MANAGERS)],
                             ids=["single", "individuals", "asset-managers"])
    def test_normalization(self, model):
        pv = LogNormalFit(*INDIVIDUALS["pv"])
        total = integrate.quad(lambda t: qt.q_pdf(math.exp(t), model, pv) * math.exp(t),
                               -40, 20, limit=400, epsabs=1e-11)[0]
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_cdf_limits_and_monotone(self):
        model = bilinear(COMPANIES)
        pv = LogNormalFit(*COMPANIES["pv"])
        assert qt.q_cdf(1e-30, model, pv) < 1e-9
        assert qt.q_cdf(1e30, model, pv) > 1 - 1e-9
        assert np.all(np.diff(qt.q_cdf(Q_GRID, model, pv)) >= -1e-12)

    def test_median(self):
        model = qt.TurnoverWealthModel.single(0.73, 0.84, 0.71)
        qm = qt.closed_form_q(model, 13.94, 2.87)
        assert qt.q_cdf(math.exp(qm.M), model, LogNormalFit(13.94, 2.87)) == pytest.approx(0.5, abs=1e-6)

    def test_rejects_non_positive(self):
        with pytest.raises(ValueError):
            qt.q_pdf(0.0, qt.TurnoverWealthModel.single(0, 0.5, 1), LogNormalFit(0, 1))


class TestMoments:
    def test_zero_order(self):
        assert qt.q_moment(0, bilinear(INDIVIDUALS), LogNormalFit(13.94, 2.87)) == 1.0

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_proportional_exact(self, n):
        model = qt.TurnoverWealthModel.single(-0.4, 1.0, 0.6)
        assert qt.q_moment(n, model, WeibullFit(0.7, 1e4)) == math.exp(n * -0.4 + 0.5 * n * n * 0.6 ** 2)

    @pytest.mark.parametrize("case", list(random_sets(6, seed=4)), ids=[str(i) for i in range(6)])
    @pytest.mark.parametrize("n", [1, 2])
    def test_lognormal_closed_form(self, case, n):
        model, mu, sigma = case
        ref = qt.closed_form_q(model, mu, sigma).moment(n)
        assert qt.q_moment(n, model, LogNormalFit(mu, sigma)) == pytest.approx(ref, rel=1e-8)

    @pytest.mark.parametrize("params", [INDIVIDUALS, COMPANIES, ASSET_MANAGERS],
                             ids=["individuals", "companies", "asset-managers"])
    @pytest.mark.parametrize("n", [1, 2])
    def test_bound_at_fitted_parameters(self, params, n):
        pv = LogNormalFit(*params["pv"])
        for a, beta, xi in (params["lower"], params["upper"]):
            bound = math.exp(n * a + 0.5 * n * n * xi * xi)
            assert qt.q_moment(n, qt.TurnoverWealthModel.single(a, beta, xi), pv) <= bound

    def test_divergent(self):
        with pytest.raises(qt.DivergentIntegralError):
            # E(P_v^-s) is infinite for a Weibull law once s reaches its shape
            qt.q_moment(1, qt.TurnoverWealthModel.single(0, 0.5, 1), WeibullFit(0.3, 1e4))


class TestBilinear:
    def test_theta_far_above(self):
        lo, hi = INDIVIDUALS["lower"], INDIVIDUALS["upper"]
        model = qt.TurnoverWealthModel.bilinear(lo, hi, 600.0)
        ref = qt.closed_form_q(qt.TurnoverWealthModel.single(*lo), 13.94, 2.87)
        np.testing.assert_allclose(qt.bilinear_q_cdf(Q_GRID, model, LogNormalFit(13.94, 2.87)),
                                   ref.cdf(Q_GRID), atol=1e-9)

    def test_theta_far_below(self):
        lo, hi = INDIVIDUALS["lower"], INDIVIDUALS["upper"]
        model = qt.TurnoverWealthModel.bilinear(lo, hi, -600.0)
        ref = qt.closed_form_q(qt.TurnoverWealthModel.single(*hi), 13.94, 2.87)
        np.testing.assert_allclose(qt.bilinear_q_cdf(Q_GRID, model, LogNormalFit(13.94, 2.87)),
                                   ref.cdf(Q_GRID), atol=1e-9)

    def test_monte_carlo(self):
        n = 1_000_000
        rng = np.random.default_rng(11)
        lo, hi, theta = INDIVIDUALS["lower"], INDIVIDUALS["upper"], INDIVIDUALS["theta"]
        u = rng.normal(13.94, 2.87, n)
        reg = np.where(u < theta, 0, 1)
        a = np.array([lo[0], hi[0]])[reg]
        b = np.array([lo[1], hi[1]])[reg]
        xi = np.array([lo[2], hi[2]])[reg]
        q = np.sort(np.exp(a + b * u + xi * rng.standard_normal(n) - u))
        grid = np.quantile(q, np.linspace(0.01, 0.99, 99))
        emp = np.searchsorted(q, grid, side="right") / n
        th = qt.bilinear_q_cdf(grid, bilinear(INDIVIDUALS), LogNormalFit(13.94, 2.87))
        assert np.max(np.abs(emp - th)) < 3 / math.sqrt(n)

    def test_category_ordering(self):
        tail = {}
        for name, params in (("individuals", INDIVIDUALS), ("companies", COMPANIES),
                             ("asset managers", ASSET_MANAGERS)):
            tail[name] = 1 - qt.bilinear_q_cdf(0.2, bilinear(params), LogNormalFit(*params["pv"]))
        assert tail["individuals"] == pytest.approx(0.45, abs=0.05)
        assert tail["individuals"] > tail["companies"] > tail["asset managers"]
        assert tail["asset managers"] < 0.10

    def test_needs_lognormal_and_two_regimes(self):
        with pytest.raises(TypeError):
            qt.bilinear_q_cdf(0.1, bilinear(INDIVIDUALS), WeibullFit(1, 1))
        with pytest.raises(ValueError):
            qt.bilinear_q_cdf(0.1, qt.TurnoverWealthModel.single(0, 0.5, 1), LogNormalFit(0, 1))


class TestModelValidation:
    @pytest.mark.parametrize("beta,xi", [(1.2, 0.5), (-0.1, 0.5), (0.5, 0.0)])
    def test_bad_regime(self, beta, xi):
        with pytest.raises(ValueError):
            qt.Regime(0.0, beta, xi)

    def test_boundary_required(self):
        with pytest.raises(ValueError):
            qt.TurnoverWealthModel((qt.Regime(0, 0.5, 1), qt.Regime(0, 0.5, 1)))


class TestSampler:
    def test_deterministic(self):
        qm = qt.QModel(-2.0, 0.8)
        np.testing.assert_array_equal(qt.sample_q(qm, 100, 1), qt.sample_q(qm, 100, 1))

    def test_point_mass(self):
        np.testing.assert_allclose(qt.sample_q(qt.QModel(-1.5, 1e-300), 50, 0), math.exp(-1.5))

    def test_log_moments(self):
        r = qt.q_sample_report(qt.sample_q(qt.QModel(-2.2, 0.85), 1_000_000, 2))
        assert r["log_mean"] == pytest.approx(-2.2, abs=4 * 0.85e-3)
        assert r["log_sd"] == pytest.approx(0.85, abs=4 * 0.85e-3)

    def test_ks_pass_rate(self):
        qm = qt.QModel(-2.2, 0.85)
        ref = stats.lognorm(s=0.85, scale=math.exp(-2.2))
        n, seeds = 1_000_000, 100
        passes = sum(stats.kstest(qt.sample_q(qm, n, s), ref.cdf).pvalue > 0.05 for s in range(seeds))
        # nominal 95%; three binomial standard errors below
        assert passes / seeds >= 0.95 - 3 * math.sqrt(0.95 * 0.05 / seeds)

    def test_fraction_above_one(self):
        r = qt.q_sample_report(qt.sample_q(qt.QModel(0.0, 1.0), 100_000, 3))
        assert r["fraction_above_one"] == pytest.approx(0.5, abs=0.01)
