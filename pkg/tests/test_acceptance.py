"""End-to-end acceptance checks at their stated tolerances and time budgets.

Each test records one PASS/FAIL line (shown in the ``acceptance`` section of
the terminal summary) before asserting.
"""

import math
import time
from pathlib import Path

import numpy as np

from conftest import INDIVIDUALS, MARKET, STAIRCASE, bilinear, bilinear_data, fee_for_count
from costfolio import cli, costopt, popsim, qtheory, regress
from costfolio import tailfit as tf

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


class Clock:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0


class TestTailRecovery:
    def test_pareto(self, record):
        gammas = [tf.fit_pareto_tail(tf.sample(tf.ParetoTailFit(2.33, 1.0), 100_000, s), B=0).gamma
                  for s in range(20)]
        hits = sum(2.29 <= g <= 2.37 for g in gammas)
        x = tf.sample(tf.ParetoTailFit(2.33, 1.0), 100_000, 0)
        with Clock() as c:
            f = tf.fit_pareto_tail(x, B=1999, seed=0)
        ok = hits >= 18 and c.seconds < 30 and f.gamma == gammas[0]
        record("pareto tail recovery", ok,
               "%d/20 seeds in [2.29, 2.37] (range %.4f..%.4f); B=1999 fit %.1f s, CI [%.4f, %.4f]"
               % (hits, min(gammas), max(gammas), c.seconds, f.ci_gamma.lower, f.ci_gamma.upper))
        assert ok

    def test_lognormal(self, record):
        x = tf.sample(tf.LogNormalFit(13.94, 2.87), 100_000, 0)
        with Clock() as c:
            f = tf.fit_lognormal(x, B=1999, seed=0)
        ok = abs(f.mu - 13.94) <= 0.03 and abs(f.sigma - 2.87) <= 0.02 and c.seconds < 5
        record("log-normal recovery", ok, "mu %.4f, sigma %.4f, B=1999 fit %.2f s"
               % (f.mu, f.sigma, c.seconds))
        assert ok

    def test_zipf_mandelbrot_cutoff(self, record):
        true = tf.ZipfMandelbrotFit(5e4, 1.97, 0.98e-6)
        x = tf.sample(true, 50_000, 0)
        with Clock() as c:
            f = tf.fit_zipf_mandelbrot(x, B=1999, seed=0)
        ok = (f.ci_gamma.contains(true.gamma) and f.ci_beta_cut.contains(true.beta_cut)
              and f.ci_c.contains(true.c) and c.seconds < 60)
        record("zipf-mandelbrot cutoff recovery", ok,
               "gamma %.3f [%.3f, %.3f], beta_cut %.3g [%.3g, %.3g], c %.4g [%.4g, %.4g]; %.1f s"
               % (f.gamma, *f.ci_gamma.as_list(), f.beta_cut, *f.ci_beta_cut.as_list(),
                  f.c, *f.ci_c.as_list(), c.seconds))
        assert ok


class TestDoubleLinear:
    def test_coverage(self, record):
        beta1, beta2 = INDIVIDUALS["lower"][1], INDIVIDUALS["upper"][1]
        hits1 = hits2 = 0
        half1, half2 = [], []
        with Clock() as c:
            for seed in range(100):
                x, y = bilinear_data(10_000, seed)
                th = regress.detect_thresholds(regress.loess_fit(x, y, span=0.2))
                f = regress.fit_double_linear(x, y, th.theta1, th.theta2)
                hits1 += f.ci_beta1[0] <= beta1 <= f.ci_beta1[1]
                hits2 += f.ci_beta2[0] <= beta2 <= f.ci_beta2[1]
                half1.append((f.ci_beta1[1] - f.ci_beta1[0]) / 2)
                half2.append((f.ci_beta2[1] - f.ci_beta2[0]) / 2)
        ok = hits1 >= 90 and hits2 >= 90 and c.seconds < 120
        record("double-linear recovery", ok,
               "CI hits %d/100 (lower, half-width %.3f) and %d/100 (upper, half-width %.3f); %.1f s"
               % (hits1, np.median(half1), hits2, np.median(half2), c.seconds))
        assert ok


class TestQ:
    def test_closed_form_vs_quadrature(self, record):
        rng = np.random.default_rng(0)
        grid = np.geomspace(1e-6, 10, 400)
        worst_cdf = worst_mom = 0.0
        with Clock() as c:
            for _ in range(20):
                model = qtheory.TurnoverWealthModel.single(
                    rng.uniform(-2, 6), rng.uniform(0.3, 1.0), rng.uniform(0.3, 1.2))
                mu, sigma = rng.uniform(8, 16), rng.uniform(0.5, 3.0)
                qm = qtheory.closed_form_q(model, mu, sigma)
                pv = tf.LogNormalFit(mu, sigma)
                worst_cdf = max(worst_cdf, np.max(np.abs(qtheory.q_cdf(grid, model, pv) - qm.cdf(grid))))
                for n in (1, 2, 3):
                    ref = qm.moment(n)
                    worst_mom = max(worst_mom, abs(qtheory.q_moment(n, model, pv) / ref - 1))
        ok = worst_cdf < 1e-6 and worst_mom < 1e-8 and c.seconds < 10
        record("Q closed form vs quadrature", ok,
               "CDF sup-norm %.2e, moment rel. error %.2e over 20 sets; %.1f s"
               % (worst_cdf, worst_mom, c.seconds))
        assert ok

    def test_bilinear_monte_carlo(self, record):
        n = 1_000_000
        lo, hi, theta = INDIVIDUALS["lower"], INDIVIDUALS["upper"], INDIVIDUALS["theta"]
        with Clock() as c:
            rng = np.random.default_rng(2024)
            u = rng.normal(*INDIVIDUALS["pv"], n)
            reg = (u >= theta).astype(int)
            a, b, xi = (np.array([lo[k], hi[k]])[reg] for k in range(3))
            q = np.sort(np.exp(a + (b - 1.0) * u + xi * rng.standard_normal(n)))
            grid = np.quantile(q, np.linspace(0.01, 0.99, 99))
            emp = np.searchsorted(q, grid, side="right") / n
            th = qtheory.bilinear_q_cdf(grid, bilinear(INDIVIDUALS), tf.LogNormalFit(*INDIVIDUALS["pv"]))
            dev = np.max(np.abs(emp - th))
        ok = dev < 3e-3 and c.seconds < 60
        record("Q bilinear vs Monte Carlo", ok, "max deviation %.2e at 99 points; %.1f s" % (dev, c.seconds))
        assert ok


def random_market(rng):
    m = costopt.MarketParams(rng.uniform(0.03, 0.15), rng.uniform(0.01, 0.09), rng.uniform(0, 0.03),
                             rng.uniform(0.6, 1.4), rng.uniform(0.005, 0.08))
    s = costopt.FeeSchedule(10 ** rng.uniform(-3, -1), rng.uniform(0.05, 0.95))
    return m, s


class TestOptimizer:
    def test_correctness(self, record):
        rng = np.random.default_rng(7)
        grid = np.linspace(0, 1, 10_001)
        worst_res = worst_gap = worst_rt = shortfall = 0.0
        interior = round_trips = 0
        with Clock() as c:
            for _ in range(100):
                m, s = random_market(rng)
                N, lam, P = float(rng.integers(1, 200)), 10 ** rng.uniform(-1, 0), 10 ** rng.uniform(4, 8)
                a = costopt.solve_x_star(N, lam, P, m, s)
                vals = np.array([costopt.objective(g, N, lam, P, m, s) for g in grid])
                worst_gap = max(worst_gap, abs(a.x_star - grid[np.argmax(vals)]) / (grid[1] - grid[0]))
                shortfall = max(shortfall, (vals.max() - a.objective_value) / max(1.0, abs(vals.max())))
                if not a.boundary:
                    interior += 1
                    worst_res = max(worst_res, a.residual)
                # x -> (N*, lambda) -> x*
                x = rng.uniform(0.1, 1.0)
                try:
                    r = costopt.solve_n_star(x, P, m, s)
                except costopt.NoRootError:
                    continue
                back = costopt.solve_x_star(r.n_raw, r.lam, P, m, s)
                worst_rt = max(worst_rt, abs(back.x_star - x))
                round_trips += 1
        ok = (worst_res < 1e-12 and worst_gap <= 1.0 and shortfall <= 1e-12 and worst_rt < 1e-8
              and interior >= 50 and round_trips >= 50 and c.seconds < 30)
        record("optimizer correctness", ok,
               "residual %.1e on %d interior sets, grid gap <= %.2f steps, round trip %.1e on %d sets; %.1f s"
               % (worst_res, interior, worst_gap, worst_rt, round_trips, c.seconds))
        assert ok

    def test_flat_fee_square_root(self, record):
        x = 1.0
        s = costopt.FeeSchedule(fee_for_count(0.0, 100.0, math.log(1e4)), 0.0)
        P = np.geomspace(1e4, 1e8, 17)
        N = np.array([costopt.solve_n_star(x, p, MARKET, s).n_raw for p in P])
        slope = np.polyfit(np.log(x * P), np.log(N), 1)[0]
        ok = abs(slope - 0.5) <= 0.005
        record("flat-fee square-root limit", ok, "slope %.4f for N* %.0f..%.0f" % (slope, N[0], N[-1]))
        assert ok


class TestClosedLoop:
    def test_exponents(self, record):
        cfg = popsim.config_from_mapping(cli.load_toml(CONFIGS / "closed_loop.toml"))
        assert cfg.n_traders == 10_000 and cfg.kappa_noise == 0.0 and cfg.fees[0].delta == 0.63
        with Clock() as c:
            r = popsim.run_validation(cfg)
        alpha, beta = r.alpha[0].value, r.beta[0].value
        ok = abs(alpha - 0.270) <= 0.01 and abs(beta - 0.730) <= 0.01 and c.seconds < 120
        record("closed-loop exponents", ok, "alpha %.4f, beta %.4f; %.1f s" % (alpha, beta, c.seconds))
        assert ok


class TestFeeCurve:
    def test_staircase(self, record):
        with Clock() as c:
            full = costopt.fit_fee_powerlaw(STAIRCASE, B=1999, seed=0)
            trimmed = costopt.fit_fee_powerlaw(STAIRCASE[:-2], B=1999, seed=0)
        ok = (0.5 <= full.delta <= 0.74 and abs(trimmed.delta - 0.74) < abs(full.delta - 0.74)
              and c.seconds < 5)
        record("fee-curve fit", ok, "delta %.3f [%.3f, %.3f], without two largest segments %.3f; %.2f s"
               % (full.delta, full.ci_delta.lower, full.ci_delta.upper, trimmed.delta, c.seconds))
        assert ok


class TestDeterminism:
    def test_simulate_byte_identical(self, record, tmp_path):
        def run(threads, name):
            out = tmp_path / name
            code = cli.main(["simulate", "--population", str(CONFIGS / "closed_loop.toml"),
                             "--threads", str(threads), "--out", str(out)])
            assert code == 0
            return {p.name: p.read_bytes() for p in sorted(out.iterdir())}

        a, b, c = run(1, "a"), run(1, "b"), run(4, "c")
        ok = a == b == c and "transactions.csv" in a
        record("simulation determinism", ok, "%d files identical across reruns and 1 vs 4 threads" % len(a))
        assert ok


class TestExponentAlgebra:
    def test_round_trip_and_spot_values(self, record):
        worst = max(abs(costopt.delta_eff(costopt.exponents(d)["beta"]) - d)
                    for d in np.round(np.arange(100) * 0.01, 2))
        spots = (costopt.exponents(0.0)["beta"] == 0.5, costopt.exponents(1.0)["beta"] == 1.0,
                 round(costopt.delta_eff(0.51), 2) == 0.04, round(costopt.delta_eff(0.73), 2) == 0.63)
        ok = worst < 1e-14 and all(spots)
        record("exponent algebra", ok, "round-trip error %.1e; delta_eff(0.51)=%.4f, delta_eff(0.73)=%.4f"
               % (worst, costopt.delta_eff(0.51), costopt.delta_eff(0.73)))
        assert ok
