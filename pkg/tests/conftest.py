import math

import numpy as np
import pytest

from costfolio import costopt, popsim, qtheory

MARKET = costopt.MarketParams(expected_market_return=0.08, market_variance=0.04,
                              risk_free=0.01, mean_beta=1.0, mean_idio_variance=0.02)

# staircase broker grid: (lower, upper, fee)
STAIRCASE = [(0, 500, 3), (500, 1000, 6), (1000, 2000, 11), (2000, 5000, 21),
             (5000, 10000, 37), (10000, 15000, 53), (15000, 25000, 75),
             (25000, 50000, 120), (50000, 100000, 150), (100000, 500000, 150)]

# two-regime turnover-wealth laws per client category: (a, beta, xi) below / above theta
INDIVIDUALS = dict(pv=(13.94, 2.87), lower=(0.73, 0.84, 0.71), upper=(5.07, 0.54, 0.77), theta=14.0)
COMPANIES = dict(pv=(16.0, 2.0), lower=(1.12, 0.81, 0.88), upper=(5.82, 0.50, 1.00), theta=15.5)
ASSET_MANAGERS = dict(pv=(16.7, 1.8), lower=(-0.31, 0.89, 0.62), upper=(3.28, 0.63, 0.62), theta=15.5)


def bilinear(params):
    return qtheory.TurnoverWealthModel.bilinear(params["lower"], params["upper"], params["theta"])


def bilinear_data(n, seed, lower=INDIVIDUALS["lower"], upper=INDIVIDUALS["upper"],
                  theta=14.0, pv=INDIVIDUALS["pv"]):
    """Trader-level (mean log P_v, mean log T) pairs from a two-regime law."""
    rng = np.random.default_rng(seed)
    u = rng.normal(pv[0], pv[1], n)
    z = rng.standard_normal(n)
    a = np.where(u < theta, lower[0], upper[0])
    b = np.where(u < theta, lower[1], upper[1])
    xi = np.where(u < theta, lower[2], upper[2])
    return u, a + b * u + xi * z


def fee_for_count(delta, target_n, log_pv, market=MARKET):
    """Fee coefficient making the large-N optimum equal ``target_n`` at ``exp(log_pv)``."""
    n1 = costopt.n_star_asymptotic(1.0, math.exp(log_pv), market, costopt.FeeSchedule(1.0, delta))
    return (n1 / target_n) ** (2.0 - delta)


def optimizer_config(n_traders=10000, seed=1, delta=0.63, kappa=0.0, mu=11.0, sigma=1.0, **kw):
    C = fee_for_count(delta, 30.0, mu)
    return popsim.PopulationConfig(n_traders=n_traders, seed=seed, pv_mu=mu, pv_sigma=sigma,
                                   market=MARKET, fees=(costopt.FeeSchedule(C, delta),),
                                   kappa_noise=kappa, **kw)


@pytest.fixture(scope="session")
def market():
    return MARKET


# --------------------------------------------------------------------------- #
# Acceptance summary: one pass/fail line per criterion at the end of the run
# --------------------------------------------------------------------------- #
ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if not lines:
        return
    terminalreporter.section("acceptance")
    for title, ok, detail in lines:
        terminalreporter.write_line("[%s] %s: %s" % ("PASS" if ok else "FAIL", title, detail))


@pytest.fixture
def record(request):
    """``record(title, ok, detail)`` adds a line to the acceptance summary."""
    def add(title, ok, detail):
        request.config.stash[ACCEPTANCE].append((title, bool(ok), detail))
        print("[%s] %s: %s" % ("PASS" if ok else "FAIL", title, detail))
    return add
