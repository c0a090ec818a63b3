"""Synthetic populations of cost-aware traders and the closed-loop check of
the exponent relations.

Two generators are available:

``optimizer``
    each trader invests ``x P_v`` in ``N`` equal buys, ``N`` being the
    large-``N`` optimum under the regime's fee law scaled by ``exp(zeta)``
    with ``zeta ~ N(0, kappa_noise^2)``;
``turnover-law``
    the per-buy turnover follows ``log T = a + beta log P_v + xi X`` and
    the trader makes ``N = max(1, floor(P_v / T))`` such buys.

Trader ``i`` draws from ``numpy.random.default_rng([seed, i])``, so output
does not depend on how the work is split.
"""

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta, timezone
from typing import Optional, Tuple

import numpy as np

from . import costopt, qtheory, regress, traderdata
from .kernels import thread_count
from .tailfit import LogNormalFit, ks_statistic

MODES = ("optimizer", "turnover-law")


@dataclass(frozen=True)
class PopulationConfig:
    n_traders: int
    seed: int
    pv_mu: float
    pv_sigma: float
    market: Optional[costopt.MarketParams] = None
    fees: Tuple[costopt.FeeSchedule, ...] = ()
    theta: Optional[float] = None
    kappa_noise: float = 0.0
    x: float = 1.0
    mode: str = "optimizer"
    tw_model: Optional[qtheory.TurnoverWealthModel] = None
    categories: Tuple[Tuple[str, float], ...] = (("individual", 1.0),)
    snapshot_date: date = date(2024, 1, 2)

    def __post_init__(self):
        if self.n_traders < 1:
            raise ValueError("n_traders must be at least 1")
        if self.pv_sigma < 0:
            raise ValueError("pv_sigma must be non-negative")
        if self.kappa_noise < 0:
            raise ValueError("kappa_noise must be non-negative")
        if not 0 < self.x <= 1:
            raise ValueError("x must lie in (0, 1]")
        if self.mode not in MODES:
            raise ValueError("mode must be one of %s" % ", ".join(MODES))
        if self.mode == "optimizer":
            if self.market is None or len(self.fees) not in (1, 2):
                raise ValueError("optimizer mode needs market parameters and one or two fee laws")
            if len(self.fees) == 2 and self.theta is None:
                raise ValueError("two fee regimes need a boundary theta")
            for f in self.fees:
                if f.delta >= 1 or f.C <= 0:
                    raise ValueError("optimizer mode needs 0 <= delta < 1 and C > 0")
        elif self.tw_model is None:
            raise ValueError("turnover-law mode needs a turnover-wealth model")
        names = [c for c, _ in self.categories]
        weights = [w for _, w in self.categories]
        if not names or any(c not in traderdata.CATEGORIES for c in names):
            raise ValueError("categories must be drawn from %s" % ", ".join(traderdata.CATEGORIES))
        if any(w < 0 for w in weights) or sum(weights) <= 0:
            raise ValueError("category weights must be non-negative and not all zero")

    @property
    def n_regimes(self):
        if self.mode == "optimizer":
            return len(self.fees)
        return len(self.tw_model.regimes)

    @property
    def boundary(self):
        return self.theta if self.mode == "optimizer" else self.tw_model.theta

    def regime_of(self, log_pv):
        b = self.boundary
        return 0 if (b is None or log_pv < b) else 1


@dataclass(frozen=True)
class SyntheticTrader:
    trader_id: str
    category: str
    pv: float
    zeta: float
    regime: int
    n_real: float
    n_assets: int
    turnover: float
    clamped: bool
    transactions: Tuple[Tuple[str, int, float, float], ...] = field(repr=False)

    @property
    def invested(self):
        return math.fsum(t[3] for t in self.transactions)


@dataclass(frozen=True)
class Population:
    config: PopulationConfig
    traders: Tuple[SyntheticTrader, ...]

    @property
    def n_clamped(self):
        return sum(t.clamped for t in self.traders)

    @property
    def fraction_q_above_one(self):
        return float(np.mean([t.turnover > t.pv for t in self.traders]))

    def q_values(self):
        return np.array([t.turnover / t.pv for t in self.traders])

    def trade_time(self):
        d = self.config.snapshot_date + timedelta(days=1)
        return datetime.combine(d, time(10, 0), tzinfo=timezone.utc)

    def transactions_csv(self):
        ts = self.trade_time().isoformat()
        buf = io.StringIO()
        buf.write(",".join(traderdata.TRANSACTION_HEADER) + "\n")
        for t in self.traders:
            for asset, volume, price, _ in t.transactions:
                buf.write("%s,%s,%s,%s,stock,buy,%r,%d\n" % (t.trader_id, t.category, ts, asset,
                                                            price, volume))
        return buf.getvalue()

    def snapshots_csv(self):
        d = self.config.snapshot_date.isoformat()
        buf = io.StringIO()
        buf.write(",".join(traderdata.SNAPSHOT_HEADER) + "\n")
        for t in self.traders:
            buf.write("%s,%s,%r\n" % (t.trader_id, d, t.pv))
        return buf.getvalue()

    def traders_csv(self):
        buf = io.StringIO()
        buf.write("trader_id,category,pv,zeta,regime,n_real,n_assets,turnover,clamped\n")
        for t in self.traders:
            buf.write("%s,%s,%r,%r,%d,%r,%d,%r,%d\n" % (t.trader_id, t.category, t.pv, t.zeta,
                                                       t.regime, t.n_real, t.n_assets,
                                                       t.turnover, t.clamped))
        return buf.getvalue()


def derived_tw_model(config):
    """Turnover-wealth law implied by the optimizer generator (integer rounding of N ignored).

    ``log T = a + beta log P_v - zeta`` with ``beta = 1/(2-delta)`` and
    ``a = beta log x - beta log(K Z / 4)``; the noise scale is ``kappa_noise``.
    """
    if config.mode != "optimizer":
        return config.tw_model
    regimes = []
    for f in config.fees:
        d = f.delta
        beta = 1.0 / (2.0 - d)
        # log N = log n_star_asymptotic at x P_v = 1 + alpha log(x P_v)
        c0 = math.log(costopt.n_star_asymptotic(1.0, 1.0, config.market, f))
        a = beta * math.log(config.x) - c0
        regimes.append(qtheory.Regime(a, beta, max(config.kappa_noise, 1e-300)))
    return qtheory.TurnoverWealthModel(tuple(regimes), config.theta)


def _one_trader(config, i, cat_names, cat_cdf):
    rng = np.random.default_rng([int(config.seed), int(i)])
    u_cat, z_pv, z_noise = rng.random(), rng.standard_normal(), rng.standard_normal()
    category = cat_names[int(np.searchsorted(cat_cdf, u_cat, side="right"))]
    log_pv = config.pv_mu + config.pv_sigma * z_pv
    pv = math.exp(log_pv)
    reg = config.regime_of(log_pv)
    if config.mode == "optimizer":
        zeta = config.kappa_noise * z_noise
        n_real = costopt.n_star_asymptotic(config.x, pv, config.market, config.fees[reg]) * math.exp(zeta)
        n = max(1, int(round(n_real)))
        clamped = n_real < 1.0
        turnover = config.x * pv / n
    else:
        r = config.tw_model.regimes[reg]
        zeta = r.xi * z_noise
        turnover = math.exp(r.a + r.beta * log_pv + zeta)
        n_real = pv / turnover
        n = max(1, int(math.floor(n_real)))
        clamped = n_real < 1.0
    vols = 1 + (rng.random(n) * 1000).astype(np.int64)
    txs = tuple(("A%d" % (k + 1), int(v), turnover / float(v), turnover)
                for k, v in enumerate(vols))
    return SyntheticTrader(trader_id="T%07d" % (i + 1), category=category, pv=pv, zeta=zeta,
                           regime=reg, n_real=n_real, n_assets=n, turnover=turnover,
                           clamped=clamped, transactions=txs)


def generate_population(config, threads=None):
    """Draw every trader of the configured population."""
    names = [c for c, _ in config.categories]
    w = np.array([wt for _, wt in config.categories], dtype=float)
    cdf = np.cumsum(w) / w.sum()
    cdf[-1] = 1.0
    threads = thread_count() if threads is None else threads

    def job(i):
        return _one_trader(config, i, names, cdf[:-1])

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            traders = tuple(pool.map(job, range(config.n_traders)))
    else:
        traders = tuple(job(i) for i in range(config.n_traders))
    return Population(config, traders)


# --------------------------------------------------------------------------- #
# Closed-loop validation
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class Estimate:
    name: str
    value: float
    ci: Tuple[float, float]
    theory: float
    tolerance: float
    se: float = float("nan")

    @property
    def passed(self):
        return abs(self.value - self.theory) <= self.tolerance

    def as_dict(self):
        return {"name": self.name, "value": self.value, "ci": list(self.ci), "theory": self.theory,
                "delta": self.value - self.theory, "tolerance": self.tolerance,
                "se": self.se, "pass": self.passed}


@dataclass(frozen=True)
class ValidationReport:
    alpha: Tuple[Estimate, ...]
    beta: Tuple[Estimate, ...]
    chi: Estimate
    delta_eff: Tuple
    thresholds: Optional[Tuple[float, float]]
    single_regime: bool
    n_traders: int
    n_clamped: int

    @property
    def passed(self):
        return all(e.passed for e in self.alpha + self.beta + (self.chi,))

    def as_dict(self):
        return {"alpha": [e.as_dict() for e in self.alpha],
                "beta": [e.as_dict() for e in self.beta],
                "chi": self.chi.as_dict(),
                "delta_eff": list(self.delta_eff),
                "thresholds": None if self.thresholds is None else list(self.thresholds),
                "single_regime": self.single_regime,
                "n_traders": self.n_traders, "n_clamped": self.n_clamped,
                "pass": self.passed}

    def summary(self):
        lines = ["closed-loop validation: %s" % ("PASS" if self.passed else "FAIL"),
                 "traders: %d (clamped to N=1: %d)" % (self.n_traders, self.n_clamped)]
        if self.thresholds is not None:
            lines.append("thresholds: %.4f .. %.4f" % self.thresholds)
        for e in self.alpha + self.beta + (self.chi,):
            lines.append("%-8s %.4f  ci [%.4f, %.4f]  theory %.4f  tol %.4f  %s"
                         % (e.name, e.value, e.ci[0], e.ci[1], e.theory, e.tolerance,
                            "pass" if e.passed else "FAIL"))
        for i, d in enumerate(self.delta_eff):
            lines.append("delta_eff[%d] %s" % (i + 1, "%.4f" % d if isinstance(d, float) else d))
        return "\n".join(lines) + "\n"


class StageError(RuntimeError):
    def __init__(self, stage, err):
        self.stage = stage
        super().__init__("%s stage failed: %s" % (stage, err))


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as e:  # annotate and propagate
        raise StageError(name, e) from e


def _tolerance(se):
    return 0.01 + 3.0 * se


def run_validation(config, population=None, span=0.3, min_traders=2000):
    """Generate, ingest through the CSV path, regress and compare with theory.

    Tolerances are ``0.01 + 3 SE`` around the theoretical exponents.
    """
    if config.n_traders < min_traders:
        raise ValueError("validation needs at least %d traders" % min_traders)
    if config.mode != "optimizer":
        raise ValueError("closed-loop exponents need the optimizer generator")
    pop = population or _stage("generate", generate_population, config)
    txs = _stage("ingest", traderdata.parse_transactions, pop.transactions_csv())
    snaps = _stage("ingest", traderdata.parse_snapshots, pop.snapshots_csv())
    aggs, _ = _stage("aggregate", traderdata.aggregate_all, txs, snaps)

    lt = np.array([a.mean_log_turnover for a in aggs])
    lp = np.array([a.mean_log_pv for a in aggs])
    ltp = np.log([a.phi_turnover for a in aggs])
    ln = np.log([a.n_assets for a in aggs])
    lpp = np.log([a.mean_pv_phi for a in aggs])
    theory = [costopt.exponents(f.delta) for f in config.fees]

    if config.n_regimes == 1:
        f = _stage("regress", regress.ols, lp, lt)
        betas = (Estimate("beta", f.slope, f.slope_ci, theory[0]["beta"], _tolerance(f.slope_se),
                          f.slope_se),)
        fa = _stage("regress", regress.ols, ltp, ln)
        alphas = (Estimate("alpha", fa.slope, fa.slope_ci, theory[0]["alpha"],
                           _tolerance(fa.slope_se), fa.slope_se),)
        thresholds, single = None, True
    else:
        lf = _stage("loess", regress.loess_fit, lp, lt, span=span)
        th = _stage("thresholds", regress.detect_thresholds, lf)
        seg = _stage("regress", regress.fit_double_linear, lp, lt, th.theta1, th.theta2)
        betas = (Estimate("beta1", seg.beta1, seg.ci_beta1, theory[0]["beta"],
                          _tolerance(seg.lower.slope_se), seg.lower.slope_se),
                 Estimate("beta2", seg.beta2, seg.ci_beta2, theory[1]["beta"],
                          _tolerance(seg.upper.slope_se), seg.upper.slope_se))
        lo, hi = lp < th.theta1, lp > th.theta2
        f1 = _stage("regress", regress.ols, ltp[lo], ln[lo])
        f2 = _stage("regress", regress.ols, ltp[hi], ln[hi])
        alphas = (Estimate("alpha1", f1.slope, f1.slope_ci, theory[0]["alpha"],
                           _tolerance(f1.slope_se), f1.slope_se),
                  Estimate("alpha2", f2.slope, f2.slope_ci, theory[1]["alpha"],
                           _tolerance(f2.slope_se), f2.slope_se))
        thresholds, single = (th.theta1, th.theta2), th.single_regime

    fc = _stage("regress", regress.ols, ltp, lpp, through_origin=True)
    chi = Estimate("chi", fc.slope, fc.slope_ci, 1.0, 0.02, fc.slope_se)

    deff = []
    for b in betas:
        try:
            deff.append(costopt.delta_eff(b.value))
        except ValueError as e:
            deff.append(str(e))
    return ValidationReport(alpha=alphas, beta=betas, chi=chi, delta_eff=tuple(deff),
                            thresholds=thresholds, single_regime=single,
                            n_traders=len(aggs), n_clamped=pop.n_clamped)


def validate_q(config, population=None, predictor=None):
    """KS comparison of per-trader ``Q = T / P_v`` with the predicted law.

    ``predictor`` defaults to the configured (or derived) turnover-wealth
    law; passing a different one gives a negative control.
    """
    pop = population or generate_population(config)
    q = pop.q_values()
    model = predictor or derived_tw_model(config)
    pv = LogNormalFit(config.pv_mu, config.pv_sigma)

    class _Pred:
        def cdf(self, v):
            return qtheory.q_cdf(v, model, pv)

    D = ks_statistic(q, _Pred())
    crit = 1.358 / math.sqrt(len(q))
    return {"ks": D, "critical_5pct": crit, "pass": bool(D < crit), "n": int(len(q)),
            "fraction_q_above_one": float(np.mean(q > 1.0)), "n_clamped": pop.n_clamped}


# --------------------------------------------------------------------------- #
# Mapping form (config files and report provenance)
# --------------------------------------------------------------------------- #
def config_from_mapping(d):
    """Build a config from the nested mapping used by config files.

    Keys: ``n_traders``, ``seed``, ``mode``, ``x``, ``kappa_noise``,
    ``theta``, ``snapshot_date``, tables ``pv_law`` (``mu``, ``sigma``),
    ``market``, ``categories`` (name to weight), and arrays of tables
    ``fee`` (``C``, ``delta``) or ``regime`` (``a``, ``beta``, ``xi``).
    """
    d = dict(d)
    known = {"n_traders", "seed", "mode", "x", "kappa_noise", "theta", "snapshot_date",
             "pv_law", "market", "categories", "fee", "regime"}
    extra = sorted(set(d) - known)
    if extra:
        raise ValueError("unknown population keys: %s" % ", ".join(extra))
    for key in ("n_traders", "seed", "pv_law"):
        if key not in d:
            raise ValueError("population config is missing %r" % key)
    pv = d["pv_law"]
    mode = d.get("mode", "optimizer")
    theta = d.get("theta")
    market = costopt.MarketParams(**d["market"]) if "market" in d else None
    fees = tuple(costopt.FeeSchedule(C=float(f["C"]), delta=float(f["delta"]))
                 for f in d.get("fee", ()))
    tw = None
    if d.get("regime"):
        regs = tuple(qtheory.Regime(float(r["a"]), float(r["beta"]), float(r["xi"]))
                     for r in d["regime"])
        tw = qtheory.TurnoverWealthModel(regs, None if len(regs) == 1 else float(theta))
    cats = tuple((str(k), float(v)) for k, v in d.get("categories", {"individual": 1.0}).items())
    snap = d.get("snapshot_date", date(2024, 1, 2))
    if isinstance(snap, str):
        snap = date.fromisoformat(snap)
    return PopulationConfig(
        n_traders=int(d["n_traders"]), seed=int(d["seed"]),
        pv_mu=float(pv["mu"]), pv_sigma=float(pv["sigma"]),
        market=market, fees=fees, theta=None if theta is None else float(theta),
        kappa_noise=float(d.get("kappa_noise", 0.0)), x=float(d.get("x", 1.0)), mode=mode,
        tw_model=tw, categories=cats, snapshot_date=snap)


def config_to_mapping(config):
    """Inverse of :func:`config_from_mapping`, with every default spelled out."""
    out = {"n_traders": config.n_traders, "seed": config.seed, "mode": config.mode,
           "x": config.x, "kappa_noise": config.kappa_noise, "theta": config.theta,
           "snapshot_date": config.snapshot_date.isoformat(),
           "pv_law": {"mu": config.pv_mu, "sigma": config.pv_sigma},
           "categories": {k: v for k, v in config.categories}}
    if config.market is not None:
        m = config.market
        out["market"] = {"expected_market_return": m.expected_market_return,
                         "market_variance": m.market_variance, "risk_free": m.risk_free,
                         "mean_beta": m.mean_beta, "mean_idio_variance": m.mean_idio_variance}
    if config.fees:
        out["fee"] = [{"C": f.C, "delta": f.delta} for f in config.fees]
    if config.tw_model is not None:
        out["regime"] = [{"a": r.a, "beta": r.beta, "xi": r.xi} for r in config.tw_model.regimes]
    return out
