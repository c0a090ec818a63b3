"""Command-line entry point: ``costfolio <subcommand> [options]``.

Every subcommand accepts ``--config FILE`` (TOML). Keys in the file use
the long flag names with underscores; flags given on the command line win.
Outputs go to ``--out DIR`` together with ``manifest.json``.

Exit codes: 0 success, 2 input error, 3 numerical failure, 4 validation
failure. Errors are reported as one JSON object on stderr.
"""

import argparse
import csv
import json
import sys

import numpy as np

from . import __version__, costopt, popsim, qtheory, regress, tailfit, traderdata
from .bootstrap import DEFAULT_B, BootstrapError
from .outputs import RunWriter, csv_text, dumps

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_VALIDATION = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, code, kind, message):
        self.code = code
        self.kind = kind
        super().__init__(message)


INPUT_ERRORS = (traderdata.ParseError, FileNotFoundError, IsADirectoryError, PermissionError,
                tomllib.TOMLDecodeError, json.JSONDecodeError, KeyError, TypeError,
                costopt.UnsupportedRegimeError, ValueError)
NUMERIC_ERRORS = (tailfit.FitError, BootstrapError, qtheory.QuadratureError,
                  qtheory.DivergentIntegralError, costopt.NoRootError, costopt.SolverError,
                  tailfit.InsufficientDataError, tailfit.DegenerateDataError,
                  traderdata.InsufficientDataError, FloatingPointError, ArithmeticError)

DEFAULTS = {
    "fit-dist": {"input": None, "column": None, "family": "lognormal", "bootstrap": DEFAULT_B,
                 "seed": 0, "points": 100, "out": "."},
    "turnover-law": {"transactions": None, "snapshots": None, "category": None, "span": 0.3,
                     "tol": 0.05, "min_points": 10, "out": "."},
    "q": {"params": None, "from_fits": None, "q_min": 1e-6, "q_max": 10.0, "points": 200,
          "out": "."},
    "optimize": {"fees": None, "fee_c": None, "fee_delta": None, "market": None, "pv": None,
                 "lambda": None, "x": None, "bootstrap": DEFAULT_B, "seed": 0, "out": "."},
    "simulate": {"population": None, "seed": None, "n_traders": None, "threads": None,
                 "out": "."},
    "validate": {"population": None, "seed": None, "n_traders": None, "threads": None,
                 "span": 0.3, "out": "."},
}


# --------------------------------------------------------------------------- #
# Argument handling
# --------------------------------------------------------------------------- #
def build_parser():
    p = argparse.ArgumentParser(prog="costfolio",
                                description="Trader-population statistics and cost-aware "
                                            "portfolio optimization.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="TOML file with defaults for this subcommand")
        sp.add_argument("--out", help="output directory")

    s = sub.add_parser("fit-dist", help="fit a distribution family to one CSV column")
    common(s)
    s.add_argument("--input")
    s.add_argument("--column")
    s.add_argument("--family", choices=sorted(tailfit.FAMILIES))
    s.add_argument("--bootstrap", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--points", type=int)

    s = sub.add_parser("turnover-law", help="loess, thresholds and double-linear fit")
    common(s)
    s.add_argument("--transactions")
    s.add_argument("--snapshots")
    s.add_argument("--category", choices=traderdata.CATEGORIES)
    s.add_argument("--span", type=float)
    s.add_argument("--tol", type=float)
    s.add_argument("--min-points", type=int)

    s = sub.add_parser("q", help="density and CDF of the traded wealth fraction")
    common(s)
    s.add_argument("--params", help="JSON file or inline JSON object")
    s.add_argument("--from-fits", nargs=2, metavar=("PV_REPORT", "LAW_REPORT"))
    s.add_argument("--q-min", type=float)
    s.add_argument("--q-max", type=float)
    s.add_argument("--points", type=int)

    s = sub.add_parser("optimize", help="optimal invested fraction and number of assets")
    common(s)
    s.add_argument("--fees", help="fee grid CSV (lower_bound,upper_bound,fee)")
    s.add_argument("--fee-c", type=float)
    s.add_argument("--fee-delta", type=float)
    s.add_argument("--market", help="JSON file or inline JSON object")
    s.add_argument("--pv", type=float)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--lambda", type=float, dest="lambda")
    g.add_argument("--x", type=float)
    s.add_argument("--bootstrap", type=int)
    s.add_argument("--seed", type=int)

    for name, text in (("simulate", "generate a synthetic population"),
                       ("validate", "generate, re-estimate and compare with theory")):
        s = sub.add_parser(name, help=text)
        common(s)
        s.add_argument("--population", help="TOML population file (defaults to --config)")
        s.add_argument("--seed", type=int)
        s.add_argument("--n-traders", type=int)
        s.add_argument("--threads", type=int)
        if name == "validate":
            s.add_argument("--span", type=float)
    return p


def load_toml(path):
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def resolve(command, args):
    """Defaults, then config file, then explicit flags."""
    cfg = dict(DEFAULTS[command])
    file_cfg = {}
    if args.config:
        file_cfg = load_toml(args.config)
        for k, v in file_cfg.items():
            key = k.replace("-", "_")
            if key in cfg:
                cfg[key] = v
            elif command not in ("simulate", "validate"):  # population keys are checked later
                raise CliError(EXIT_INPUT, "UnknownKey",
                               "unknown key %r in %s" % (k, args.config))
    for k in cfg:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg, file_cfg


def _echo(cfg):
    """Resolved parameters for the report; the output location does not affect results."""
    return {k: v for k, v in cfg.items() if k != "out"}


def _require(cfg, *keys):
    for k in keys:
        if cfg.get(k) is None:
            raise CliError(EXIT_INPUT, "MissingArgument", "--%s is required" % k.replace("_", "-"))


def _json_arg(value):
    """Inline JSON text, a JSON file path, or an already-parsed mapping."""
    if isinstance(value, dict):
        return value
    text = value.strip()
    if text.startswith("{"):
        return json.loads(text)
    with open(value, "r", encoding="utf-8") as fh:
        return json.load(fh)


# --------------------------------------------------------------------------- #
# Subcommands
# --------------------------------------------------------------------------- #
def read_column(path, column):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise traderdata.ParseError(1, None, "empty file")
        header = [h.strip() for h in header]
        if column is None:
            if len(header) != 1:
                raise CliError(EXIT_INPUT, "MissingArgument",
                               "--column is required for multi-column input")
            j = 0
        elif column in header:
            j = header.index(column)
        else:
            raise traderdata.ParseError(1, column, "no such column")
        out = []
        for row in reader:
            if not row:
                continue
            try:
                out.append(float(row[j]))
            except (ValueError, IndexError):
                raise traderdata.ParseError(reader.line_num, header[j],
                                            "not a number: %r" % (row[j:j + 1] or [""])[0]) from None
    return np.asarray(out)


def cmd_fit_dist(cfg, file_cfg):
    _require(cfg, "input")
    data = read_column(cfg["input"], cfg["column"])
    fam = cfg["family"]
    model = tailfit.fit(data, fam, B=int(cfg["bootstrap"]), seed=int(cfg["seed"]))
    report = tailfit.fit_report(model, data, seed=int(cfg["seed"]), B=int(cfg["bootstrap"]))
    report["config"] = _echo(cfg)
    grid, emp, mod = tailfit.survival_curve(model, data, points=int(cfg["points"]))
    w = RunWriter(cfg["out"], "fit-dist", cfg, inputs=[cfg["input"]], seed=cfg["seed"],
                  version=__version__)
    w.add("fit.json", dumps(report))
    w.add("survival.csv", csv_text(("x", "empirical_sf", "model_sf"), zip(grid, emp, mod)))
    return w


def turnover_law_fit(transactions, snapshots, category=None, span=0.3, tol=0.05, min_points=10):
    """Per-trader aggregates, loess, thresholds and the one- or two-regime fit."""
    txs = [t for t in transactions if category is None or t.category == category]
    aggs, skipped = traderdata.aggregate_all(txs, snapshots)
    if not aggs:
        raise traderdata.InsufficientDataError("no trader with usable data")
    x = np.array([a.mean_log_pv for a in aggs])
    y = np.array([a.mean_log_turnover for a in aggs])
    lf = regress.loess_fit(x, y, span=span)
    th = regress.detect_thresholds(lf, tol=tol)
    report = {"n_traders": len(aggs), "n_skipped": len(skipped), "category": category,
              "thresholds": [th.theta1, th.theta2], "single_regime": th.single_regime}
    if th.single_regime:
        f = regress.ols(x, y)
        report["regimes"] = [{"beta": f.slope, "a": f.intercept, "xi": f.xi, "r2": f.r2, "n": f.n,
                              "ci_beta": list(f.slope_ci), "ci_a": list(f.intercept_ci)}]
        report["residuals"] = regress.residual_normality(f)
    else:
        seg = regress.fit_double_linear(x, y, th.theta1, th.theta2, min_points=min_points)
        report.update(regress.segmented_report(seg))
        report["residuals"] = regress.residual_normality(seg)
    return report, lf


def cmd_turnover_law(cfg, file_cfg):
    _require(cfg, "transactions", "snapshots")
    with open(cfg["transactions"], "rb") as fh:
        txs = traderdata.parse_transactions(fh.read())
    with open(cfg["snapshots"], "rb") as fh:
        snaps = traderdata.parse_snapshots(fh.read())
    report, lf = turnover_law_fit(txs, snaps, cfg["category"], float(cfg["span"]),
                                  float(cfg["tol"]), int(cfg["min_points"]))
    report["config"] = _echo(cfg)
    w = RunWriter(cfg["out"], "turnover-law", cfg,
                  inputs=[cfg["transactions"], cfg["snapshots"]], version=__version__)
    w.add("turnover_law.json", dumps(report))
    w.add("loess.csv", csv_text(("log_pv", "fitted", "slope"), zip(lf.x, lf.fitted, lf.slope)))
    return w


def _pv_from(spec):
    if "mu" in spec and "sigma" in spec and "family" not in spec:
        return tailfit.LogNormalFit(float(spec["mu"]), float(spec["sigma"]))
    return tailfit.model_from_params(spec["family"], spec["params"])


def _law_from(spec):
    regs = tuple(qtheory.Regime(float(r["a"]), float(r["beta"]), float(r["xi"]))
                 for r in spec["regimes"])
    theta = spec.get("theta")
    if theta is None and len(regs) == 2:
        th = spec.get("thresholds")
        theta = 0.5 * (th[0] + th[1]) if th else None
    return qtheory.TurnoverWealthModel(regs, None if len(regs) == 1 else float(theta))


def cmd_q(cfg, file_cfg):
    inputs = []
    if cfg["params"] is not None:
        params = _json_arg(cfg["params"])
        if isinstance(cfg["params"], str) and not cfg["params"].lstrip().startswith("{"):
            inputs.append(cfg["params"])
        pv = _pv_from(params["pv"])
        law = _law_from(params)
    elif cfg["from_fits"] is not None:
        pv_path, law_path = cfg["from_fits"]
        inputs += [pv_path, law_path]
        pv = _pv_from(_json_arg(pv_path))
        law = _law_from(_json_arg(law_path))
    else:
        raise CliError(EXIT_INPUT, "MissingArgument", "--params or --from-fits is required")
    q = np.geomspace(float(cfg["q_min"]), float(cfg["q_max"]), int(cfg["points"]))
    cdf = qtheory.q_cdf(q, law, pv)
    pdf = qtheory.q_pdf(q, law, pv)
    report = {"pv": {"family": tailfit.family_name(pv), "params": dict(pv.params)},
              "regimes": [{"a": r.a, "beta": r.beta, "xi": r.xi} for r in law.regimes],
              "theta": law.theta, "moments": {}, "config": _echo(cfg)}
    for n in (1, 2):
        try:
            report["moments"][str(n)] = qtheory.q_moment(n, law, pv)
        except qtheory.DivergentIntegralError as e:
            report["moments"][str(n)] = None
            report.setdefault("divergent", []).append(str(e))
    if len(law.regimes) == 1 and isinstance(pv, tailfit.LogNormalFit):
        cf = qtheory.closed_form_q(law, pv.mu, pv.sigma)
        report["closed_form"] = {"M": cf.M, "S": cf.S}
    w = RunWriter(cfg["out"], "q", cfg, inputs=inputs, version=__version__)
    w.add("q.json", dumps(report))
    w.add("q_curves.csv", csv_text(("q", "cdf", "pdf"), zip(q, cdf, pdf)))
    return w


def cmd_optimize(cfg, file_cfg):
    _require(cfg, "market", "pv")
    market = costopt.MarketParams(**_json_arg(cfg["market"]))
    inputs = []
    if isinstance(cfg["market"], str) and not cfg["market"].lstrip().startswith("{"):
        inputs.append(cfg["market"])
    report = {"config": _echo(cfg)}
    if cfg["fees"] is not None:
        inputs.append(cfg["fees"])
        with open(cfg["fees"], "r", encoding="utf-8") as fh:
            segs = costopt.load_fee_segments(fh)
        ff = costopt.fit_fee_powerlaw(segs, B=int(cfg["bootstrap"]), seed=int(cfg["seed"]))
        schedule = costopt.FeeSchedule(C=ff.C, delta=min(max(ff.delta, 0.0), 1.0))
        report["fee_fit"] = {"C": ff.C, "delta": ff.delta, "f_max": ff.f_max,
                             "ci_C": ff.ci_C, "ci_delta": ff.ci_delta,
                             "n_segments": ff.n_segments}
    elif cfg["fee_c"] is not None and cfg["fee_delta"] is not None:
        schedule = costopt.FeeSchedule(C=float(cfg["fee_c"]), delta=float(cfg["fee_delta"]))
    else:
        raise CliError(EXIT_INPUT, "MissingArgument", "--fees or --fee-c with --fee-delta is required")
    pv = float(cfg["pv"])
    report["exponents"] = costopt.exponents(schedule.delta)
    if cfg["lambda"] is not None:
        alloc = costopt.solve_joint(float(cfg["lambda"]), pv, market, schedule)
        report["allocation"] = alloc
    elif cfg["x"] is not None:
        ns = costopt.solve_n_star(float(cfg["x"]), pv, market, schedule)
        report["n_star"] = ns
        report["n_star_asymptotic"] = costopt.n_star_asymptotic(float(cfg["x"]), pv, market, schedule)
    else:
        raise CliError(EXIT_INPUT, "MissingArgument", "--lambda or --x is required")
    w = RunWriter(cfg["out"], "optimize", cfg, inputs=inputs, seed=cfg["seed"],
                  version=__version__)
    w.add("optimize.json", dumps(report))
    return w


def _population(cfg, file_cfg):
    src = cfg["population"]
    mapping = load_toml(src) if src else dict(file_cfg)
    # run options may share the file with the population tables
    for k in ("out", "threads", "span", "population"):
        mapping.pop(k, None)
    if cfg["seed"] is not None:
        mapping["seed"] = cfg["seed"]
    if cfg["n_traders"] is not None:
        mapping["n_traders"] = cfg["n_traders"]
    config = popsim.config_from_mapping(mapping)
    return config, ([src] if src else [])


def _write_population(w, pop):
    w.add("transactions.csv", pop.transactions_csv())
    w.add("snapshots.csv", pop.snapshots_csv())
    w.add("traders.csv", pop.traders_csv())


def cmd_simulate(cfg, file_cfg):
    config, inputs = _population(cfg, file_cfg)
    pop = popsim.generate_population(config, threads=cfg["threads"])
    resolved = dict(cfg, population_config=popsim.config_to_mapping(config))
    resolved.pop("threads")  # outputs do not depend on it
    w = RunWriter(cfg["out"], "simulate", resolved, inputs=inputs, seed=config.seed,
                  version=__version__)
    _write_population(w, pop)
    w.add("summary.json", dumps({"n_traders": len(pop.traders), "n_clamped": pop.n_clamped,
                                 "n_transactions": sum(t.n_assets for t in pop.traders),
                                 "fraction_q_above_one": pop.fraction_q_above_one}))
    return w


def cmd_validate(cfg, file_cfg):
    config, inputs = _population(cfg, file_cfg)
    pop = popsim.generate_population(config, threads=cfg["threads"])
    resolved = dict(cfg, population_config=popsim.config_to_mapping(config))
    resolved.pop("threads")
    w = RunWriter(cfg["out"], "validate", resolved, inputs=inputs, seed=config.seed,
                  version=__version__)
    _write_population(w, pop)
    if config.mode == "optimizer":
        rep = popsim.run_validation(config, pop, span=float(cfg["span"]))
        ok = rep.passed
        w.add("validation.json", dumps(rep.as_dict()))
        w.add("validation.txt", rep.summary())
    else:
        q = popsim.validate_q(config, pop)
        ok = q["pass"]
        w.add("validation.json", dumps({"q": q, "pass": ok}))
        w.add("validation.txt", "Q distribution check: %s (KS %.5f, 5%% critical %.5f, n=%d)\n"
              % ("PASS" if ok else "FAIL", q["ks"], q["critical_5pct"], q["n"]))
    w.failed = not ok
    return w


COMMANDS = {"fit-dist": cmd_fit_dist, "turnover-law": cmd_turnover_law, "q": cmd_q,
            "optimize": cmd_optimize, "simulate": cmd_simulate, "validate": cmd_validate}


def _error(code, kind, message, stage=None):
    payload = {"error": kind, "message": message, "exit_code": code}
    if stage:
        payload["stage"] = stage
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg, file_cfg = resolve(args.command, args)
        writer = COMMANDS[args.command](cfg, file_cfg)
        if args.config:
            writer.add_input(args.config)
        writer.commit()
    except CliError as e:
        return _error(e.code, e.kind, str(e))
    except popsim.StageError as e:
        cause = e.__cause__
        code = EXIT_INPUT if isinstance(cause, traderdata.ParseError) else EXIT_NUMERIC
        return _error(code, type(cause).__name__, str(e), stage=e.stage)
    except NUMERIC_ERRORS as e:
        return _error(EXIT_NUMERIC, type(e).__name__, str(e))
    except INPUT_ERRORS as e:
        return _error(EXIT_INPUT, type(e).__name__, str(e))
    except OSError as e:
        return _error(EXIT_INPUT, type(e).__name__, str(e))
    if getattr(writer, "failed", False):
        return _error(EXIT_VALIDATION, "ValidationFailed",
                      "estimates fall outside their tolerances; see validation.txt")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
