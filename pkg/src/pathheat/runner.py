"""Scenario validation, suite orchestration and report emission.

Each suite returns check records, CSV tables and figure names. ``run`` writes
``report.json`` plus the tables and figures into the output directory; the
report is a pure function of (suite, params, seed) apart from ``wall_time``
fields.
"""

import copy
import csv
import json
import math
import platform
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import clark_ocone as co
from . import cylindrical as cyl
from . import flows, plotting, regcalc, smooth
from .errors import PathHeatError, ScenarioError
from .paths import SampledPath, load_path
from .regcalc import BVFunction, IntervalSpec, Mode, density_measure

SCHEMA_VERSION = 1
SUITES = ("integrate", "cylindrical", "flow-check", "smooth", "clark-ocone")

_ONE = {"kind": "poly", "coef": [1.0]}
_S = {"kind": "poly", "coef": [0.0, 1.0]}

DEFAULTS = {
    "integrate": {"n_cases": 50, "degree": 4, "N": 64, "T": 1.0},
    "cylindrical": {
        "T": 1.0, "N": 256, "n_points": 20, "t_max": 0.9,
        "specs": [
            {"name": "square", "phi": [_ONE], "f": "square", "sigma": 1.0, "tolerance": 1e-6},
            {"name": "sum2", "phi": [_ONE, _S], "f": "sum2", "sigma": 1.0, "tolerance": 1e-6},
            {"name": "call", "phi": [_ONE], "f": "call", "strike": 0.0, "sigma": 1.0,
             "tolerance": 1e-5},
        ],
        "bachelier_grid": 20, "martingale_paths": 10_000, "martingale_N": 256,
        "sweep_times": 11, "sweep_scales": [0.0, 0.5, 1.0, 2.0],
    },
    "flow-check": {
        "T": 1.0, "N": 256, "sigma": 1.0, "n_tuples": 100, "ks_paths": 10_000,
        "ks_s": 0.25, "ks_t": 0.75, "markov_sigma": 0.3, "markov_drift": -1.0,
        "markov_grids": [32, 64, 128], "markov_paths": 64,
    },
    "smooth": {
        "T": 1.0, "N": 256, "sigma": 1.0, "t": 0.5, "eta": "wave", "n_paths": 20_000,
        "oracle_paths": 100_000,
        "functionals": [
            {"kind": "quadratic", "g": [_ONE]},
            {"kind": "cubic", "g": [{"kind": "cos", "freq": 1.5, "phase": 0.2}]},
        ],
        "martingale_paths": 10_000, "martingale_N": 32,
    },
    "clark-ocone": {
        "T": 1.0, "sigma": 1.0, "n_paths": 10_000, "N_list": [128, 256, 512, 1024],
        "hurst": 0.75, "fbm_N": 1024, "linear_N": 128, "quadratic_tolerance": 0.05,
        "fbm_tolerance": 0.07,
    },
}

_TYPES = {
    "integrate": {"n_cases": int, "degree": int, "N": int, "T": float},
    "cylindrical": {"T": float, "N": int, "n_points": int, "t_max": float, "specs": list,
                    "bachelier_grid": int, "martingale_paths": int, "martingale_N": int,
                    "sweep_times": int, "sweep_scales": list},
    "flow-check": {"T": float, "N": int, "sigma": float, "n_tuples": int, "ks_paths": int,
                   "ks_s": float, "ks_t": float, "markov_sigma": float,
                   "markov_drift": float, "markov_grids": list, "markov_paths": int},
    "smooth": {"T": float, "N": int, "sigma": float, "t": float, "eta": (str, dict),
               "n_paths": int, "oracle_paths": int, "functionals": list,
               "martingale_paths": int, "martingale_N": int},
    "clark-ocone": {"T": float, "sigma": float, "n_paths": int, "N_list": list,
                    "hurst": float, "fbm_N": int, "linear_N": int,
                    "quadratic_tolerance": float, "fbm_tolerance": float},
}


# -- scenario ----------------------------------------------------------------

def validate(suite, params):
    """Merged parameters for ``suite``; unknown keys and wrong types are rejected."""
    if suite not in SUITES:
        raise ScenarioError(f"unknown suite {suite!r}", field="suite", allowed=list(SUITES))
    if params is None:
        params = {}
    if not isinstance(params, dict):
        raise ScenarioError("suite parameters must be a JSON object", field=suite)
    types = _TYPES[suite]
    merged = copy.deepcopy(DEFAULTS[suite])
    for key, value in params.items():
        if key not in types:
            raise ScenarioError(f"unknown parameter {key!r} for suite {suite!r}",
                                field=f"{suite}.{key}", allowed=sorted(types))
        want = types[key]
        ok = isinstance(value, want) and not isinstance(value, bool)
        if want is float and isinstance(value, int) and not isinstance(value, bool):
            value, ok = float(value), True
        if not ok:
            name = want.__name__ if isinstance(want, type) else "/".join(w.__name__ for w in want)
            raise ScenarioError(f"parameter {suite}.{key} must be {name}",
                                field=f"{suite}.{key}", got=type(value).__name__)
        merged[key] = value
    for key in ("N", "n_paths", "n_cases", "n_points", "n_tuples", "ks_paths"):
        if key in merged and merged[key] < 2:
            raise ScenarioError(f"parameter {suite}.{key} must be at least 2",
                                field=f"{suite}.{key}")
    return merged


def load_config(path):
    """Parse a scenario file; JSON errors carry line and column."""
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: {exc.msg} at line {exc.lineno} column {exc.colno}",
                            field="config", line=exc.lineno, column=exc.colno) from None


def split_config(suite, config):
    """Per-suite parameter dicts from a config that is either flat or keyed by suite."""
    config = config or {}
    if not isinstance(config, dict):
        raise ScenarioError("config must be a JSON object", field="config")
    names = SUITES if suite == "all" else (suite,)
    keyed = any(k in SUITES for k in config)
    if suite == "all" and config and not keyed:
        raise ScenarioError("config for 'all' must be keyed by suite name", field="config")
    if keyed or suite == "all":
        extra = sorted(set(config) - set(SUITES))
        if extra:
            raise ScenarioError(f"unknown suite key {extra[0]!r}", field=extra[0])
        return {n: validate(n, config.get(n)) for n in names}
    return {suite: validate(suite, config)}


# -- records -----------------------------------------------------------------

def check(name, reference, value, tolerance, comparison="le", std_error=None, **extra):
    """One report record; ``le`` means ``|value| <= tolerance``, ``ge`` means ``value >= tolerance``."""
    value = float(value)
    if comparison == "le":
        ok = math.isfinite(value) and abs(value) <= tolerance
    else:
        ok = math.isfinite(value) and value >= tolerance
    rec = {"name": name, "reference": reference, "value": value, "tolerance": float(tolerance),
           "comparison": comparison, "pass": bool(ok)}
    if std_error is not None:
        rec["std_error"] = float(std_error)
        rec["statistical"] = True
    rec.update(extra)
    return rec


def failed(name, reference, exc):
    payload = exc.to_dict() if isinstance(exc, PathHeatError) else {
        "code": "INTERNAL", "message": f"{type(exc).__name__}: {exc}"}
    return {"name": name, "reference": reference, "value": None, "tolerance": None,
            "comparison": None, "pass": False, "error": payload}


class Outputs:
    """Collects the tables and figures a suite writes into the output directory."""

    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.tables, self.figures = [], []

    def path(self, name):
        return self.dir / name

    def table(self, name, header, rows):
        p = self.path(name)
        p.parent.mkdir(parents=True, exist_ok=True)
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([_cell(r[h]) for h in header])
        self.tables.append(p.name)

    def figure(self, fn, name, *args, **kwargs):
        try:
            self.figures.append(fn(*args, path=self.path(name), **kwargs))
        except Exception as exc:  # figures never decide a verdict
            self.figures.append(f"{name}: not rendered ({type(exc).__name__})")


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


# -- suites ------------------------------------------------------------------

def polynomial_case(rng, degree, N, T, mode, f_bv):
    """Random polynomial density and integrand on a random subinterval of [-T, 0].

    Both are handed over as grid samples only, so every route integrates the same
    linear interpolants.
    """
    pm = np.polynomial.Polynomial(rng.normal(size=rng.integers(1, degree + 2)))
    pf = np.polynomial.Polynomial(rng.normal(size=rng.integers(1, degree + 2)))
    x = -T + (T / N) * np.arange(N + 1)
    mu = density_measure(SampledPath(T, pm(x)))
    f = BVFunction(SampledPath(T, pf(x)), is_bv=f_bv)
    k = np.sort(rng.choice(N + 1, size=2, replace=False))
    return mu, f, IntervalSpec(float(x[k[0]]), float(x[k[1]]), mode)


_ROUTES = (("(454)", Mode.OPEN, True), ("by_parts_closed", Mode.CLOSED, True),
           ("by_parts_open", Mode.OPEN, False))


def suite_integrate(p, seed, out):
    rng = np.random.default_rng(seed)
    rows, ratios, slopes, curves = [], [], [], []
    sample = None
    for i in range(p["n_cases"]):
        label, mode, f_bv = _ROUTES[i % 3]
        mu, f, iv = polynomial_case(rng, p["degree"], p["N"], p["T"], mode, f_bv)
        cf, case = regcalc.closed_form(mu, f, iv)
        table = regcalc.eps_table(mu, f, iv)
        lim, spread = regcalc.richardson(table)
        floor = regcalc._ROUNDING * regcalc._scale(mu, f, iv) / table[-1][0]
        err = float(max(spread, floor))
        curve = regcalc.convergence_errors(mu, f, iv, cf)
        curves.append(curve)
        slope = (float(np.polyfit(np.log(curve[0]), np.log(curve[1]), 1)[0])
                 if curve[0].size >= 2 else math.inf)
        ratios.append(abs(cf - lim) / (10.0 * err))
        slopes.append(slope)
        rows.append({"case": i, "route": case, "a": iv.a, "b": iv.b, "mode": iv.mode.value,
                     "closed_form": cf, "eps_limit": lim, "error_estimate": err,
                     "slope": slope})
        if sample is None and abs(table[0][1] - cf) > 0:
            sample = (table, cf)
    checks = [
        check("closed_form_vs_eps_limit",
              "closed forms and the eps-limit of the regularized integral agree",
              max(ratios), 1.0, cases=len(ratios)),
        # one slope for the whole batch with a separate intercept per case; single
        # cases can sit in a pre-asymptotic regime when the O(eps) coefficient
        # nearly cancels, so their own slopes are reported but not gated
        check("eps_convergence_slope", "fitted slope of |I(eps) - limit| against eps",
              regcalc.pooled_slope(curves), 0.9, comparison="ge",
              min_case_slope=min(slopes),
              cases_below=sum(1 for s in slopes if s < 0.9),
              exact_cases=sum(1 for s in slopes if s == math.inf)),
    ]
    gaps = []
    bound_rows = []
    for i in range(p["n_cases"]):
        mu, f, iv = polynomial_case(rng, p["degree"], p["N"], p["T"], Mode.OPEN, True)
        open_v = regcalc.forward_integral(mu, f, iv).value
        closed_v = regcalc.forward_integral(mu, f, IntervalSpec(iv.a, iv.b, Mode.CLOSED)).value
        expect = float(mu.density(iv.a) * f.path(iv.a))
        gaps.append(abs(closed_v - open_v - expect))
        bound_rows.append({"case": i, "a": iv.a, "b": iv.b, "closed_minus_open": closed_v - open_v,
                           "mu_a_f_a": expect})
    checks.append(check("open_closed_boundary", "CLOSED - OPEN = mu(a) f(a)", max(gaps), 1e-10,
                        cases=len(gaps)))
    out.table("integrate_cases.csv", list(rows[0]), rows)
    out.table("integrate_boundary.csv", list(bound_rows[0]), bound_rows)
    if sample:
        out.figure(plotting.eps_convergence, "integrate_eps.png", sample[0], sample[1])
    return checks, {}


def _random_eta(rng, T, N):
    a = rng.normal(size=4)
    return SampledPath.from_function(
        lambda x: a[0] + a[1] * np.sin((2 + abs(a[3])) * x) + a[2] * x, T, N)


def _cyl_spec(cfg, T, N):
    pf = cyl.payoff(cfg["f"], n=len(cfg["phi"]), strike=cfg.get("strike", 0.0),
                    table=cfg.get("table"))
    basis = tuple(cyl.basis_from_config(b) for b in cfg["phi"])
    return cyl.CylindricalSpec(basis, pf, float(cfg.get("sigma", 1.0)), T, N)


def _martingale_checks(rows):
    return [check(f"martingale_t{r['t']:g}", "E u(t, sigma W_t) = u(0, 0)", abs(r["deviation"]),
                  3.0 * r["se"] + 1e-12 * (1.0 + abs(r["u0"])), std_error=r["se"], signed=r["deviation"])
            for r in rows]


def suite_cylindrical(p, seed, out):
    from scipy.stats import norm

    T, N = p["T"], p["N"]
    rng = np.random.default_rng(seed)
    checks, rows = [], []
    k_max = int(p["t_max"] * N)
    for cfg in p["specs"]:
        name = cfg.get("name", cfg["f"])
        try:
            spec = _cyl_spec(cfg, T, N)
            worst = 0.0
            for _ in range(p["n_points"]):
                t = int(rng.integers(0, k_max + 1)) * T / N
                r = cyl.residual_cyl(spec, t, _random_eta(rng, T, N))
                worst = max(worst, abs(r))
                rows.append({"spec": name, "t": t, "residual": r})
            checks.append(check(f"residual_{name}", "classical solution: L u = 0",
                                worst, cfg.get("tolerance", 1e-6), points=p["n_points"]))
        except Exception as exc:
            checks.append(failed(f"residual_{name}", "classical solution: L u = 0", exc))
    out.table("cylindrical_residuals.csv", ["spec", "t", "residual"], rows)
    out.figure(plotting.residual_scatter, "cylindrical_residuals.png", rows)

    one = cyl.poly_basis([1.0])
    call = cyl.CylindricalSpec((one,), cyl.payoff("call"), 1.0, T, N)
    m = p["bachelier_grid"]
    worst = 0.0
    for t in np.linspace(0.0, 0.95 * T, m):
        s = math.sqrt(T - t)
        for y in np.linspace(-2.0, 2.0, m):
            exact = y * norm.cdf(y / s) + s * norm.pdf(y / s)
            worst = max(worst, abs(cyl.psi(call, float(t), [y]) - exact))
    checks.append(check("bachelier_oracle", "Psi for max(y, 0) equals the normal call price",
                        worst, 1e-6, grid=[m, m]))

    worst = 0.0
    spec2 = _cyl_spec(DEFAULTS["cylindrical"]["specs"][1], T, N)
    for _ in range(20):
        t = float(rng.uniform(0.0, 0.9 * T))
        g = cyl.gram(spec2, t)
        z = rng.normal(size=2)
        dt, _, hess = cyl.gaussian_dp(g, spec2.phi(t), z)
        ph = spec2.phi(t)
        worst = max(worst, abs(dt + 0.5 * ph @ hess @ ph))
    checks.append(check("kernel_heat_identity", "d_t p + 1/2 phi' D^2 p phi = 0", worst, 1e-9))

    sq = _cyl_spec(DEFAULTS["cylindrical"]["specs"][0], T, N)
    mart = cyl.martingale_check(sq, [0.25 * T, 0.5 * T, 0.75 * T], p["martingale_paths"], seed,
                                N=p["martingale_N"])
    checks += _martingale_checks(mart)
    for r in mart:
        r["solver"] = "cylindrical"
    out.table("cylindrical_martingale.csv", ["solver", "t", "mean", "u0", "deviation", "se"], mart)
    out.figure(plotting.martingale_bars, "cylindrical_martingale.png", mart)

    sweep = []
    base = SampledPath.from_function(lambda x: np.sin(3 * x) + 0.5, T, N)
    for t in np.linspace(0.0, T, p["sweep_times"]):
        t = round(float(t) * N / T) * T / N
        for c in p["sweep_scales"]:
            eta = SampledPath(T, float(c) * base.values)
            sweep.append({"spec": "call", "t": t, "scale": float(c), "u": cyl.u_cyl(call, t, eta)})
    out.table("cylindrical_sweep.csv", ["spec", "t", "scale", "u"], sweep)
    out.figure(plotting.value_sweep, "cylindrical_sweep.png", sweep)
    return checks, {}


def suite_flow(p, seed, out):
    T, N, sigma = p["T"], p["N"], p["sigma"]
    rng = np.random.default_rng(seed)
    fp = flows.FlowParams(T, sigma, N, seed)
    worst, cont, growth = 0.0, math.inf, math.inf
    for i in range(p["n_tuples"]):
        w = flows.sample_brownian(fp, i)
        eta = _random_eta(rng, T, N)
        s, t, r = (np.sort(rng.integers(0, N + 1, 3)) * T / N).tolist()
        worst = max(worst, flows.check_flow_property(
            s, t, r, eta, w, lambda a, b, e, ww: flows.flow_brownian(a, b, e, ww, sigma)))
        cont = min(cont, flows.continuity_margin(s, t, r, eta, w, sigma))
        growth = min(growth, flows.growth_margin(s, eta, w, sigma))
    checks = [
        check("flow_property", "Y_r^{s,eta} = Y_r^{t, Y_t^{s,eta}} (Brownian flow)", worst, 1e-12,
              tuples=p["n_tuples"]),
        check("continuity_margin", "||Y_t - Y_t'|| <= 2 w_eta + 2 sigma w_W", cont, 0.0, "ge"),
        check("growth_margin", "||Y_T^{t,eta}|| <= 2 (1 + ||eta|| + sigma sup|W|)", growth, 0.0,
              "ge"),
    ]
    w = flows.sample_brownian(fp, 0)
    eta = _random_eta(rng, T, N)
    pm = flows.FlowParams(T, p["markov_sigma"], N, seed)
    s, t = 0.25 * T, 0.75 * T
    gap = np.max(np.abs(flows.flow_markovian(s, t, eta, pm, w).values
                        - flows.flow_brownian(s, t, eta, w, p["markov_sigma"]).values))
    checks.append(check("markov_equals_brownian", "constant sigma, zero drift: flows coincide",
                        gap, 0.0))
    drift = p["markov_drift"]
    pc = flows.FlowParams(T, p["markov_sigma"], N, seed, drift=lambda _, x: drift * x)
    conv = flows.markovian_convergence(pc, 0.0, 0.5 * T, T, 1.0, tuple(p["markov_grids"]),
                                       p["markov_paths"])
    dev = max(abs(r["ratio"] - 2.0) / 2.0 for r in conv if "ratio" in r)
    checks.append(check("markov_halving", "Euler flow deviation halves when N doubles", dev, 0.2,
                        ratios=[r["ratio"] for r in conv if "ratio" in r]))
    out.table("flow_markov_convergence.csv", ["N", "deviation", "se"], conv)
    out.figure(plotting.convergence, "flow_markov_convergence.png", conv, y="deviation")
    ks_eta = SampledPath.from_function(lambda x: np.sin(4 * x) + 0.5, T, N)
    ks = flows.check_time_homogeneity(p["ks_s"], p["ks_t"], ks_eta, p["ks_paths"], sigma, seed)
    checks.append(check("time_homogeneity_ks", "Y_t^{s,eta} ~ Y_{t-s}^{0,eta} (two-sample KS)",
                        ks["max_ks"], ks["critical"], alpha=ks["alpha"]))
    out.table("flow_ks_table.csv", ["x", "ks"], ks["probes"])
    out.figure(plotting.ks_bars, "flow_ks.png", ks["probes"], ks["critical"])
    summary = {"flow_property_max_dev": worst, "ks_table": ks["probes"],
               "continuity_margin": cont}
    return checks, summary


def eta_from_config(cfg, T, N):
    """Named path (``zero``, ``wave``, ``ramp``) or ``{"csv": stem}`` written by ``save_path``."""
    if isinstance(cfg, dict):
        eta = load_path(cfg["csv"])
        if not isinstance(eta, SampledPath) or eta.N != N or eta.T != T:
            raise ScenarioError("eta file must hold a path on the suite grid", field="eta")
        return eta
    named = {"zero": lambda x: 0.0 * x, "wave": lambda x: 0.3 + np.sin(3 * x) + 0.5 * x,
             "ramp": lambda x: 1.0 + x}
    if cfg not in named:
        raise ScenarioError(f"unknown path {cfg!r}", field="eta", allowed=sorted(named))
    return SampledPath.from_function(named[cfg], T, N)


def suite_smooth(p, seed, out):
    T, N, sigma, t, n = p["T"], p["N"], p["sigma"], p["t"], p["n_paths"]
    eta = eta_from_config(p["eta"], T, N)
    g = SampledPath.from_function(lambda x: np.cos(2 * x) + x, T, N)
    checks, rows = [], []
    for cfg in p["functionals"]:
        name = cfg["kind"]
        try:
            H = smooth.functional_from_config(cfg, T)
            sp = smooth.fd_space_check(H, t, eta, g, n, seed, sigma)
            tm = smooth.fd_time_check(H, t, eta, n, seed, sigma)
            checks.append(check(f"du_fd_{name}", "<Du, g> equals the CRN central difference",
                                abs(sp["diff"]), sp["tolerance"], std_error=sp["se"]))
            checks.append(check(f"dtu_fd_{name}", "d_t u equals the CRN time difference",
                                abs(tm["diff"]), tm["tolerance"], std_error=tm["se"]))
            res = smooth.residual_samples(H, t, eta, n, seed, sigma)
            checks.append(check(f"residual_{name}", "per-path Kolmogorov residual",
                                float(np.max(np.abs(res))), 1e-8))
            rows.append({"functional": name, "du": sp["analytic"], "du_fd": sp["fd"],
                         "dtu": tm["analytic"], "dtu_fd": tm["fd"],
                         "max_residual": float(np.max(np.abs(res)))})
        except Exception as exc:
            checks.append(failed(f"functional_{name}", "smooth solver derivative checks", exc))
    out.table("smooth_checks.csv", ["functional", "du", "du_fd", "dtu", "dtu_fd", "max_residual"],
              rows)
    Hq = smooth.functional("quadratic", [cyl.poly_basis([1.0])], T)
    zero = SampledPath.constant(0.0, T, N)
    est = smooth.u_smooth(Hq, 0.0, zero, p["oracle_paths"], seed, sigma)
    oracle = sigma ** 2 * T ** 3 / 3.0
    checks.append(check("u_oracle_T3", "E (int sigma W)^2 = sigma^2 T^3 / 3",
                        abs(est.value - oracle),
                        3.0 * est.std_error, std_error=est.std_error, estimate=est.to_dict()))
    mart = smooth.martingale_check(Hq, [0.25 * T, 0.5 * T, 0.75 * T], p["martingale_paths"],
                                   seed, sigma, T, p["martingale_N"])
    checks += _martingale_checks(mart)
    for r in mart:
        r["solver"] = "smooth"
    out.table("smooth_martingale.csv", ["solver", "t", "mean", "u0", "deviation", "se"], mart)
    out.figure(plotting.martingale_bars, "smooth_martingale.png", mart)
    return checks, {}


def suite_clark_ocone(p, seed, out):
    T, sigma = p["T"], p["sigma"]
    one = cyl.poly_basis([1.0])
    driver = co.DriverSpec(co.DriverKind.BROWNIAN, sigma, p["hurst"], 2, p["n_paths"], seed, T)
    checks, rows = [], []
    cases = [
        ("linear", cyl.payoff("linear"), driver, (p["linear_N"],)),
        ("quadratic", cyl.payoff("square"), driver, tuple(p["N_list"])),
        ("quadratic_fbm", cyl.payoff("square"),
         co.DriverSpec(co.DriverKind.BROWNIAN_PLUS_FBM, sigma, p["hurst"], 2, p["n_paths"],
                       seed, T), (p["fbm_N"],)),
    ]
    results = {}
    for name, pf, drv, grids in cases:
        try:
            solver = co.CylindricalSolver(cyl.CylindricalSpec((one,), pf, sigma, T))
            res = co.representation_check(solver, drv, grids)
            results[name] = res
            for r in res["rows"]:
                rows.append({"case": name, "driver": drv.kind.value, **r})
        except Exception as exc:
            checks.append(failed(f"representation_{name}", "Clark-Ocone type representation",
                                 exc))
    if "linear" in results:
        checks.append(check("representation_linear", "linear payoff telescopes",
                            results["linear"]["rmse_rel"], 1e-12))
    if "quadratic" in results:
        q = results["quadratic"]
        at = {r["N"]: r["rmse_rel"] for r in q["rows"]}
        key = 512 if 512 in at else max(at)
        checks.append(check("representation_quadratic", f"relative RMSE at N = {key}", at[key],
                            p["quadratic_tolerance"]))
        checks.append(check("representation_quadratic_decreasing", "RMSE falls as N grows",
                            float(q["decreasing"]), 1.0, "ge",
                            rmse=[r["rmse_rel"] for r in q["rows"]]))
    if "quadratic_fbm" in results:
        checks.append(check("representation_fbm", "W + fBM driver with the sigma-only solution",
                            results["quadratic_fbm"]["rmse_rel"], p["fbm_tolerance"]))
    header = ["case", "driver", "N", "rmse_rel", "bias", "se"]
    out.table("clark_ocone_convergence.csv", header, rows)
    out.figure(plotting.convergence, "clark_ocone_convergence.png",
               [r for r in rows if r["case"] != "linear"], group="case")
    return checks, {}


RUNNERS = {"integrate": suite_integrate, "cylindrical": suite_cylindrical,
           "flow-check": suite_flow, "smooth": suite_smooth, "clark-ocone": suite_clark_ocone}


# -- run ---------------------------------------------------------------------

def run(suite, params_by_suite, seed, out_dir, threads=None):
    """Execute ``suite`` (or every suite for ``all``) and write ``report.json``."""
    from .rng import set_threads

    if threads:
        set_threads(threads)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    names = SUITES if suite == "all" else (suite,)
    checks, summaries, artifacts = [], {}, []
    timings = {}
    for name in names:
        out = Outputs(out_dir)
        t0 = time.perf_counter()
        try:
            recs, summary = RUNNERS[name](params_by_suite[name], seed, out)
        except Exception as exc:
            recs, summary = [failed(name, "suite execution", exc)], {}
        for r in recs:
            r["suite"] = name
        checks.extend(recs)
        if summary:
            summaries[name] = summary
        artifacts.extend(out.tables + out.figures)
        timings[name] = time.perf_counter() - t0
    report = {
        "schema": SCHEMA_VERSION,
        "suite": suite,
        "pass": all(c["pass"] for c in checks),
        "checks": checks,
        "summary": summaries,
        "artifacts": artifacts,
        "environment": {
            "version": __version__, "seed": seed, "python": platform.python_version(),
            "numpy": np.__version__,
            "params": params_by_suite,
            "wall_time": {"total": time.perf_counter() - start, **timings},
        },
    }
    (out_dir / "report.json").write_text(dumps(report))
    return report


def dumps(obj):
    return json.dumps(_clean(obj), indent=2, sort_keys=False) + "\n"


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def strip_timing(report):
    """Copy of a report without ``wall_time`` fields, for reproducibility comparisons."""
    if isinstance(report, dict):
        return {k: strip_timing(v) for k, v in report.items() if k != "wall_time"}
    if isinstance(report, list):
        return [strip_timing(v) for v in report]
    return report
