"""Deterministic forward integrals ``int mu(dx) d^- f(x)`` on ]a, b] and [a, b].

All sampled functions are read as their linear interpolants. For such data the
epsilon-approximant is a piecewise quadratic integrand between known
breakpoints, so :func:`forward_integral_eps` evaluates it exactly with Simpson's
rule per piece; the closed forms below are exact for the same interpolants.
"""

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DomainError, NonConvergentError
from .paths import SNAP_TOL, PathMeasure, SampledPath

EPS_EXPONENTS = tuple(range(4, 13))
_ROUNDING = 16 * np.finfo(float).eps


class Mode(str, Enum):
    OPEN = "open"      # ]a, b]
    CLOSED = "closed"  # [a, b]


class Method(str, Enum):
    CLOSED_FORM = "closed_form"
    EPS_LIMIT = "eps_limit"


@dataclass(frozen=True)
class IntervalSpec:
    a: float
    b: float
    mode: Mode = Mode.OPEN

    def __post_init__(self):
        if not self.a <= self.b <= 0.0:
            raise DomainError("interval needs a <= b <= 0", a=self.a, b=self.b)
        object.__setattr__(self, "mode", Mode(self.mode))

    def contains(self, x):
        if self.mode is Mode.OPEN:
            return self.a < x <= self.b
        return self.a <= x <= self.b


@dataclass(frozen=True)
class BVFunction:
    """Sampled function plus a declaration of bounded variation.

    ``derivative`` optionally carries analytic derivative samples; when present
    Stieltjes integrals ``d f`` use them instead of differencing.
    """

    path: SampledPath
    is_bv: bool = True
    derivative: SampledPath = None

    @property
    def T(self):
        return self.path.T

    def total_variation(self):
        if not self.is_bv:
            return math.inf
        return float(np.sum(np.abs(np.diff(self.path.values))))


@dataclass
class ForwardIntegral:
    value: float
    method: Method
    error_estimate: float
    eps_table: list = field(default_factory=list)
    case: str = ""

    def to_dict(self):
        return {"value": self.value, "method": self.method.value, "case": self.case,
                "error_estimate": self.error_estimate,
                "eps_table": [[e, v] for e, v in self.eps_table]}


def density_measure(density, derivative=None, support_lo=None, is_bv=True):
    """Absolutely continuous :class:`PathMeasure` with the given density samples."""
    return PathMeasure(density.T, density=density, density_derivative=derivative,
                       support_lo=support_lo, density_bv=is_bv)


def extend(f, iv):
    """Cadlag extension of ``f`` from [a, b] to the real line.

    OPEN mode keeps ``f(a)`` left of ``a``; CLOSED mode puts 0 there. Both keep
    ``f(b)`` right of ``b``.
    """
    grid, vals = f.path.grid, f.path.values
    a, b = iv.a, iv.b
    closed = iv.mode is Mode.CLOSED

    def f_ext(x):
        x = np.asarray(x, dtype=float)
        y = np.interp(np.clip(x, a, b), grid, vals)
        if closed:
            y = np.where(x < a, 0.0, y)
        return float(y) if y.ndim == 0 else y

    return f_ext


def _check_compatible(mu, f):
    if not math.isclose(mu.T, f.T, rel_tol=1e-12):
        raise DomainError("measure and function live on different horizons",
                          T_mu=mu.T, T_f=f.T)


def _density(mu, iv):
    # density samples restricted to [a, b], read with constant extension outside
    grid, vals = mu.density.grid, mu.density_values()
    a, b = iv.a, iv.b

    def mu_ext(x):
        return np.interp(np.clip(x, a, b), grid, vals)

    return grid, mu_ext


def forward_integral_eps(mu, f, iv, eps):
    """Regularized approximant ``int (f_ext(x + eps) - f_ext(x)) / eps mu(dx)``.

    In CLOSED mode the density is read as ``mu(a)`` on ``[a - eps, a)`` so the
    jump of ``f_ext`` at ``a`` is seen by the regularization.
    """
    if not eps > 0:
        raise DomainError("eps must be positive", eps=eps)
    _check_compatible(mu, f)
    a, b = iv.a, iv.b
    f_ext = extend(f, iv)
    closed = iv.mode is Mode.CLOSED
    total = 0.0
    if mu.density is not None:
        lo = a - eps if closed else a
        if b > lo:
            mgrid, mu_ext = _density(mu, iv)
            fgrid = f.path.grid
            bps = np.concatenate((mgrid, fgrid, fgrid - eps, [a, b, a - eps, b - eps]))
            bps = np.unique(bps[(bps >= lo) & (bps <= b)])
            left, right = bps[:-1], bps[1:]
            mid = 0.5 * (left + right)

            fgv = f.path.values
            shift = a - eps

            def shifted(x):
                return np.interp(np.clip(x + eps, a, b), fgrid, fgv)

            def g_right_limit(x):
                y = mu_ext(x) * (shifted(x) - f_ext(x))
                if closed:
                    # f_ext jumps at a and f_ext(. + eps) at a - eps
                    y = np.where(x < a, mu_ext(x) * shifted(x), y)
                    y = np.where(x < shift, 0.0, y)
                return y

            def g_left_limit(x):
                y = mu_ext(x) * (shifted(x) - f_ext(x))
                if closed:
                    y = np.where(x <= a, mu_ext(x) * shifted(x), y)
                    y = np.where(x <= shift, 0.0, y)
                return y

            pieces = (g_right_limit(left) + 4.0 * g_right_limit(mid) + g_left_limit(right))
            total += float(np.sum((right - left) / 6.0 * pieces)) / eps
    for x, w in mu.atoms:
        if iv.contains(x):
            total += w * (f_ext(x + eps) - f_ext(x)) / eps
    if mu.atom0 and iv.contains(0.0):
        total += mu.atom0 * (f_ext(eps) - f_ext(0.0)) / eps
    return total


def _pieces(mu, f, iv):
    a, b = iv.a, iv.b
    nodes = np.concatenate((mu.density.grid, f.path.grid))
    inner = nodes[(nodes > a) & (nodes < b)]
    return np.unique(np.concatenate(([a, b], inner)))


def _stieltjes(integrand_grid_fn, integrator, bps):
    """``int_{]a,b]} u dv`` for linear-interpolant ``u``; ``integrator`` is either
    ``("values", fn)`` (differencing) or ``("derivative", fn)`` (analytic)."""
    left, right = bps[:-1], bps[1:]
    kind, fn = integrator
    if kind == "derivative":
        y = integrand_grid_fn(bps) * fn(bps)
        return float(np.sum(0.5 * (right - left) * (y[:-1] + y[1:])))
    u = integrand_grid_fn(bps)
    v = fn(bps)
    return float(np.sum(np.diff(v) * 0.5 * (u[:-1] + u[1:])))


def _integrator(deriv_path, values_fn):
    if deriv_path is not None:
        g, d = deriv_path.grid, deriv_path.values
        return ("derivative", lambda x: np.interp(x, g, d))
    return ("values", values_fn)


def _right_slope(f, x, b):
    if f.derivative is not None:
        return float(np.interp(x, f.derivative.grid, f.derivative.values))
    if x >= b:
        return 0.0
    p = f.path
    pos = (x + p.T) / p.dx
    k = int(math.floor(pos + SNAP_TOL))
    nxt = min(-p.T + (k + 1) * p.dx, b)
    return (p(nxt) - p(x)) / (nxt - x)


def closed_form(mu, f, iv):
    """Closed-form value and case label, or ``None`` when no case applies."""
    _check_compatible(mu, f)
    a, b = iv.a, iv.b
    interior_atoms = [(x, w) for x, w in mu.atoms if iv.contains(x)]
    if mu.density is None:
        if interior_atoms and not f.is_bv:
            return None
        return sum(w * _right_slope(f, x, b) for x, w in interior_atoms), "atoms"
    _, mu_ext = _density(mu, iv)
    f_ext = extend(f, iv)
    bps = _pieces(mu, f, iv)
    if iv.mode is Mode.OPEN and f.is_bv:
        value = _stieltjes(mu_ext, _integrator(f.derivative, f_ext), bps)
        value += sum(w * _right_slope(f, x, b) for x, w in interior_atoms)
        return value, "lebesgue_stieltjes"
    if not mu.density_bv or interior_atoms:
        return None
    dmu = _integrator(mu.density_derivative, mu_ext)
    by_parts = _stieltjes(f_ext, dmu, bps)
    if iv.mode is Mode.CLOSED:
        return float(mu_ext(b) * f_ext(b)) - by_parts, "closed_by_parts"
    return float(mu_ext(b) * f_ext(b) - mu_ext(a) * f_ext(a)) - by_parts, "open_by_parts"


def eps_table(mu, f, iv, exponents=EPS_EXPONENTS):
    return [(2.0 ** -k, forward_integral_eps(mu, f, iv, 2.0 ** -k)) for k in exponents]


def _scale(mu, f, iv):
    fmax = float(np.max(np.abs(f.path.values)))
    return max(mu.total_variation() * fmax, np.finfo(float).tiny)


def richardson(table):
    """Three-point extrapolation for ``I(eps) = L + c1 eps + c2 eps^2`` on halving eps.

    Returns ``(limit, spread)`` with spread the gap between the second- and
    first-order extrapolants.
    """
    (_, i0), (_, i1), (_, i2) = table[-3:]
    r1a = 2.0 * i1 - i0
    r1b = 2.0 * i2 - i1
    r2 = (4.0 * r1b - r1a) / 3.0
    return r2, abs(r2 - r1b)


def forward_integral(mu, f, iv):
    """Forward integral by closed form when one applies, else by the eps-limit."""
    floor = _ROUNDING * _scale(mu, f, iv) / 2.0 ** -EPS_EXPONENTS[-1]
    cf = closed_form(mu, f, iv)
    if cf is not None:
        return ForwardIntegral(cf[0], Method.CLOSED_FORM, 0.0, [], cf[1])
    table = eps_table(mu, f, iv)
    diffs = [abs(v1 - v0) for (_, v0), (_, v1) in zip(table, table[1:])]
    if diffs[-1] > floor and diffs[-1] >= diffs[-2]:
        raise NonConvergentError("eps-sequence fails the Cauchy test", eps_table=table)
    value, spread = richardson(table)
    return ForwardIntegral(value, Method.EPS_LIMIT, max(spread, floor), table, "eps_limit")


def convergence_errors(mu, f, iv, limit, exponents=EPS_EXPONENTS):
    """``(eps, |I(eps) - limit|)`` restricted to points above the rounding floor."""
    table = eps_table(mu, f, iv, exponents)
    eps = np.array([e for e, _ in table])
    err = np.array([abs(v - limit) for _, v in table])
    keep = err > 4.0 * _ROUNDING * _scale(mu, f, iv) / eps
    return eps[keep], err[keep]


def convergence_slope(mu, f, iv, limit, exponents=EPS_EXPONENTS):
    """Least-squares slope of ``log|I(eps) - limit|`` against ``log eps``.

    Points within rounding of the approximant are dropped; when fewer than two
    remain the approximant is exact and the slope is reported as ``inf``.
    """
    eps, err = convergence_errors(mu, f, iv, limit, exponents)
    if eps.size < 2:
        return math.inf
    return float(np.polyfit(np.log(eps), np.log(err), 1)[0])


def pooled_slope(curves):
    """Common log-log slope over several ``(eps, err)`` curves, one intercept each."""
    sxy = sxx = 0.0
    for eps, err in curves:
        if len(eps) < 2:
            continue
        x = np.log(eps) - np.log(eps).mean()
        y = np.log(err) - np.log(err).mean()
        sxy += float(x @ y)
        sxx += float(x @ x)
    return sxy / sxx if sxx > 0 else math.inf
