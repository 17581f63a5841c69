"""Monte Carlo solution ``u(t, eta) = E H(Y_T^{t, eta})`` for smooth functionals.

The builtin functionals are polynomials ``F(L_1, ..., L_k)`` of linear features
``L_i(eta) = int eta g_i dx`` (trapezoid rule on the path grid), so their first
and second derivatives are exact: ``D H = sum_i dF_i g_i`` and
``D^2 H = sum_ij d2F_ij g_i (x) g_j``.

Sampling convention: the flow started at ``t`` is driven by a Brownian motion
``B`` started at ``t``, generated from the same counter range whatever ``t`` is.
Estimates at different ``t`` or different ``eta`` with the same seed therefore
share their random numbers.
"""

import math
from dataclasses import dataclass

import numpy as np

from .cylindrical import basis_from_config
from .errors import DomainError, GrowthViolationError
from .flows import brownian_paths
from .paths import (Kernel2, PathMeasure, SampledPath, _trapz_weights, grid_index,
                    integrate_samples, pair_measure, window_values)
from .regcalc import BVFunction, IntervalSpec, Mode, density_measure, forward_integral
from .rng import STREAM_BROWNIAN, STREAM_INNER, STREAM_OUTER

_CHUNK = 4096


@dataclass(frozen=True)
class MCEstimate:
    value: float
    std_error: float
    n_paths: int
    seed: int

    def to_dict(self):
        return {"value": self.value, "std_error": self.std_error,
                "n_paths": self.n_paths, "seed": self.seed}


def _estimate(samples, seed):
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    se = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return MCEstimate(float(np.mean(samples)), se, n, seed)


@dataclass(frozen=True, eq=False)
class FunctionalH:
    """``H(eta) = F(L_1(eta), ..., L_k(eta))`` with polynomial ``F``.

    ``F``, ``dF`` and ``d2F`` act on an array ``L`` of shape ``(P, k)`` and return
    ``(P,)``, ``(P, k)`` and ``(P, k, k)``.
    """

    name: str
    T: float
    weights: tuple  # Basis objects evaluated on x in [-T, 0]
    F: object
    dF: object
    d2F: object
    growth_p: int
    growth_c: float = 1.0

    def g(self, N):
        x = -self.T + (self.T / N) * np.arange(N + 1)
        return np.stack([np.broadcast_to(b.phi(x), x.shape) for b in self.weights])

    def dg(self, N):
        x = -self.T + (self.T / N) * np.arange(N + 1)
        return np.stack([np.broadcast_to(b.dphi(x), x.shape) for b in self.weights])

    def features(self, values):
        values = np.atleast_2d(values)
        n = values.shape[-1] - 1
        grid = -self.T + (self.T / n) * np.arange(n + 1)
        w = _trapz_weights(grid, -self.T)
        return values @ (w * self.g(n)).T

    def __call__(self, eta):
        return float(self.F(self.features(eta.values))[0])

    def eval_batch(self, values):
        return self.F(self.features(values))

    def d1(self, eta):
        """First derivative as a density (no atoms) with its derivative samples."""
        c = self.dF(self.features(eta.values))[0]
        return PathMeasure(self.T, density=SampledPath(self.T, c @ self.g(eta.N)),
                           density_derivative=SampledPath(self.T, c @ self.dg(eta.N)))

    def d2(self, eta):
        c = self.d2F(self.features(eta.values))[0]
        g = [SampledPath(self.T, row) for row in self.g(eta.N)]
        k = len(g)
        return Kernel2(self.T, plane=tuple((c[i, j], g[i], g[j]) for i in range(k)
                                           for j in range(k) if c[i, j] != 0.0))

    def check_growth(self, values):
        """Per-path polynomial growth gate ``|H(Y)| <= c (1 + ||Y||)^p``."""
        h = np.abs(self.eval_batch(values))
        bound = self.growth_c * (1.0 + np.max(np.abs(values), axis=-1)) ** self.growth_p
        bad = np.flatnonzero(h > bound)
        if bad.size:
            i = int(bad[0])
            raise GrowthViolationError("functional exceeds its polynomial growth bound",
                                       functional=self.name, path=i, value=float(h[i]),
                                       bound=float(bound[i]))


def _l1(b, T):
    x = np.linspace(-T, 0.0, 2049)
    return float(np.trapezoid(np.abs(np.broadcast_to(b.phi(x), x.shape)), x))


def functional(kind, weights, T=1.0):
    """Builtin functionals: ``linear``, ``quadratic``, ``cubic`` of ``int eta g``, and
    ``product`` of two such features."""
    weights = tuple(weights)
    norms = [max(1.0, _l1(b, T)) for b in weights]
    if kind == "product":
        if len(weights) != 2:
            raise DomainError("product needs two weights")
        return FunctionalH(
            "product", T, weights,
            lambda L: L[:, 0] * L[:, 1],
            lambda L: L[:, ::-1].copy(),
            lambda L: np.broadcast_to(np.array([[0.0, 1.0], [1.0, 0.0]]), (L.shape[0], 2, 2)),
            2, 4.0 * norms[0] * norms[1])
    if len(weights) != 1:
        raise DomainError(f"{kind} takes one weight")
    power = {"linear": 1, "quadratic": 2, "cubic": 3}.get(kind)
    if power is None:
        raise DomainError(f"unknown functional {kind!r}")

    def F(L):
        return L[:, 0] ** power

    def dF(L):
        return power * L[:, :1] ** (power - 1)

    def d2F(L):
        return (power * (power - 1) * L[:, :1, None] ** max(power - 2, 0)
                * (power > 1))

    return FunctionalH(kind, T, weights, F, dF, d2F, power, 2.0 ** power * norms[0] ** power)


def functional_from_config(cfg, T):
    weights = cfg.get("g", [{"kind": "poly", "coef": [1.0]}])
    return functional(cfg["kind"], [basis_from_config(w) for w in weights], T)


# -- sampling ----------------------------------------------------------------

def _k(t, eta):
    if not 0.0 <= t <= eta.T + 1e-12:
        raise DomainError("t outside [0, T]", t=t)
    return grid_index(t, eta.dx, 0.0, eta.N)


def terminal_field(eta_values, k, b_values, sigma):
    """``Y_T^{t, eta}`` for ``t = k dx`` from a Brownian motion ``B`` started at ``t``.

    ``b_values`` has shape ``(P, N - k + 1)``; ``eta_values`` is ``(N + 1,)`` or ``(P, N + 1)``.
    """
    eta_values = np.atleast_2d(eta_values)
    n = eta_values.shape[-1] - 1
    m = n - k
    out = np.empty((max(eta_values.shape[0], b_values.shape[0]), n + 1))
    out[:, :n - m] = eta_values[:, m:n]
    out[:, n - m:] = eta_values[:, n:] + sigma * b_values
    return out


def _driver(seed, eta, k, paths, stream=STREAM_BROWNIAN):
    m = eta.N - k
    return brownian_paths(seed, m * eta.dx, m, paths, stream=stream)


def _chunks(n):
    for lo in range(0, n, _CHUNK):
        yield np.arange(lo, min(n, lo + _CHUNK), dtype=np.uint64)


def _features_of_flow(H, t, eta, n_paths, seed, sigma):
    # features L(Y) for every path; all estimators below derive from these
    k = _k(t, eta)
    feats = []
    for paths in _chunks(n_paths):
        y = terminal_field(eta.values, k, _driver(seed, eta, k, paths), sigma)
        H.check_growth(y)
        feats.append(H.features(y))
    return np.concatenate(feats), k


def u_smooth(H, t, eta, n_paths, seed, sigma=1.0):
    """Sample mean of ``H(Y_T^{t, eta})``; exact ``H(eta)`` at ``t = T``."""
    if _k(t, eta) == eta.N:
        return MCEstimate(H(eta), 0.0, 0, seed)
    L, _ = _features_of_flow(H, t, eta, n_paths, seed, sigma)
    return _estimate(H.F(L), seed)


def _shift(rows, k):
    # rows sampled on [-T, 0]; value at x is rows[x - T + t] for x >= -t, else 0
    n = rows.shape[-1] - 1
    out = np.zeros_like(rows)
    out[..., n - k:] = rows[..., :k + 1]
    return out


def _windows(H, eta, k):
    # int_{[t - T, 0]} g_i dx by the trapezoid rule
    grid = eta.grid
    w = _trapz_weights(grid, grid[k]) if k < eta.N else np.zeros(eta.N + 1)
    return H.g(eta.N) @ w


@dataclass
class MeasureEstimate:
    measure: PathMeasure
    atom0_se: float
    density_se: np.ndarray
    n_paths: int
    seed: int

    def pair(self, g):
        return pair_measure(self.measure, g)


def du_smooth(H, t, eta, n_paths, seed, sigma=1.0):
    """First derivative of ``u``: density ``E D_{x-T+t} H(Y)`` on [-t, 0] and the atom at 0."""
    k = _k(t, eta)
    if k == eta.N:
        raise DomainError("derivatives need t < T", t=t)
    L, _ = _features_of_flow(H, t, eta, n_paths, seed, sigma)
    c = H.dF(L)  # (P, k)
    g = _shift(H.g(eta.N), k)
    dg = _shift(H.dg(eta.N), k)
    cm = c.mean(axis=0)
    cov = np.atleast_2d(np.cov(c, rowvar=False)) / n_paths
    dens_se = np.sqrt(np.maximum(np.einsum("ix,ij,jx->x", g, cov, g), 0.0))
    a = _windows(H, eta, k)
    atom = c @ a
    meas = PathMeasure(eta.T, atom0=float(atom.mean()),
                       density=SampledPath(eta.T, cm @ g),
                       density_derivative=SampledPath(eta.T, cm @ dg), support_lo=-t)
    return MeasureEstimate(meas, float(np.std(atom, ddof=1) / math.sqrt(n_paths)),
                           dens_se, n_paths, seed)


def d2u_smooth(H, t, eta, n_paths, seed, sigma=1.0):
    """Second derivative of ``u`` as a :class:`Kernel2` of path averages."""
    k = _k(t, eta)
    if k == eta.N:
        raise DomainError("derivatives need t < T", t=t)
    L, _ = _features_of_flow(H, t, eta, n_paths, seed, sigma)
    c2 = H.d2F(L).mean(axis=0)
    a = _windows(H, eta, k)
    g = _shift(H.g(eta.N), k)
    gs = [SampledPath(eta.T, row) for row in g]
    n = len(gs)
    cross = c2 @ a
    return Kernel2(eta.T, float(a @ c2 @ a),
                   SampledPath(eta.T, cross @ g), SampledPath(eta.T, (c2.T @ a) @ g),
                   tuple((c2[i, j], gs[i], gs[j]) for i in range(n) for j in range(n)
                         if c2[i, j] != 0.0),
                   support_lo=-t)


def _basis_forward_integrals(H, t, eta, k):
    # int_{]-t, 0]} g_i(x - T + t) d^- eta(x), one per weight, through the calculus module
    if k == 0:
        return np.zeros(len(H.weights))
    g = _shift(H.g(eta.N), k)
    dg = _shift(H.dg(eta.N), k)
    f = BVFunction(eta, is_bv=False)
    iv = IntervalSpec(-t, 0.0, Mode.OPEN)
    out = []
    for gi, dgi in zip(g, dg):
        mu = density_measure(SampledPath(eta.T, gi), SampledPath(eta.T, dgi), support_lo=-t)
        out.append(forward_integral(mu, f, iv).value)
    return np.array(out)


def _dtu_samples(H, t, eta, L, k, sigma):
    fi = _basis_forward_integrals(H, t, eta, k)
    a = _windows(H, eta, k)
    c, c2 = H.dF(L), H.d2F(L)
    return -(c @ fi + 0.5 * sigma ** 2 * np.einsum("i,pij,j->p", a, c2, a))


def dtu_smooth(H, t, eta, n_paths, seed, sigma=1.0):
    """Time derivative ``-E[int D_{x-T+t} H(Y) d^- eta(x) + sigma^2/2 <D^2 H(Y), 1 (x) 1>]``."""
    k = _k(t, eta)
    if k == eta.N:
        raise DomainError("derivatives need t < T", t=t)
    L, _ = _features_of_flow(H, t, eta, n_paths, seed, sigma)
    return _estimate(_dtu_samples(H, t, eta, L, k, sigma), seed)


def residual_samples(H, t, eta, n_paths, seed, sigma=1.0):
    """Per-path residual ``d_t u + int D^ac u d^- eta + sigma^2/2 D^2 u({0,0})``.

    All three terms use the same paths. The drift term integrates each path's
    density by parts on the grid, independently of the calculus module used for
    the time derivative.
    """
    k = _k(t, eta)
    if k == eta.N:
        raise DomainError("derivatives need t < T", t=t)
    L, _ = _features_of_flow(H, t, eta, n_paths, seed, sigma)
    dtu = _dtu_samples(H, t, eta, L, k, sigma)
    c, c2 = H.dF(L), H.d2F(L)
    dens = c @ _shift(H.g(eta.N), k)
    ddens = c @ _shift(H.dg(eta.N), k)
    n = eta.N
    x, v = eta.grid, eta.values
    j0 = n - k
    if k == 0:
        drift = np.zeros(L.shape[0])
    else:
        y = ddens[:, j0:] * v[j0:]
        inner = np.sum(0.5 * (y[:, 1:] + y[:, :-1]) * np.diff(x[j0:]), axis=1)
        drift = dens[:, n] * v[n] - dens[:, j0] * v[j0] - inner
    a = _windows(H, eta, k)
    atom00 = np.einsum("i,pij,j->p", a, c2, a)
    return dtu + drift + 0.5 * sigma ** 2 * atom00


def residual_smooth(H, t, eta, n_paths, seed, sigma=1.0):
    return _estimate(residual_samples(H, t, eta, n_paths, seed, sigma), seed)


def martingale_check(H, times, n_paths, seed, sigma=1.0, T=1.0, N=32, n_inner=None):
    """Nested estimate of ``E u(t, sigma W_t(.)) - u(0, 0)`` for each ``t``.

    Outer windows come from the outer stream; each outer path ``o`` uses inner
    path indices ``o * n_inner + i`` on the inner stream.
    """
    n_inner = n_inner or max(2, n_paths // 10)
    zero = SampledPath.constant(0.0, T, N)
    # the reference is shared by every row, so give it a larger budget
    u0 = u_smooth(H, 0.0, zero, 10 * n_paths, seed, sigma)
    rows = []
    for t in times:
        k = grid_index(t, T / N, 0.0, N)
        if k == 0:
            rows.append({"t": t, "mean": u0.value, "u0": u0.value, "deviation": 0.0,
                         "se": 0.0, "pass": True})
            continue
        means = np.empty(n_paths)
        for lo in range(0, n_paths, 64):
            outer = np.arange(lo, min(n_paths, lo + 64), dtype=np.uint64)
            w = sigma * brownian_paths(seed, T, N, outer, stream=STREAM_OUTER)
            win = window_values(w, k)
            inner = (outer[:, None] * np.uint64(n_inner)
                     + np.arange(n_inner, dtype=np.uint64)[None, :]).ravel()
            b = brownian_paths(seed, T - t, N - k, inner, stream=STREAM_INNER)
            y = terminal_field(np.repeat(win, n_inner, axis=0), k, b, sigma)
            means[lo:lo + outer.size] = H.eval_batch(y).reshape(outer.size, n_inner).mean(axis=1)
        est = _estimate(means, seed)
        se = math.hypot(est.std_error, u0.std_error)
        dev = est.value - u0.value
        rows.append({"t": t, "mean": est.value, "u0": u0.value, "deviation": dev, "se": se,
                     "pass": abs(dev) <= 3.0 * se})
    return rows


def _flow_values(H, t, eta, n_paths, seed, sigma):
    k = _k(t, eta)
    return np.concatenate([H.eval_batch(terminal_field(eta.values, k,
                                                       _driver(seed, eta, k, p), sigma))
                           for p in _chunks(n_paths)])


def _gate(diff, seed, atol):
    est = _estimate(diff, seed)
    return {"diff": est.value, "se": est.std_error, "tolerance": atol + 3.0 * est.std_error,
            "pass": abs(est.value) <= atol + 3.0 * est.std_error}


def fd_space_check(H, t, eta, g, n_paths, seed, sigma=1.0, eps=1e-3, atol=1e-4):
    """``<D u, g>`` against a central difference of ``u`` in direction ``g``, path by path."""
    k = _k(t, eta)
    L, _ = _features_of_flow(H, t, eta, n_paths, seed, sigma)
    c = H.dF(L)
    gs = _shift(H.g(eta.N), k)
    dens = np.array([integrate_samples(eta.grid, row * g.values, -t, 0.0) for row in gs])
    analytic = c @ (dens + _windows(H, eta, k) * g(0.0))
    up = _flow_values(H, t, SampledPath(eta.T, eta.values + eps * g.values), n_paths, seed, sigma)
    um = _flow_values(H, t, SampledPath(eta.T, eta.values - eps * g.values), n_paths, seed, sigma)
    fd = (up - um) / (2.0 * eps)
    out = _gate(analytic - fd, seed, atol)
    out.update(analytic=float(analytic.mean()), fd=float(fd.mean()))
    return out


def fd_time_check(H, t, eta, n_paths, seed, sigma=1.0, atol=1e-4):
    """``d_t u`` against the central difference over one grid step, path by path."""
    k = _k(t, eta)
    if not 0 < k < eta.N:
        raise DomainError("time difference needs an interior grid time", t=t)
    h = eta.dx
    L, _ = _features_of_flow(H, t, eta, n_paths, seed, sigma)
    analytic = _dtu_samples(H, t, eta, L, k, sigma)
    fd = (_flow_values(H, t + h, eta, n_paths, seed, sigma)
          - _flow_values(H, t - h, eta, n_paths, seed, sigma)) / (2.0 * h)
    out = _gate(analytic - fd, seed, atol)
    out.update(analytic=float(analytic.mean()), fd=float(fd.mean()))
    return out


def preflight(H, N=64, n_probes=32, seed=0):
    """Probe-based check of the derivative growth hypothesis.

    Returns the largest ratio ``||D H(eta)||_{H^1} / (1 + ||eta||^p)`` over random
    smooth probes scaled across four decades.
    """
    rng = np.random.default_rng(seed)
    x = -H.T + (H.T / N) * np.arange(N + 1)
    worst = 0.0
    for i in range(n_probes):
        scale = 10.0 ** (i % 4 - 1)
        a = rng.normal(size=3)
        vals = scale * (a[0] + a[1] * np.sin(3 * x) + a[2] * x)
        d = H.d1(SampledPath(H.T, vals))
        h1 = math.sqrt(np.trapezoid(d.density.values ** 2, x)
                       + np.trapezoid(d.density_derivative.values ** 2, x))
        worst = max(worst, h1 / (1.0 + np.max(np.abs(vals)) ** H.growth_p))
    return {"probes": n_probes, "max_ratio": worst}
