"""Pathwise check of ``h = u(0, X_0) + int_0^T D^{delta_0} u(t, X_t) d^- X_t``.

The driver is ``sigma W`` or ``sigma W + B^H`` with ``H > 1/2``; both have
quadratic variation ``sigma^2 t``, so the solution built for ``sigma`` alone
should represent ``h`` for either driver. Integrands are produced step by step
from the trajectory observed up to the current time.
"""

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy import linalg

from . import cylindrical as cyl
from . import smooth
from .errors import DomainError, PathHeatError
from .flows import brownian_paths
from .paths import SampledPath, _trapz_weights, window_values
from .rng import STREAM_BROWNIAN, STREAM_FBM, STREAM_INNER, standard_normals

FBM_MAX_N = 2048


class DriverKind(str, Enum):
    BROWNIAN = "brownian"
    BROWNIAN_PLUS_FBM = "brownian_plus_fbm"


@dataclass(frozen=True)
class DriverSpec:
    kind: DriverKind = DriverKind.BROWNIAN
    sigma: float = 1.0
    hurst: float = 0.75
    N: int = 512
    n_paths: int = 10_000
    seed: int = 0
    T: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", DriverKind(self.kind))
        if self.kind is DriverKind.BROWNIAN_PLUS_FBM:
            if not 0.5 < self.hurst < 1.0:
                raise DomainError("Hurst index must lie in (1/2, 1)", hurst=self.hurst)
            if self.N > FBM_MAX_N:
                raise DomainError(f"fBM grid capped at N = {FBM_MAX_N}", N=self.N)
        if self.N < 2 or self.n_paths < 2:
            raise DomainError("need N >= 2 and at least two paths", N=self.N,
                              n_paths=self.n_paths)

    def with_grid(self, n):
        return DriverSpec(self.kind, self.sigma, self.hurst, n, self.n_paths, self.seed, self.T)


@lru_cache(maxsize=8)
def fbm_cholesky(n, hurst, T):
    """Lower Cholesky factor of the fBM covariance at ``t_k = k T / n``, ``k = 1..n``."""
    t = T * np.arange(1, n + 1) / n
    h2 = 2.0 * hurst
    cov = 0.5 * (t[:, None] ** h2 + t[None, :] ** h2 - np.abs(t[:, None] - t[None, :]) ** h2)
    try:
        return linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError as exc:
        raise PathHeatError("fBM covariance factorization failed", n=n, hurst=hurst) from exc


def sample_driver(spec, paths=None):
    """Driver samples ``(P, N + 1)`` on ``[0, T]`` starting at 0."""
    paths = np.arange(spec.n_paths, dtype=np.uint64) if paths is None else paths
    x = spec.sigma * brownian_paths(spec.seed, spec.T, spec.N, paths, stream=STREAM_BROWNIAN)
    if spec.kind is DriverKind.BROWNIAN_PLUS_FBM:
        z = standard_normals(spec.seed, paths, spec.N, stream=STREAM_FBM)
        x[:, 1:] += z @ fbm_cholesky(spec.N, spec.hurst, spec.T).T
    return x


def forward_stochastic_integral(a, x):
    """Left-point sum ``sum_k a_k (X_{k+1} - X_k)``; ``a`` has one entry per step."""
    a = np.asarray(a, dtype=float)
    dx = np.diff(np.asarray(x, dtype=float), axis=-1)
    if a.shape[-1] != dx.shape[-1]:
        raise DomainError("integrand needs one value per step", steps=dx.shape[-1],
                          given=a.shape[-1])
    return np.sum(a * dx, axis=-1)


def adapted_integral(builder, x, T):
    """Forward integral with ``a_k = builder(k, t_k, X[:, :k + 1])``.

    The builder never sees values after ``t_k``.
    """
    n = x.shape[-1] - 1
    dt = T / n
    total = np.zeros(x.shape[0])
    for k in range(n):
        a = builder(k, k * dt, x[:, :k + 1])
        total += a * (x[:, k + 1] - x[:, k])
    return total


def truncated_window(x_upto, n):
    """Window ``X_t(.)`` on the ``n``-step grid from samples on ``[0, t]`` only."""
    k = x_upto.shape[-1] - 1
    idx = np.maximum(np.arange(n + 1) + k - n, 0)
    return x_upto[..., idx]


class CylindricalSolver:
    """``u`` and ``D^{delta_0} u`` from the explicit Gaussian solution.

    Features are accumulated along the trajectory with the trapezoid rule, which
    matches the window formula node for node.
    """

    def __init__(self, spec):
        self.spec = spec

    @property
    def sigma(self):
        return self.spec.sigma

    def u0(self, T, n):
        return cyl.u_cyl(self.spec, 0.0, SampledPath.constant(0.0, T, n))

    def terminal(self, x, T):
        return cyl.u_cyl_batch(self.spec, T, window_values(x, x.shape[-1] - 1))

    def builder(self, n_paths, T, n):
        spec = self.spec
        dt = T / n
        acc = np.zeros((n_paths, spec.n))

        def build(k, t, x_upto):
            if k > 0:
                s0, s1 = (k - 1) * dt, k * dt
                acc[:] += 0.5 * dt * (x_upto[:, k - 1, None] * spec.dphi(s0)
                                      + x_upto[:, k, None] * spec.dphi(s1))
            y = x_upto[:, k, None] * spec.phi(t)[None, :] - acc
            d = cyl.psi_derivs(spec, t, y)
            return d.grad @ spec.phi(t)

        return build


class SmoothSolver:
    """``u`` and ``D^{delta_0} u`` by inner Monte Carlo over the builtin functionals.

    The inner Brownian motions are started at each ``t_k`` from the same counter
    range, so consecutive steps share their random numbers.
    """

    def __init__(self, H, sigma=1.0, n_inner=1000, seed=0):
        self.H, self.sigma, self.n_inner, self.seed = H, sigma, n_inner, seed

    def u0(self, T, n):
        return smooth.u_smooth(self.H, 0.0, SampledPath.constant(0.0, T, n),
                               10 * self.n_inner, self.seed, self.sigma).value

    def terminal(self, x, T):
        return self.H.eval_batch(window_values(x, x.shape[-1] - 1))

    def builder(self, n_paths, T, n):
        H, inner = self.H, np.arange(self.n_inner, dtype=np.uint64)
        grid = -T + (T / n) * np.arange(n + 1)

        def build(k, t, x_upto):
            win = truncated_window(x_upto, n)
            b = brownian_paths(self.seed, T - t, n - k, inner, stream=STREAM_INNER)
            y = smooth.terminal_field(np.repeat(win, self.n_inner, axis=0), k,
                                      np.tile(b, (win.shape[0], 1)), self.sigma)
            c = H.dF(H.features(y))
            a = H.g(n) @ _trapz_weights(grid, grid[k])
            return (c @ a).reshape(win.shape[0], self.n_inner).mean(axis=1)

        return build


def representation_check(solver, driver, grids=(128, 256, 512, 1024)):
    """Residual ``h - u(0, 0) - int D^{delta_0} u d^- X`` over paths, for each grid.

    Returns rows ``{N, rmse_rel, bias, se}`` plus ``decreasing`` (rmse falls with N).
    """
    rows = []
    for n in grids:
        spec = driver.with_grid(n)
        x = sample_driver(spec)
        h = solver.terminal(x, spec.T)
        u0 = solver.u0(spec.T, n)
        integral = adapted_integral(solver.builder(x.shape[0], spec.T, n), x, spec.T)
        resid = h - u0 - integral
        scale = math.sqrt(float(np.mean(h ** 2))) or 1.0
        rows.append({"N": n, "rmse_rel": math.sqrt(float(np.mean(resid ** 2))) / scale,
                     "bias": float(np.mean(resid)),
                     "se": float(np.std(resid, ddof=1) / math.sqrt(resid.size)),
                     "u0": float(u0)})
    rmse = [r["rmse_rel"] for r in rows]
    return {"rows": rows, "decreasing": all(b < a for a, b in zip(rmse, rmse[1:])),
            "rmse_rel": rmse[-1]}


def quadratic_variation(x):
    return np.sum(np.diff(x, axis=-1) ** 2, axis=-1)
