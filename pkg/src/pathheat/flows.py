"""Brownian, functional Brownian and Markovian stochastic flows on a uniform grid.

All flows are index shifts of stored samples: for grid times ``s <= t`` with
``m = (t - s) / dx`` steps, node ``j`` of ``Y_t^{s, eta}`` copies ``eta[j + m]``
while ``j < N - m`` and otherwise appends the driving increments.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DomainError, IntegrationDivergedError
from .paths import SampledPath, Trajectory, grid_index
from .rng import STREAM_BROWNIAN, standard_normals

KS_ALPHA = 0.01
BOUND_CONSTANT = 2.0


@dataclass(frozen=True)
class FlowParams:
    """Grid, noise level and seed; ``drift``/``diffusion`` enable the Markovian flow.

    ``diffusion`` may be a float (additive noise) or a callable ``(t, x)``.
    """

    T: float = 1.0
    sigma: float = 1.0
    N: int = 256
    seed: int = 0
    drift: object = None
    diffusion: object = None
    lipschitz: tuple = (1.0, 1.0)

    def __post_init__(self):
        if self.N < 2:
            raise DomainError("grid needs N >= 2", N=self.N)
        if not self.T > 0:
            raise DomainError("horizon must be positive", T=self.T)
        if self.sigma < 0:
            raise DomainError("sigma must be non-negative", sigma=self.sigma)

    @property
    def dx(self):
        return self.T / self.N


def brownian_paths(seed, T, N, paths, stream=STREAM_BROWNIAN, step0=0):
    """Brownian samples ``(len(paths), N + 1)`` on ``t_k = k T / N`` with ``W_0 = 0``."""
    z = standard_normals(seed, paths, N, step0=step0, stream=stream)
    w = np.zeros((z.shape[0], N + 1))
    np.cumsum(z * math.sqrt(T / N), axis=1, out=w[:, 1:])
    return w


def sample_brownian(params, path_index=0):
    return Trajectory(params.T, brownian_paths(params.seed, params.T, params.N, [path_index])[0])


def _indices(s, t, T, N):
    dx = T / N
    ks = grid_index(s, dx, 0.0, N)
    kt = grid_index(t, dx, 0.0, N)
    if ks > kt:
        raise DomainError("flow needs s <= t", s=s, t=t)
    return ks, kt


def _check_shared(eta, w):
    if eta.N != w.N or not math.isclose(eta.T, w.T, rel_tol=1e-12):
        raise DomainError("path and driver must share the grid", N_eta=eta.N, N_w=w.N)


def flow_values(ks, kt, eta_values, w_values, sigma):
    """Batch functional Brownian flow from grid indices; broadcasts over leading axes."""
    eta_values = np.asarray(eta_values, dtype=float)
    w_values = np.asarray(w_values, dtype=float)
    n = w_values.shape[-1] - 1
    m = kt - ks
    shape = np.broadcast_shapes(eta_values.shape[:-1], w_values.shape[:-1]) + (n + 1,)
    out = np.empty(shape)
    out[..., :n - m] = eta_values[..., m:n]
    tail = w_values[..., kt - m:kt + 1] - w_values[..., ks:ks + 1]
    out[..., n - m:] = eta_values[..., n:n + 1] + sigma * tail
    return out


def flow_brownian(s, t, eta, w, sigma=1.0):
    """``Y_t^{s, eta}``: ``eta`` shifted by ``t - s`` with ``eta(0) + sigma (W - W_s)`` appended."""
    _check_shared(eta, w)
    ks, kt = _indices(s, t, eta.T, eta.N)
    if ks == kt:
        return eta
    return SampledPath(eta.T, flow_values(ks, kt, eta.values, w.values, sigma))


def euler_values(ks, kt, x0, w_values, dx, drift=None, diffusion=1.0):
    """Euler-Maruyama solution on steps ``ks..kt`` driven by ``w_values``; batch over rows.

    Additive noise with no drift reduces to ``x0 + sigma (W - W_s)`` exactly.
    """
    w_values = np.atleast_2d(np.asarray(w_values, dtype=float))
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), w_values.shape[:1])
    n = kt - ks
    if not callable(diffusion):
        noise = float(diffusion) * (w_values[:, ks:kt + 1] - w_values[:, ks:ks + 1])
        if drift is None:
            return x0[:, None] + noise
        acc = np.zeros((w_values.shape[0], n + 1))
        x = x0.copy()
        for i in range(n):
            acc[:, i + 1] = acc[:, i] + drift((ks + i) * dx, x) * dx
            x = x0 + acc[:, i + 1] + noise[:, i + 1]
            if not np.all(np.isfinite(x)):
                raise IntegrationDivergedError("Euler scheme produced non-finite values",
                                               step=ks + i + 1)
        return x0[:, None] + acc + noise
    dw = np.diff(w_values[:, ks:kt + 1], axis=1)
    out = np.empty((w_values.shape[0], n + 1))
    out[:, 0] = x0
    for i in range(n):
        tk, x = (ks + i) * dx, out[:, i]
        b = drift(tk, x) if drift is not None else 0.0
        out[:, i + 1] = x + b * dx + diffusion(tk, x) * dw[:, i]
        if not np.all(np.isfinite(out[:, i + 1])):
            raise IntegrationDivergedError("Euler scheme produced non-finite values",
                                           step=ks + i + 1)
    return out


def markov_flow_values(ks, kt, eta_values, w_values, dx, drift=None, diffusion=1.0):
    eta_values = np.atleast_2d(eta_values)
    w_values = np.atleast_2d(w_values)
    n = w_values.shape[-1] - 1
    m = kt - ks
    x = euler_values(ks, kt, eta_values[:, -1], w_values, dx, drift, diffusion)
    out = np.empty((max(eta_values.shape[0], w_values.shape[0]), n + 1))
    out[:, :n - m] = eta_values[:, m:n]
    out[:, n - m:] = x
    return out


def flow_markovian(s, t, eta, params, w):
    """Functional Markovian flow: shifted ``eta`` followed by the Euler solution from ``eta(0)``."""
    _check_shared(eta, w)
    ks, kt = _indices(s, t, eta.T, eta.N)
    if ks == kt:
        return eta
    diffusion = params.sigma if params.diffusion is None else params.diffusion
    vals = markov_flow_values(ks, kt, eta.values, w.values, eta.dx, params.drift, diffusion)
    return SampledPath(eta.T, vals[0])


def check_flow_property(s, t, r, eta, w, flow=None):
    """Sup-norm gap between ``Y_r^{s, eta}`` and ``Y_r^{t, Y_t^{s, eta}}``."""
    flow = flow or flow_brownian
    if not s <= t <= r:
        raise DomainError("need s <= t <= r", s=s, t=t, r=r)
    direct = flow(s, r, eta, w)
    composed = flow(t, r, flow(s, t, eta, w), w)
    return float(np.max(np.abs(direct.values - composed.values)))


def markovian_convergence(params, s, t, r, x0, grids=(32, 64, 128), n_paths=64,
                          ref_factor=32):
    """Mean sup-norm gap between the composed Euler flow and a fine-grid reference.

    The coarse drivers are subsamples of one fine Brownian path per sample, so the
    gap isolates the Euler error of ``Y_r^{t, Y_t^{s, eta}}``. Returns one row per
    grid with the ratio to the next finer grid.
    """
    n_fine = max(grids) * ref_factor
    w_fine = brownian_paths(params.seed, params.T, n_fine, np.arange(n_paths))
    diffusion = params.sigma if params.diffusion is None else params.diffusion

    def k(time, n):
        return grid_index(time, params.T / n, 0.0, n)

    ref = markov_flow_values(k(s, n_fine), k(r, n_fine), np.full((1, n_fine + 1), x0),
                             w_fine, params.T / n_fine, params.drift, diffusion)
    rows = []
    for n in grids:
        stride = n_fine // n
        w = w_fine[:, ::stride]
        dx = params.T / n
        eta = np.full((1, n + 1), float(x0))
        mid = markov_flow_values(k(s, n), k(t, n), eta, w, dx, params.drift, diffusion)
        comp = markov_flow_values(k(t, n), k(r, n), mid, w, dx, params.drift, diffusion)
        err = np.max(np.abs(comp - ref[:, ::stride]), axis=1)
        rows.append({"N": n, "deviation": float(np.mean(err)),
                     "se": float(np.std(err, ddof=1) / math.sqrt(n_paths))})
    for a, b in zip(rows, rows[1:]):
        a["ratio"] = a["deviation"] / b["deviation"]
    return rows


def ks_critical(n, m, alpha=KS_ALPHA):
    """Asymptotic two-sample Kolmogorov-Smirnov critical value."""
    return math.sqrt(-0.5 * math.log(alpha / 2.0)) * math.sqrt((n + m) / (n * m))


def check_time_homogeneity(s, t, eta, n_paths, sigma=1.0, seed=0, n_probes=8,
                           alpha=KS_ALPHA):
    """KS statistics comparing the marginals of ``Y_t^{s, eta}`` and ``Y_{t-s}^{0, eta}``.

    The two fields use disjoint path indices, hence independent draws.
    """
    T, N = eta.T, eta.N
    ks, kt = _indices(s, t, T, N)
    paths = np.arange(n_paths, dtype=np.uint64)
    w_a = brownian_paths(seed, T, N, paths)
    w_b = brownian_paths(seed, T, N, paths + np.uint64(n_paths))
    a = flow_values(ks, kt, eta.values, w_a, sigma)
    b = flow_values(0, kt - ks, eta.values, w_b, sigma)
    probes = np.linspace(0, N, n_probes).round().astype(int)
    rows = []
    for j in probes:
        stat = float(stats.ks_2samp(a[:, j], b[:, j]).statistic)
        rows.append({"x": float(-T + j * T / N), "ks": stat})
    crit = ks_critical(n_paths, n_paths, alpha)
    worst = max(r["ks"] for r in rows)
    return {"probes": rows, "max_ks": worst, "critical": crit, "alpha": alpha,
            "pass": worst < crit}


def modulus(values, lag):
    """Empirical modulus of continuity ``max_{|i - j| <= lag} |v_i - v_j|``."""
    values = np.asarray(values, dtype=float)
    best = 0.0
    for l in range(1, min(lag, values.size - 1) + 1):
        best = max(best, float(np.max(np.abs(values[l:] - values[:-l]))))
    return best


def continuity_margin(s, t1, t2, eta, w, sigma=1.0):
    """``2 w_eta(d) + 2 sigma w_W(d) - ||Y_t1 - Y_t2||`` with ``d = |t1 - t2|``; non-negative."""
    y1 = flow_brownian(s, t1, eta, w, sigma)
    y2 = flow_brownian(s, t2, eta, w, sigma)
    lag = abs(_indices(0.0, t1, eta.T, eta.N)[1] - _indices(0.0, t2, eta.T, eta.N)[1])
    bound = 2.0 * modulus(eta.values, lag) + 2.0 * sigma * modulus(w.values, lag)
    return bound - float(np.max(np.abs(y1.values - y2.values)))


def growth_margin(t, eta, w, sigma=1.0, constant=BOUND_CONSTANT):
    """``C (1 + ||eta|| + sigma sup|W|) - ||Y_T^{t, eta}||``."""
    y = flow_brownian(t, eta.T, eta, w, sigma)
    bound = constant * (1.0 + eta.sup_norm() + sigma * float(np.max(np.abs(w.values))))
    return bound - y.sup_norm()
