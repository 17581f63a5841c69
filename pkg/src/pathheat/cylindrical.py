"""Explicit solution of the path-dependent heat equation for cylindrical payoffs.

The terminal functional is ``H(eta) = f(y_1, ..., y_n)`` with features
``y_i = int_{[-T,0]} phi_i(x + T) d^- eta(x)``. The solution is
``u(t, eta) = Psi(t, y(t, eta))`` where ``Psi(t, y) = E f(y + sigma Z_t)`` and
``Z_t ~ N(0, Sigma_t)``, ``Sigma_t = int_t^T phi phi^T ds``.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import hermite_e, legendre

from .errors import DegenerateError, DomainError, SingularGramError
from .flows import brownian_paths
from .paths import Kernel2, PathMeasure, SampledPath, grid_index, integrate_samples, window_values
from .regcalc import BVFunction, IntervalSpec, Mode, density_measure, forward_integral
from .rng import STREAM_OUTER

MAX_DIM = 4
DET_FLOOR = 1e-12
_SIMPSON_PANELS = 512
_TAIL = 12.0  # whitened half-width for split quadrature
_NODE_BUDGET = 2_000_000


# -- building blocks ---------------------------------------------------------

@dataclass(frozen=True)
class Basis:
    """A C^2 weight function on [0, T] with its first two derivatives."""

    phi: object
    dphi: object
    ddphi: object
    name: str = "custom"

    def __call__(self, s):
        return self.phi(s)


def poly_basis(coefs):
    """``phi(s) = sum_k coefs[k] s^k``."""
    p = np.polynomial.Polynomial(coefs)
    dp, ddp = p.deriv(1), p.deriv(2)

    def wrap(q):
        return lambda s: q(np.asarray(s, dtype=float)) + 0.0 * np.asarray(s, dtype=float)

    return Basis(wrap(p), wrap(dp), wrap(ddp), f"poly{list(coefs)}")


def cos_basis(freq, phase=0.0):
    """``phi(s) = cos(freq * s + phase)``."""
    return Basis(lambda s: np.cos(freq * np.asarray(s) + phase),
                 lambda s: -freq * np.sin(freq * np.asarray(s) + phase),
                 lambda s: -freq ** 2 * np.cos(freq * np.asarray(s) + phase),
                 f"cos({freq}s+{phase})")


def basis_from_config(cfg):
    kind = cfg.get("kind", "poly")
    if kind == "poly":
        return poly_basis(cfg["coef"])
    if kind == "cos":
        return cos_basis(cfg["freq"], cfg.get("phase", 0.0))
    raise DomainError(f"unknown basis kind {kind!r}")


@dataclass(frozen=True, eq=False)
class Payoff:
    """Outer function ``f: R^n -> R`` acting on the last axis of its argument.

    ``kinks`` lists locations in the first coordinate where ``f`` is not
    smooth; quadrature is split there.
    """

    name: str
    n: int
    fn: object
    continuous: bool = True
    kinks: tuple = ()
    grad: object = None
    hess: object = None
    growth: float = 1.0

    def __call__(self, y):
        return self.fn(np.asarray(y, dtype=float))


def payoff(name, n=None, strike=0.0, table=None):
    """Builtin outer functions: ``linear``, ``square``, ``call``, ``sum2``, ``tabulated``."""
    if name == "linear":
        n = n or 1
        return Payoff("linear", n, lambda y: y.sum(axis=-1),
                      grad=lambda y: np.ones_like(y),
                      hess=lambda y: np.zeros(y.shape + (n,)))
    if name == "square":
        n = n or 1

        def hess(y):
            h = np.zeros(y.shape + (n,))
            h[..., 0, 0] = 2.0
            return h

        def grad(y):
            g = np.zeros_like(y)
            g[..., 0] = 2.0 * y[..., 0]
            return g

        return Payoff("square", n, lambda y: y[..., 0] ** 2, grad=grad, hess=hess, growth=2.0)
    if name == "call":
        return Payoff("call", n or 1, lambda y: np.maximum(y[..., 0] - strike, 0.0),
                      kinks=(float(strike),))
    if name == "sum2":
        if n not in (None, 2):
            raise DomainError("sum2 needs n = 2")

        def hess(y):
            h = np.zeros(y.shape + (2,))
            h[..., 0, 0] = 2.0
            return h

        def grad(y):
            g = np.ones_like(y)
            g[..., 0] = 2.0 * y[..., 0]
            return g

        return Payoff("sum2", 2, lambda y: y[..., 0] ** 2 + y[..., 1], grad=grad, hess=hess,
                      growth=2.0)
    if name == "tabulated":
        xs = np.asarray(table["x"], dtype=float)
        ys = np.asarray(table["y"], dtype=float)
        return Payoff("tabulated", 1, lambda y: np.interp(y[..., 0], xs, ys),
                      kinks=tuple(xs.tolist()))
    raise DomainError(f"unknown payoff {name!r}")


@dataclass(frozen=True, eq=False)
class CylindricalSpec:
    basis: tuple
    payoff: Payoff
    sigma: float
    T: float
    N: int = 512
    det_floor: float = DET_FLOOR
    _grams: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "basis", tuple(self.basis))
        if self.n != self.payoff.n:
            raise DomainError("payoff dimension does not match the basis",
                              n_basis=self.n, n_payoff=self.payoff.n)
        if not 1 <= self.n <= MAX_DIM:
            raise DomainError(f"dimension must be between 1 and {MAX_DIM}", n=self.n)
        if self.sigma < 0:
            raise DomainError("sigma must be non-negative", sigma=self.sigma)
        _check_basis(self)
        _check_growth(self)

    @property
    def n(self):
        return len(self.basis)

    def phi(self, s):
        return np.stack([b.phi(np.asarray(s, dtype=float)) for b in self.basis], axis=-1)

    def dphi(self, s):
        return np.stack([b.dphi(np.asarray(s, dtype=float)) for b in self.basis], axis=-1)

    def ddphi(self, s):
        return np.stack([b.ddphi(np.asarray(s, dtype=float)) for b in self.basis], axis=-1)

    def quad_order(self):
        return {1: 64, 2: 64, 3: 16, 4: 10}[self.n]


def _check_basis(spec, const=10.0):
    s = np.linspace(0.0, spec.T, spec.N + 1)
    h = s[1] - s[0]
    for b, dname in ((spec.phi, "dphi"), (spec.dphi, "ddphi")):
        v = b(s)
        d = getattr(spec, dname)(s)
        slope = np.diff(v, axis=0) / h
        mid = 0.5 * (d[1:] + d[:-1])
        scale = 1.0 + np.max(np.abs(d))
        if np.max(np.abs(slope - mid)) > const * scale * h:
            raise DomainError("basis derivative samples are inconsistent", which=dname)


def _check_growth(spec, n_probe=64, factor=4.0):
    rng = np.random.default_rng(0)
    y = rng.normal(size=(n_probe, spec.n)) * np.logspace(-1, 3, n_probe)[:, None]
    vals = np.abs(spec.payoff(y))
    bound = factor * (1.0 + np.linalg.norm(y, axis=-1)) ** spec.payoff.growth
    if np.any(vals > bound * max(1.0, np.abs(spec.payoff(np.zeros(spec.n))))):
        raise DomainError("payoff exceeds its declared growth bound", payoff=spec.payoff.name)


# -- Gaussian kernel ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GramMatrix:
    t: float
    sigma: np.ndarray
    chol: np.ndarray
    inv: np.ndarray
    logdet: float

    @property
    def det(self):
        return math.exp(self.logdet)


def gram_matrix_raw(spec, t):
    """``int_t^T phi_i phi_j ds`` by composite Simpson quadrature."""
    if not 0.0 <= t <= spec.T:
        raise DomainError("t outside [0, T]", t=t)
    if t == spec.T:
        return np.zeros((spec.n, spec.n))
    s = np.linspace(t, spec.T, _SIMPSON_PANELS + 1)
    w = np.full(s.size, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    w *= (s[1] - s[0]) / 3.0
    ph = spec.phi(s)
    m = np.einsum("k,ki,kj->ij", w, ph, ph)
    return 0.5 * (m + m.T)


def gram(spec, t):
    """Gram matrix at ``t`` with Cholesky factor; :class:`SingularGramError` below the floor."""
    key = float(t)
    if key in spec._grams:
        return spec._grams[key]
    m = gram_matrix_raw(spec, t)
    det = float(np.linalg.det(m))
    try:
        chol = np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise SingularGramError("Gram matrix is not positive definite", t=t, det=det) from None
    if not det > spec.det_floor:
        raise SingularGramError("Gram determinant below floor", t=t, det=det,
                                floor=spec.det_floor)
    inv = np.linalg.inv(m)
    g = GramMatrix(float(t), m, chol, 0.5 * (inv + inv.T),
                   2.0 * float(np.sum(np.log(np.diag(chol)))))
    spec._grams[key] = g
    return g


def gaussian_p(g, z):
    """Centered Gaussian density with covariance ``g.sigma`` at ``z`` (last axis)."""
    z = np.asarray(z, dtype=float)
    n = g.sigma.shape[0]
    q = np.einsum("...i,ij,...j->...", z, g.inv, z)
    return np.exp(-0.5 * q - 0.5 * g.logdet - 0.5 * n * math.log(2.0 * math.pi))


def gaussian_dp(g, phi_t, z, relative=False):
    """Time, gradient and Hessian derivatives of the Gaussian density.

    The covariance evolves as ``dSigma/dt = -phi(t) phi(t)^T``. With
    ``relative=True`` every derivative is divided by the density itself.
    """
    z = np.asarray(z, dtype=float)
    phi_t = np.asarray(phi_t, dtype=float)
    sz = z @ g.inv  # Sigma^{-1} z (inv symmetric)
    v = g.inv @ phi_t
    # d/dt log p = 1/2 phi' S^-1 phi - 1/2 (phi' S^-1 z)^2
    dt = 0.5 * float(phi_t @ v) - 0.5 * (sz @ phi_t) ** 2
    grad = -sz
    hess = sz[..., :, None] * sz[..., None, :] - g.inv
    if relative:
        return dt, grad, hess
    p = gaussian_p(g, z)
    return dt * p, grad * p[..., None], hess * p[..., None, None]


# -- Psi -----------------------------------------------------------------------

@dataclass
class PsiDerivs:
    value: np.ndarray
    dt: np.ndarray
    grad: np.ndarray
    hess: np.ndarray


def _tensor(nodes_1d, weights_1d, n):
    mesh = np.meshgrid(*([nodes_1d] * n), indexing="ij")
    xi = np.stack([m.ravel() for m in mesh], axis=-1)
    wm = np.meshgrid(*([weights_1d] * n), indexing="ij")
    w = np.prod(np.stack([m.ravel() for m in wm], axis=-1), axis=-1)
    return xi, w


def _gh(q):
    x, w = hermite_e.hermegauss(q)
    return x, w / math.sqrt(2.0 * math.pi)


def _whitened_nodes(spec, g, y):
    """Quadrature nodes ``xi`` (B, M, n) and weights (B, M) for ``E h(L xi)``."""
    n = spec.n
    q = spec.quad_order()
    b = y.shape[0]
    kinks = spec.payoff.kinks
    if not kinks or spec.sigma == 0:
        xi, w = _tensor(*_gh(q), n)
        return np.broadcast_to(xi, (b,) + xi.shape), np.broadcast_to(w, (b, w.size))
    # split the first whitened axis at every kink of the payoff
    l11 = g.chol[0, 0]
    cuts = (np.asarray(kinks)[None, :] - y[:, :1]) / (spec.sigma * l11)
    cuts = np.sort(np.clip(cuts, -_TAIL, _TAIL), axis=1)
    edges = np.concatenate((np.full((b, 1), -_TAIL), cuts, np.full((b, 1), _TAIL)), axis=1)
    q_seg = 2 * q if len(kinks) == 1 else 16
    lx, lw = legendre.leggauss(q_seg)
    lo, hi = edges[:, :-1, None], edges[:, 1:, None]
    x0 = (0.5 * (hi - lo) * lx + 0.5 * (hi + lo)).reshape(b, -1)
    w0 = (0.5 * (hi - lo) * lw).reshape(b, -1) * np.exp(-0.5 * x0 ** 2) / math.sqrt(2 * math.pi)
    if n == 1:
        return x0[..., None], w0
    rest, wr = _tensor(*_gh(q), n - 1)
    m0, mr = x0.shape[1], rest.shape[0]
    xi = np.empty((b, m0, mr, n))
    xi[..., 0] = x0[:, :, None]
    xi[..., 1:] = rest[None, None, :, :]
    w = w0[:, :, None] * wr[None, None, :]
    return xi.reshape(b, m0 * mr, n), w.reshape(b, m0 * mr)


def _as_batch(spec, y):
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    y = y.reshape(-1, spec.n)
    return y, single


def psi(spec, t, y):
    """``Psi(t, y) = E f(y + sigma Z_t)``; exactly ``f(y)`` at ``t = T``."""
    if t > spec.T:
        raise DomainError("t beyond the horizon", t=t, T=spec.T)
    yb, single = _as_batch(spec, y)
    if t == spec.T:
        out = spec.payoff(yb)
    elif spec.sigma == 0:
        if not spec.payoff.continuous:
            raise DegenerateError("sigma = 0 with a discontinuous payoff", t=t)
        out = spec.payoff(yb)
    else:
        g = gram(spec, t)
        xi, w = _whitened_nodes(spec, g, yb)
        z = xi @ g.chol.T
        out = np.sum(w * spec.payoff(yb[:, None, :] + spec.sigma * z), axis=1)
    return float(out[0]) if single else out


def psi_derivs(spec, t, y):
    """``Psi`` with its time derivative, gradient and Hessian in ``y``.

    The derivatives integrate ``f`` against the differentiated Gaussian kernel,
    so they hold for non-smooth ``f``; the time derivative uses the kernel's
    own time derivative and never the heat equation.
    """
    if not t < spec.T:
        raise DomainError("derivatives need t < T", t=t, T=spec.T)
    yb, single = _as_batch(spec, y)
    if spec.sigma == 0:
        pf = spec.payoff
        if pf.grad is None or pf.hess is None:
            raise DegenerateError("sigma = 0 needs analytic payoff derivatives", t=t)
        res = PsiDerivs(pf(yb), np.zeros(yb.shape[0]), pf.grad(yb), pf.hess(yb))
    else:
        g = gram(spec, t)
        phi_t = spec.phi(t)
        if not spec.payoff.kinks:
            # nodes shared by every y: kernel ratios are computed once
            xi, w = _tensor(*_gh(spec.quad_order()), spec.n)
            res = _contract(spec, g, phi_t, yb, xi @ g.chol.T, w)
        else:
            parts = []
            step = max(1, _NODE_BUDGET // (4 * spec.quad_order()) ** spec.n)
            for lo in range(0, yb.shape[0], step):
                yc = yb[lo:lo + step]
                xi, w = _whitened_nodes(spec, g, yc)
                parts.append(_contract(spec, g, phi_t, yc, xi @ g.chol.T, w))
            res = PsiDerivs(*(np.concatenate([getattr(p, f) for p in parts])
                              for f in ("value", "dt", "grad", "hess")))
    if single:
        return PsiDerivs(float(res.value[0]), float(res.dt[0]), res.grad[0], res.hess[0])
    return res


def _contract(spec, g, phi_t, y, z, w):
    # z: (M, n) shared nodes or (B, M, n) per-point nodes; w matches without the last axis
    n, s = spec.n, spec.sigma
    fz = w * spec.payoff(y[:, None, :] + s * z)
    dt_r, grad_r, hess_r = gaussian_dp(g, phi_t, z, relative=True)
    if z.ndim == 2:
        return PsiDerivs(fz.sum(axis=1), fz @ dt_r, -(fz @ grad_r) / s,
                         (fz @ hess_r.reshape(-1, n * n)).reshape(-1, n, n) / s ** 2)
    return PsiDerivs(fz.sum(axis=1), np.sum(fz * dt_r, axis=1),
                     -np.einsum("bm,bmi->bi", fz, grad_r) / s,
                     np.einsum("bm,bmij->bij", fz, hess_r) / s ** 2)


# -- features and the solution -----------------------------------------------

def _time_index(eta, t):
    return grid_index(t, eta.dx, 0.0, eta.N)


def features(spec, t, eta, mode=Mode.CLOSED):
    """``y_i = int phi_i(x + t) d^- eta(x)`` over [-t, 0] (CLOSED) or ]-t, 0] (OPEN)."""
    _time_index(eta, t)
    mode = Mode(mode)
    if mode is Mode.CLOSED:
        return features_batch(spec, t, eta.values[None, :], eta.T)[0]
    out = np.empty(spec.n)
    for i, b in enumerate(spec.basis):
        mu = _shifted_density(eta, t, b.phi, b.dphi)
        out[i] = forward_integral(mu, BVFunction(eta, is_bv=False),
                                  IntervalSpec(-t, 0.0, Mode.OPEN)).value
    return out


def features_batch(spec, t, eta_values, T=None):
    """CLOSED features for a batch of paths ``(P, N + 1)`` on [-T, 0]."""
    T = spec.T if T is None else T
    n_grid = eta_values.shape[-1] - 1
    x = -T + (T / n_grid) * np.arange(n_grid + 1)
    dphi = spec.dphi(np.clip(x + t, 0.0, None))
    eta0 = eta_values[:, -1]
    integrals = np.stack([integrate_samples(x, eta_values * dphi[:, i], -t, 0.0)
                          for i in range(spec.n)], axis=-1)
    return eta0[:, None] * spec.phi(t)[None, :] - integrals


def _shifted_density(eta, t, fn, dfn):
    x = eta.grid
    inside = x >= -t - 1e-12 * eta.T
    s = np.clip(x + t, 0.0, None)
    vals = np.where(inside, fn(s), 0.0)
    ders = np.where(inside, dfn(s), 0.0)
    return density_measure(SampledPath(eta.T, vals), SampledPath(eta.T, ders), support_lo=-t)


def u_cyl(spec, t, eta):
    """Solution value ``Psi(t, features(t, eta))``; ``H(eta)`` exactly at ``t = T``."""
    y = features(spec, t, eta)
    if t == spec.T:
        return float(spec.payoff(y))
    return psi(spec, t, y)


def du_cyl(spec, t, eta):
    """First Frechet derivative as a :class:`PathMeasure` (atom at 0 plus density on [-t, 0])."""
    d = psi_derivs(spec, t, features(spec, t, eta))
    x = eta.grid
    inside = x >= -t - 1e-12 * eta.T
    s = np.clip(x + t, 0.0, None)
    dens = np.where(inside, -spec.dphi(s) @ d.grad, 0.0)
    ddens = np.where(inside, -spec.ddphi(s) @ d.grad, 0.0)
    return PathMeasure(eta.T, atom0=float(d.grad @ spec.phi(t)),
                       density=SampledPath(eta.T, dens),
                       density_derivative=SampledPath(eta.T, ddens), support_lo=-t)


def d2u_cyl(spec, t, eta):
    """Second Frechet derivative as a :class:`Kernel2`.

    Cross and plane parts carry first derivatives of the weights, obtained by
    differentiating the density of :func:`du_cyl` once more.
    """
    d = psi_derivs(spec, t, features(spec, t, eta))
    hmat = d.hess
    phit = spec.phi(t)
    x = eta.grid
    inside = x >= -t - 1e-12 * eta.T
    dph = np.where(inside[:, None], spec.dphi(np.clip(x + t, 0.0, None)), 0.0)
    cross_x = -dph @ (hmat @ phit)
    cross_y = -dph @ (hmat.T @ phit)
    plane = [(hmat[i, j], SampledPath(eta.T, dph[:, i]), SampledPath(eta.T, dph[:, j]))
             for i in range(spec.n) for j in range(spec.n) if hmat[i, j] != 0.0]
    return Kernel2(eta.T, float(phit @ hmat @ phit), SampledPath(eta.T, cross_x),
                   SampledPath(eta.T, cross_y), tuple(plane), support_lo=-t)


def feature_time_derivative(spec, t, eta):
    """``d/dt y_i(t, eta) = eta(0) phi_i'(t) - eta(-t) phi_i'(0+) - int eta(x) phi_i''(x + t) dx``."""
    x = eta.grid
    s = np.clip(x + t, 0.0, None)
    dd = spec.ddphi(s)
    integral = np.array([integrate_samples(x, eta.values * dd[:, i], -t, 0.0)
                         for i in range(spec.n)])
    return eta(0.0) * spec.dphi(t) - eta(-t) * spec.dphi(0.0) - integral


def dtu_cyl(spec, t, eta):
    d = psi_derivs(spec, t, features(spec, t, eta))
    return float(d.dt + d.grad @ feature_time_derivative(spec, t, eta))


def residual_cyl(spec, t, eta):
    """``d_t u + int_{]-t,0]} D^ac u d^- eta + sigma^2/2 D^2 u({0,0})``; vanishes for a solution."""
    du = du_cyl(spec, t, eta)
    ac = density_measure(du.density, du.density_derivative, support_lo=-t)
    drift = forward_integral(ac, BVFunction(eta, is_bv=False),
                             IntervalSpec(-t, 0.0, Mode.OPEN)).value
    atom00 = d2u_cyl(spec, t, eta).atom00
    return dtu_cyl(spec, t, eta) + drift + 0.5 * spec.sigma ** 2 * atom00


def u_cyl_batch(spec, t, eta_values):
    """Vectorized :func:`u_cyl` over paths ``(P, N + 1)``."""
    y = features_batch(spec, t, eta_values)
    if t == spec.T:
        return spec.payoff(y)
    return psi(spec, t, y)


def delta0_batch(spec, t, eta_values):
    """Atom at 0 of the first derivative, ``sum_i d_i Psi phi_i(t)``, for a batch of paths."""
    d = psi_derivs(spec, t, features_batch(spec, t, eta_values))
    return d.grad @ spec.phi(t)


def spec_from_config(cfg):
    basis = [basis_from_config(b) for b in cfg["phi"]]
    pf = payoff(cfg["f"], n=len(basis), strike=cfg.get("strike", 0.0), table=cfg.get("table"))
    return CylindricalSpec(tuple(basis), pf, float(cfg.get("sigma", 1.0)),
                           float(cfg.get("T", 1.0)), int(cfg.get("N", 512)))


def martingale_check(spec, times, n_paths, seed, N=256):
    """``E u(t, sigma W_t(.)) - u(0, 0)`` for each ``t`` with its standard error."""
    zero = SampledPath.constant(0.0, spec.T, N)
    u0 = u_cyl(spec, 0.0, zero)
    w = spec.sigma * brownian_paths(seed, spec.T, N, np.arange(n_paths), stream=STREAM_OUTER)
    rows = []
    for t in times:
        k = grid_index(t, spec.T / N, 0.0, N)
        vals = u_cyl_batch(spec, t, window_values(w, k))
        dev = float(np.mean(vals)) - u0
        se = float(np.std(vals, ddof=1) / math.sqrt(n_paths))
        rows.append({"t": t, "mean": float(np.mean(vals)), "u0": u0, "deviation": dev,
                     "se": se, "pass": abs(dev) <= 3.0 * se + 1e-12 * (1.0 + abs(u0))})
    return rows
