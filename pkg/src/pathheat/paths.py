"""Paths on uniform grids, finite measures on [-T, 0] and second-order kernels.

A :class:`SampledPath` lives on ``x_k = -T + k*dx`` and a :class:`Trajectory`
on ``t_k = k*dx``; both are read as their linear interpolants. Derivative
objects (:class:`PathMeasure`, :class:`Kernel2`) carry densities as sampled
paths and pair with test paths by the trapezoid rule on the shared grid.
"""

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, GridError

SNAP_TOL = 1e-9
DENSE_CAP = 513


def _frozen(values):
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def grid_index(x, dx, origin=0.0, n_max=None):
    """Index ``k`` with ``origin + k*dx == x``; raises :class:`GridError` if off-grid."""
    pos = (x - origin) / dx
    k = int(round(pos))
    if abs(pos - k) > SNAP_TOL * max(1.0, abs(pos)):
        raise GridError(f"{x!r} is not a grid point (spacing {dx!r})", value=x, dx=dx)
    if k < 0 or (n_max is not None and k > n_max):
        raise DomainError(f"{x!r} lies outside the grid", value=x)
    return k


@dataclass(frozen=True)
class _Uniform:
    T: float
    values: np.ndarray

    def __post_init__(self):
        if not self.T > 0:
            raise DomainError("horizon T must be positive", T=self.T)
        vals = _frozen(self.values)
        if vals.ndim != 1 or vals.size < 2:
            raise DomainError("need at least two samples", shape=vals.shape)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "T", float(self.T))

    @property
    def N(self):
        return self.values.size - 1

    @property
    def dx(self):
        return self.T / self.N

    def __eq__(self, other):
        return (type(self) is type(other) and self.T == other.T
                and np.array_equal(self.values, other.values))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SampledPath(_Uniform):
    """Continuous path on [-T, 0] stored at ``N + 1`` uniform nodes."""

    kind = "path"

    @property
    def grid(self):
        return -self.T + self.dx * np.arange(self.N + 1)

    def __call__(self, x):
        return eval_path(self, x)

    @classmethod
    def from_function(cls, fn, T, N):
        x = -T + (T / N) * np.arange(N + 1)
        return cls(T, np.broadcast_to(np.asarray(fn(x), dtype=float), x.shape))

    @classmethod
    def constant(cls, c, T, N):
        return cls(T, np.full(N + 1, float(c)))

    def sup_norm(self):
        return float(np.max(np.abs(self.values)))


@dataclass(frozen=True, eq=False)
class Trajectory(_Uniform):
    """Real path on [0, T]; ``values[0]`` is the initial value."""

    kind = "trajectory"

    @property
    def grid(self):
        return self.dx * np.arange(self.N + 1)

    def step(self, t):
        return grid_index(t, self.dx, 0.0, self.N)

    def __call__(self, t):
        return float(np.interp(t, self.grid, self.values))


def eval_path(p, x):
    """Linear interpolation of ``p`` at ``x`` in [-T, 0]; exact at grid nodes."""
    xa = np.asarray(x, dtype=float)
    tol = SNAP_TOL * p.T
    if np.any(xa < -p.T - tol) or np.any(xa > tol):
        raise DomainError(f"evaluation point outside [-{p.T}, 0]", x=xa.tolist())
    pos = (np.clip(xa, -p.T, 0.0) + p.T) / p.dx
    near = np.round(pos)
    pos = np.where(np.abs(pos - near) <= SNAP_TOL * np.maximum(1.0, pos), near, pos)
    k = np.clip(np.floor(pos).astype(int), 0, p.N - 1)
    w = pos - k
    v = p.values
    out = (1.0 - w) * v[k] + w * v[k + 1]
    return float(out) if out.ndim == 0 else out


def window(traj, t):
    """Window of ``traj`` at grid time ``t``: ``eta(x) = traj(t + x)``, frozen at traj(0) before 0."""
    k = traj.step(t)
    return SampledPath(traj.T, window_values(traj.values, k))


def window_values(values, k):
    """Batch window: ``values`` has shape ``(..., N + 1)``; returns the same shape."""
    n = values.shape[-1] - 1
    idx = np.maximum(np.arange(n + 1) + k - n, 0)
    return values[..., idx]


def integrate_samples(grid, y, lo, hi):
    """Trapezoid integral of sampled ``y`` over ``[lo, hi]`` (exact for the interpolant)."""
    if hi <= lo:
        return np.zeros(np.shape(y)[:-1]) if np.ndim(y) > 1 else 0.0
    inner = (grid > lo) & (grid < hi)
    xs = np.concatenate(([lo], grid[inner], [hi]))
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        ys = np.concatenate(([np.interp(lo, grid, y)], y[inner], [np.interp(hi, grid, y)]))
        return float(np.trapezoid(ys, xs))
    ylo = _interp_rows(grid, y, lo)
    yhi = _interp_rows(grid, y, hi)
    ys = np.concatenate((ylo[..., None], y[..., inner], yhi[..., None]), axis=-1)
    return np.trapezoid(ys, xs, axis=-1)


def _interp_rows(grid, y, x):
    dx = grid[1] - grid[0]
    pos = (x - grid[0]) / dx
    k = min(max(int(math.floor(pos)), 0), grid.size - 2)
    w = pos - k
    if abs(w) < SNAP_TOL:
        return y[..., k]
    if abs(w - 1.0) < SNAP_TOL:
        return y[..., k + 1]
    return (1.0 - w) * y[..., k] + w * y[..., k + 1]


def _same_horizon(a, b):
    if not math.isclose(a.T, b.T, rel_tol=1e-12):
        raise DomainError("objects live on different horizons", T1=a.T, T2=b.T)


@dataclass(frozen=True)
class PathMeasure:
    """Finite signed measure on [-T, 0]: ``atom0*delta_0 + sum w_i delta_{x_i} + density dx``.

    The density vanishes left of ``support_lo`` (defaults to -T); its value at
    ``support_lo`` is the right limit. ``density_derivative`` optionally holds
    analytic derivative samples used for Stieltjes integrals against the density.
    """

    T: float
    atom0: float = 0.0
    atoms: tuple = ()
    density: SampledPath = None
    density_derivative: SampledPath = None
    support_lo: float = None
    density_bv: bool = True

    def __post_init__(self):
        atoms = tuple((float(x), float(w)) for x, w in self.atoms)
        for x, _ in atoms:
            if not (-self.T - SNAP_TOL <= x < 0.0):
                raise DomainError("atom locations must lie in [-T, 0)", x=x)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "atom0", float(self.atom0))
        lo = -self.T if self.support_lo is None else float(self.support_lo)
        object.__setattr__(self, "support_lo", lo)
        for d in (self.density, self.density_derivative):
            if d is not None:
                _same_horizon(self, d)

    @classmethod
    def dirac0(cls, T, weight=1.0):
        return cls(T, atom0=weight)

    @property
    def has_density(self):
        return self.density is not None

    def density_values(self):
        """Density samples with zeros enforced left of the support."""
        d = self.density
        if d is None:
            return None
        return np.where(d.grid >= self.support_lo - SNAP_TOL * self.T, d.values, 0.0)

    def total_variation(self):
        tv = abs(self.atom0) + sum(abs(w) for _, w in self.atoms)
        if self.density is not None:
            tv += integrate_samples(self.density.grid, np.abs(self.density.values),
                                    self.support_lo, 0.0)
        return float(tv)


def pair_measure(mu, g):
    """Duality pairing ``<mu, g>`` of a measure with a continuous path."""
    _same_horizon(mu, g)
    val = mu.atom0 * g(0.0)
    for x, w in mu.atoms:
        val += w * g(x)
    if mu.density is not None:
        d = mu.density
        gv = g.values if g.N == d.N else eval_path(g, d.grid)
        val += integrate_samples(d.grid, d.values * gv, mu.support_lo, 0.0)
    return float(val)


@dataclass(frozen=True)
class Kernel2:
    """Second-derivative object on [-T, 0]^2.

    ``atom00`` weighs delta_0 x delta_0; ``cross_x`` is a density in x paired
    with delta_0(dy) and ``cross_y`` the mirror; ``plane`` is a sum of separable
    terms ``(c, g, h)`` meaning ``c * g(x) h(y) dx dy`` plus an optional dense
    grid. Densities vanish left of ``support_lo``.
    """

    T: float
    atom00: float = 0.0
    cross_x: SampledPath = None
    cross_y: SampledPath = None
    plane: tuple = ()
    dense: np.ndarray = None
    support_lo: float = None

    def __post_init__(self):
        object.__setattr__(self, "atom00", float(self.atom00))
        object.__setattr__(self, "plane", tuple((float(c), g, h) for c, g, h in self.plane))
        lo = -self.T if self.support_lo is None else float(self.support_lo)
        object.__setattr__(self, "support_lo", lo)
        if self.dense is not None:
            dense = _frozen(self.dense)
            if dense.ndim != 2 or dense.shape[0] != dense.shape[1]:
                raise DomainError("dense kernel must be a square grid", shape=dense.shape)
            if dense.shape[0] > DENSE_CAP:
                raise DomainError(f"dense kernel grid capped at {DENSE_CAP} nodes",
                                  shape=dense.shape)
            object.__setattr__(self, "dense", dense)

    @classmethod
    def zero(cls, T):
        return cls(T)

    def _int(self, density, g):
        gv = g.values if g.N == density.N else eval_path(g, density.grid)
        return integrate_samples(density.grid, density.values * gv, self.support_lo, 0.0)

    def pair(self, g, h):
        """``<K, g (x) h>`` for continuous paths ``g`` (x slot) and ``h`` (y slot)."""
        _same_horizon(self, g)
        _same_horizon(self, h)
        g0, h0 = g(0.0), h(0.0)
        val = self.atom00 * g0 * h0
        if self.cross_x is not None:
            val += self._int(self.cross_x, g) * h0
        if self.cross_y is not None:
            val += g0 * self._int(self.cross_y, h)
        for c, gi, hi in self.plane:
            val += c * self._int(gi, g) * self._int(hi, h)
        if self.dense is not None:
            n = self.dense.shape[0] - 1
            grid = -self.T + (self.T / n) * np.arange(n + 1)
            w = _trapz_weights(grid, self.support_lo)
            gv, hv = eval_path(g, grid), eval_path(h, grid)
            val += float((w * gv) @ self.dense @ (w * hv))
        return float(val)

    def pair_box(self, lo_x, lo_y):
        """Pairing with the indicator of ``[lo_x, 0] x [lo_y, 0]`` (both contain 0)."""
        val = self.atom00
        if self.cross_x is not None:
            val += _int_range(self.cross_x, max(lo_x, self.support_lo))
        if self.cross_y is not None:
            val += _int_range(self.cross_y, max(lo_y, self.support_lo))
        for c, gi, hi in self.plane:
            val += (c * _int_range(gi, max(lo_x, self.support_lo))
                    * _int_range(hi, max(lo_y, self.support_lo)))
        if self.dense is not None:
            n = self.dense.shape[0] - 1
            grid = -self.T + (self.T / n) * np.arange(n + 1)
            wx = _trapz_weights(grid, max(lo_x, self.support_lo))
            wy = _trapz_weights(grid, max(lo_y, self.support_lo))
            val += float(wx @ self.dense @ wy)
        return float(val)

    def swapped(self):
        """Kernel with the two arguments exchanged."""
        return Kernel2(self.T, self.atom00, self.cross_y, self.cross_x,
                       tuple((c, h, g) for c, g, h in self.plane),
                       None if self.dense is None else self.dense.T,
                       self.support_lo)


def _int_range(density, lo):
    return integrate_samples(density.grid, density.values, lo, 0.0)


def _trapz_weights(grid, lo):
    # trapezoid weights on nodes >= lo; lo is expected on the grid
    dx = grid[1] - grid[0]
    w = np.where(grid >= lo - SNAP_TOL * dx, dx, 0.0)
    first = int(np.argmax(w > 0))
    w[first] *= 0.5
    w[-1] *= 0.5
    return w


# -- serialization -----------------------------------------------------------

def _fmt(v):
    return repr(float(v))


def save_path(obj, stem):
    """Write ``stem.csv`` (x, value) and ``stem.json`` (envelope) for a path,
    trajectory or measure; floats use shortest round-trip formatting."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(obj, PathMeasure):
        samples = obj.density
        env = {"T": obj.T, "N": None if samples is None else samples.N, "kind": "measure",
               "atom0": obj.atom0, "atoms": [list(a) for a in obj.atoms],
               "support_lo": obj.support_lo, "density_bv": obj.density_bv}
    else:
        samples = obj
        env = {"T": obj.T, "N": obj.N, "kind": obj.kind}
    stem.with_suffix(".json").write_text(json.dumps(env, indent=2) + "\n")
    with open(stem.with_suffix(".csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "value"])
        if samples is not None:
            for x, v in zip(samples.grid, samples.values):
                w.writerow([_fmt(x), _fmt(v)])


def load_path(stem):
    stem = Path(stem)
    env = json.loads(stem.with_suffix(".json").read_text())
    with open(stem.with_suffix(".csv"), newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    values = np.array([float(r[1]) for r in rows])
    T = float(env["T"])
    kind = env["kind"]
    if kind == "path":
        return SampledPath(T, values)
    if kind == "trajectory":
        return Trajectory(T, values)
    if kind == "measure":
        density = SampledPath(T, values) if values.size else None
        return PathMeasure(T, env["atom0"], tuple(tuple(a) for a in env["atoms"]),
                           density, support_lo=env["support_lo"],
                           density_bv=env["density_bv"])
    raise DomainError(f"unknown kind {kind!r}")
