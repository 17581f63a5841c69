import math

import numpy as np
import pytest

from pathheat import clark_ocone as co
from pathheat import cylindrical as cyl
from pathheat import smooth
from pathheat.errors import DomainError
from pathheat.flows import FlowParams, sample_brownian

T = 1.0
ONE = cyl.poly_basis([1.0])


def drv(kind="brownian", N=128, n_paths=2000, seed=0):
    return co.DriverSpec(kind, 1.0, 0.75, N, n_paths, seed, T)


def test_fbm_normalization():
    L = co.fbm_cholesky(64, 0.75, T)
    cov = L @ L.T
    assert cov[-1, -1] == pytest.approx(1.0, rel=1e-12)
    t = np.arange(1, 65) / 64
    np.testing.assert_allclose(np.diag(cov), t ** 1.5, rtol=1e-12)


def test_quadratic_variation_of_mixed_driver():
    x = co.sample_driver(drv("brownian_plus_fbm", N=1024, n_paths=200))
    assert np.mean(co.quadratic_variation(x)) == pytest.approx(T, rel=0.05)


def test_brownian_driver_matches_flow_generator():
    x = co.sample_driver(drv(N=64, n_paths=3, seed=5))
    w = sample_brownian(FlowParams(T, 1.0, 64, seed=5), 2)
    np.testing.assert_array_equal(x[2], w.values)


def test_driver_validation():
    with pytest.raises(DomainError):
        co.DriverSpec("brownian_plus_fbm", hurst=0.4)
    with pytest.raises(DomainError):
        co.DriverSpec("brownian_plus_fbm", N=4096)
    with pytest.raises(ValueError):
        co.DriverSpec("levy")


def test_forward_sum_examples():
    x = co.sample_driver(drv(N=256, n_paths=500))
    np.testing.assert_allclose(co.forward_stochastic_integral(np.ones((500, 256)), x),
                               x[:, -1] - x[:, 0], atol=1e-12)
    assert np.all(co.forward_stochastic_integral(np.zeros((500, 256)), x) == 0.0)
    with pytest.raises(DomainError):
        co.forward_stochastic_integral(np.ones(10), x)


def test_ito_integral_of_brownian_motion():
    n = 1024
    x = co.sample_driver(drv(N=n, n_paths=4000))
    ito = co.forward_stochastic_integral(x[:, :-1], x)
    se = ito.std() / math.sqrt(ito.size)
    assert abs(ito.mean()) <= 3 * se
    err = ito - 0.5 * (x[:, -1] ** 2 - T)
    assert math.sqrt(np.mean(err ** 2)) <= 2.0 / math.sqrt(n)


def test_adapted_builder_sees_only_the_past():
    x = co.sample_driver(drv(N=32, n_paths=4))
    seen = []

    def build(k, t, upto):
        seen.append(upto.shape[1])
        assert t == pytest.approx(k * T / 32)
        return upto[:, -1]

    got = co.adapted_integral(build, x, T)
    assert seen == list(range(1, 33))
    np.testing.assert_allclose(got, co.forward_stochastic_integral(x[:, :-1], x), atol=1e-14)


def test_truncated_window_matches_full_window():
    from pathheat.paths import window_values
    x = co.sample_driver(drv(N=16, n_paths=2))
    for k in (0, 7, 16):
        np.testing.assert_array_equal(co.truncated_window(x[:, :k + 1], 16),
                                      window_values(x, k))


def test_linear_payoff_telescopes():
    solver = co.CylindricalSolver(cyl.CylindricalSpec((ONE,), cyl.payoff("linear"), 1.0, T))
    res = co.representation_check(solver, drv(), (64,))
    assert res["rmse_rel"] <= 1e-12


def test_square_payoff_residual_is_ito_error():
    solver = co.CylindricalSolver(cyl.CylindricalSpec((ONE,), cyl.payoff("square"), 1.0, T))
    d = drv(N=128, n_paths=1000)
    x = co.sample_driver(d)
    builder = solver.builder(x.shape[0], T, 128)
    integral = co.adapted_integral(builder, x, T)
    np.testing.assert_allclose(integral, co.forward_stochastic_integral(2 * x[:, :-1], x),
                               atol=1e-10)
    assert solver.u0(T, 128) == pytest.approx(T, abs=1e-12)


def test_square_payoff_rmse_decreases():
    solver = co.CylindricalSolver(cyl.CylindricalSpec((ONE,), cyl.payoff("square"), 1.0, T))
    res = co.representation_check(solver, drv(n_paths=2000), (64, 256))
    assert res["decreasing"]
    r64, r256 = (r["rmse_rel"] for r in res["rows"])
    # Ito discretization error shrinks like N^{-1/2}
    assert r64 / r256 == pytest.approx(2.0, rel=0.25)


def test_mixed_driver_uses_sigma_only_solution():
    solver = co.CylindricalSolver(cyl.CylindricalSpec((ONE,), cyl.payoff("square"), 1.0, T))
    res = co.representation_check(solver, drv("brownian_plus_fbm", N=512, n_paths=1000),
                                  (512,))
    assert res["rmse_rel"] <= 0.07


def test_smooth_solver_linear_functional():
    H = smooth.functional("linear", [ONE], T)
    solver = co.SmoothSolver(H, 1.0, n_inner=50, seed=1)
    n = 16
    x = co.sample_driver(drv(N=n, n_paths=100))
    h = solver.terminal(x, T)
    integral = co.adapted_integral(solver.builder(x.shape[0], T, n), x, T)
    # trapezoid value minus left-point sum leaves exactly (dt / 2) X_T
    np.testing.assert_allclose(h - integral, -0.5 * (T / n) * x[:, -1], atol=1e-12)


def test_smooth_solver_quadratic_decreases():
    H = smooth.functional("quadratic", [ONE], T)
    solver = co.SmoothSolver(H, 1.0, n_inner=200, seed=1)
    res = co.representation_check(solver, drv(n_paths=200), (8, 32))
    assert res["decreasing"]
