import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from pathheat import cylindrical as cyl
from pathheat.errors import DegenerateError, DomainError, SingularGramError
from pathheat.paths import SampledPath, pair_measure

T = 1.0
ONE = cyl.poly_basis([1.0])
S = cyl.poly_basis([0.0, 1.0])


def spec(basis, pf, sigma=1.0, N=256):
    return cyl.CylindricalSpec(tuple(basis), pf, sigma, T, N)


def wave(N=256, c=1.0):
    return SampledPath.from_function(lambda x: c * (0.3 + np.sin(3 * x) + 0.5 * x), T, N)


SQUARE = spec([ONE], cyl.payoff("square"))
SUM2 = spec([ONE, S], cyl.payoff("sum2"))
CALL = spec([ONE], cyl.payoff("call"))


def test_gram_examples():
    assert cyl.gram(SQUARE, 0.25).sigma == pytest.approx(np.array([[0.75]]), abs=1e-14)
    np.testing.assert_allclose(cyl.gram(SUM2, 0.0).sigma, [[1, 0.5], [0.5, 1 / 3]], atol=1e-14)


def test_gram_singular_at_horizon():
    with pytest.raises(SingularGramError):
        cyl.gram(SQUARE, T)


def test_gram_singular_for_dependent_weights():
    s = spec([ONE, cyl.poly_basis([2.0])], cyl.payoff("linear", 2))
    with pytest.raises(SingularGramError) as exc:
        cyl.gram(s, 0.0)
    assert "det" in exc.value.payload


def test_gaussian_density_at_origin():
    g = cyl.gram(SQUARE, 0.0)
    assert cyl.gaussian_p(g, np.zeros(1)) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-14)


def test_gaussian_derivatives_match_differences():
    g = cyl.gram(SUM2, 0.2)
    phi_t = SUM2.phi(0.2)
    z = np.array([0.3, -0.4])
    dt, grad, hess = cyl.gaussian_dp(g, phi_t, z)
    h = 1e-5
    num_grad = [(cyl.gaussian_p(g, z + h * e) - cyl.gaussian_p(g, z - h * e)) / (2 * h)
                for e in np.eye(2)]
    np.testing.assert_allclose(grad, num_grad, rtol=1e-7)
    num_hess = [[(cyl.gaussian_p(g, z + h * a + h * b) - cyl.gaussian_p(g, z + h * a - h * b)
                  - cyl.gaussian_p(g, z - h * a + h * b) + cyl.gaussian_p(g, z - h * a - h * b))
                 / (4 * h * h) for b in np.eye(2)] for a in np.eye(2)]
    np.testing.assert_allclose(hess, num_hess, rtol=1e-4, atol=1e-7)
    gp, gm = cyl.gram(SUM2, 0.2 + 1e-4), cyl.gram(SUM2, 0.2 - 1e-4)
    num_dt = (cyl.gaussian_p(gp, z) - cyl.gaussian_p(gm, z)) / 2e-4
    assert dt == pytest.approx(num_dt, rel=1e-6)


@pytest.mark.parametrize("t", [0.0, 0.4, 0.9])
def test_psi_square_second_moment(t):
    for y in (-1.3, 0.0, 2.0):
        assert cyl.psi(SQUARE, t, [y]) == pytest.approx(y * y + (T - t), abs=1e-12)


def bachelier(y, s):
    return y * stats.norm.cdf(y / s) + s * stats.norm.pdf(y / s)


def test_bachelier_grid():
    worst = 0.0
    for t in np.linspace(0.0, 0.95, 20):
        ys = np.linspace(-2.0, 2.0, 20)
        got = cyl.psi(CALL, float(t), ys[:, None])
        worst = max(worst, float(np.max(np.abs(got - bachelier(ys, math.sqrt(T - t))))))
    assert worst < 1e-6


# mpmath: s^2 = int_{1/4}^1 cos^2, value y Phi(y/s) + s phi(y/s) at y = 0.3
COS_CALL = 0.452556267319094274491487881405


def test_call_with_cosine_weight():
    s = spec([cyl.cos_basis(1.0)], cyl.payoff("call"))
    assert cyl.psi(s, 0.25, [0.3]) == pytest.approx(COS_CALL, abs=1e-9)


def test_terminal_and_degenerate_cases():
    assert cyl.psi(CALL, T, [-0.5]) == 0.0
    assert cyl.psi(CALL, T, [0.7]) == 0.7
    flat = spec([ONE], cyl.payoff("square"), sigma=0.0)
    assert cyl.psi(flat, 0.3, [1.5]) == 2.25
    jump = cyl.Payoff("step", 1, lambda y: (y[..., 0] > 0).astype(float), continuous=False)
    with pytest.raises(DegenerateError):
        cyl.psi(spec([ONE], jump, sigma=0.0), 0.3, [0.1])
    with pytest.raises(DomainError):
        cyl.psi(SQUARE, 1.5, [0.0])


def test_features_examples():
    eta = wave()
    assert cyl.features(SQUARE, 0.5, eta) == pytest.approx([eta(0.0)], abs=1e-14)
    zero = SampledPath.constant(0.0, T, 256)
    assert np.all(cyl.features(SUM2, 0.5, zero) == 0.0)


def test_features_open_mode_drops_left_jump():
    eta = wave()
    closed = cyl.features(SUM2, 0.5, eta)
    opened = cyl.features(SUM2, 0.5, eta, mode="open")
    # closed - open = phi(0) eta(-t)
    np.testing.assert_allclose(closed - opened, SUM2.phi(0.0) * eta(-0.5), atol=1e-6)


def test_solution_examples():
    eta = wave()
    for t in (0.0, 0.25, 0.75):
        assert cyl.u_cyl(SQUARE, t, eta) == pytest.approx(eta(0.0) ** 2 + T - t, abs=1e-12)
    lin = spec([ONE], cyl.payoff("linear"))
    assert cyl.u_cyl(lin, 0.5, eta) == pytest.approx(eta(0.0), abs=1e-12)
    y = cyl.features(CALL, T, eta)
    assert cyl.u_cyl(CALL, T, eta) == max(float(y[0]), 0.0)


def test_linear_payoff_has_zero_hessian():
    lin = spec([ONE, S], cyl.payoff("linear", 2))
    k = cyl.d2u_cyl(lin, 0.25, wave())
    assert k.atom00 == pytest.approx(0.0, abs=1e-12)
    assert np.max(np.abs(k.cross_x.values)) < 1e-12
    assert all(abs(c) < 1e-12 for c, _, _ in k.plane)


@pytest.mark.parametrize("s", [SQUARE, SUM2, CALL], ids=["square", "sum2", "call"])
def test_first_derivative_matches_difference(s):
    eta = wave()
    g = SampledPath.from_function(lambda x: np.cos(2 * x) + x, T, 256)
    t, h = 0.25, 1e-4
    up = cyl.u_cyl(s, t, SampledPath(T, eta.values + h * g.values))
    dn = cyl.u_cyl(s, t, SampledPath(T, eta.values - h * g.values))
    assert pair_measure(cyl.du_cyl(s, t, eta), g) == pytest.approx((up - dn) / (2 * h),
                                                                    abs=1e-6)


@pytest.mark.parametrize("s", [SQUARE, SUM2], ids=["square", "sum2"])
def test_second_derivative_matches_difference(s):
    eta = wave()
    g = SampledPath.from_function(lambda x: np.cos(2 * x) + x, T, 256)
    h = SampledPath.from_function(lambda x: 1 + x * x, T, 256)
    t, e = 0.25, 1e-3
    du_p = pair_measure(cyl.du_cyl(s, t, SampledPath(T, eta.values + e * h.values)), g)
    du_m = pair_measure(cyl.du_cyl(s, t, SampledPath(T, eta.values - e * h.values)), g)
    assert cyl.d2u_cyl(s, t, eta).pair(g, h) == pytest.approx((du_p - du_m) / (2 * e),
                                                              abs=1e-6)


@pytest.mark.parametrize("s", [SQUARE, SUM2, CALL], ids=["square", "sum2", "call"])
def test_time_derivative_matches_difference(s):
    eta = wave()
    t, h = 0.5, 1.0 / 256
    fd = (cyl.u_cyl(s, t + h, eta) - cyl.u_cyl(s, t - h, eta)) / (2 * h)
    # the central difference carries an O(h^2) bias
    assert cyl.dtu_cyl(s, t, eta) == pytest.approx(fd, abs=2e-4)


@settings(max_examples=10)
@given(st.integers(0, 230), st.floats(-2, 2), st.sampled_from(["square", "sum2", "call"]))
def test_residual_vanishes(k, scale, which):
    s = {"square": SQUARE, "sum2": SUM2, "call": CALL}[which]
    tol = 1e-5 if which == "call" else 1e-6
    assert abs(cyl.residual_cyl(s, k / 256, wave(c=scale))) <= tol


def test_batch_matches_single():
    rng = np.random.default_rng(2)
    vals = rng.normal(size=(5, 257)).cumsum(axis=1) / 16
    got = cyl.u_cyl_batch(SUM2, 0.5, vals)
    ref = [cyl.u_cyl(SUM2, 0.5, SampledPath(T, v)) for v in vals]
    np.testing.assert_allclose(got, ref, rtol=1e-13, atol=1e-13)
    d0 = cyl.delta0_batch(SUM2, 0.5, vals)
    ref0 = [cyl.du_cyl(SUM2, 0.5, SampledPath(T, v)).atom0 for v in vals]
    np.testing.assert_allclose(d0, ref0, rtol=1e-12, atol=1e-13)


def test_payoff_dimension_mismatch():
    with pytest.raises(DomainError):
        spec([ONE], cyl.payoff("sum2"))


def test_config_round_trip():
    s = cyl.spec_from_config({"phi": [{"kind": "poly", "coef": [1.0]},
                                      {"kind": "cos", "freq": 2.0}],
                              "f": "sum2", "sigma": 0.5, "N": 128})
    assert s.n == 2 and s.sigma == 0.5 and s.N == 128
    with pytest.raises(DomainError):
        cyl.basis_from_config({"kind": "spline"})
    with pytest.raises(DomainError):
        cyl.payoff("digital")


def test_tabulated_payoff():
    pf = cyl.payoff("tabulated", table={"x": [-1.0, 0.0, 1.0], "y": [0.0, 0.0, 1.0]})
    s = spec([ONE], pf)
    # table is max(y, 0) on [-1, 1] and flat outside
    assert cyl.psi(s, T, [0.5]) == 0.5
    assert cyl.psi(s, 0.99, [0.0]) == pytest.approx(bachelier(0.0, 0.1), abs=1e-6)


def test_martingale_check_square():
    rows = cyl.martingale_check(SQUARE, [0.0, 0.5], 2000, seed=4, N=64)
    assert rows[0]["deviation"] == pytest.approx(0.0, abs=1e-12)
    assert all(r["pass"] for r in rows)
