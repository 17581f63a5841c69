import numpy as np
import pytest

from pathheat import smooth
from pathheat.cylindrical import cos_basis, poly_basis
from pathheat.errors import DomainError, GrowthViolationError
from pathheat.paths import SampledPath, pair_measure

T, N = 1.0, 64
ONE = poly_basis([1.0])
QUAD = smooth.functional("quadratic", [ONE], T)
LIN = smooth.functional("linear", [cos_basis(1.5, 0.2)], T)
CUBIC = smooth.functional("cubic", [cos_basis(1.5, 0.2)], T)
ZERO = SampledPath.constant(0.0, T, N)


def wave(n=N):
    return SampledPath.from_function(lambda x: 0.3 + np.sin(3 * x) + 0.5 * x, T, n)


def test_value_at_horizon_is_exact():
    est = smooth.u_smooth(CUBIC, T, wave(), 100, seed=0)
    assert est.value == CUBIC(wave()) and est.std_error == 0.0


def test_linear_functional_mean_at_zero_path():
    est = smooth.u_smooth(smooth.functional("linear", [ONE], T), 0.25, ZERO, 4000, seed=1)
    assert abs(est.value) <= 3 * est.std_error


def test_cube_of_integrated_brownian_motion():
    est = smooth.u_smooth(QUAD, 0.0, SampledPath.constant(0.0, T, 256), 40_000, seed=2)
    assert abs(est.value - T ** 3 / 3) <= 3 * est.std_error


def test_first_derivative_at_zero_path():
    d = smooth.du_smooth(QUAD, 0.0, ZERO, 4000, seed=3)
    assert abs(d.measure.atom0) <= 3 * d.atom0_se


def test_linear_functional_derivative_is_deterministic():
    d = smooth.du_smooth(LIN, 0.5, wave(), 500, seed=0)
    assert d.atom0_se == pytest.approx(0.0, abs=1e-12)
    assert np.max(d.density_se) == pytest.approx(0.0, abs=1e-12)


def test_second_derivative_of_square():
    t = 0.25
    k = smooth.d2u_smooth(QUAD, t, wave(), 200, seed=0)
    assert k.atom00 == pytest.approx(2 * (T - t) ** 2, abs=1e-12)
    x = k.cross_x.grid
    inside = x >= -t
    np.testing.assert_allclose(k.cross_x.values[inside], 2 * (T - t), atol=1e-12)
    assert np.all(k.cross_x.values[~inside] == 0.0)
    one = SampledPath.constant(1.0, T, N)
    box = t * t * 2  # plane part paired with 1 (x) 1
    assert k.pair(one, one) == pytest.approx(2 * (T - t) ** 2 + 4 * (T - t) * t + box, abs=1e-12)


def test_linear_functional_has_zero_second_derivative():
    k = smooth.d2u_smooth(LIN, 0.5, wave(), 100, seed=0)
    one = SampledPath.constant(1.0, T, N)
    assert k.atom00 == 0.0 and k.pair(one, one) == pytest.approx(0.0, abs=1e-14)


def test_cubic_second_derivative_is_symmetric():
    k = smooth.d2u_smooth(CUBIC, 0.5, wave(), 500, seed=0)
    g = SampledPath.from_function(lambda x: np.cos(2 * x) + x, T, N)
    h = SampledPath.from_function(lambda x: 1 - x * x, T, N)
    assert k.pair(g, h) == pytest.approx(k.pair(h, g), rel=1e-12)


def test_time_derivative_at_start_has_no_transport_term():
    est = smooth.dtu_smooth(QUAD, 0.0, wave(), 500, seed=0)
    # only the second-order term survives: -sigma^2/2 * 2 T^2
    assert est.value == pytest.approx(-T ** 2, abs=1e-12)


def test_linear_time_derivative_is_deterministic():
    est = smooth.dtu_smooth(LIN, 0.5, wave(), 200, seed=0)
    assert est.std_error == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("H", [QUAD, LIN, CUBIC], ids=["quadratic", "linear", "cubic"])
@pytest.mark.parametrize("t", [0.0, 0.25, 0.75])
def test_per_path_residual(H, t):
    res = smooth.residual_samples(H, t, wave(), 500, seed=5)
    assert np.max(np.abs(res)) <= 1e-8


@pytest.mark.parametrize("H", [QUAD, CUBIC], ids=["quadratic", "cubic"])
def test_space_difference(H):
    g = SampledPath.from_function(lambda x: np.cos(2 * x) + x, T, N)
    res = smooth.fd_space_check(H, 0.5, wave(), g, 2000, seed=6)
    assert res["pass"]
    d = smooth.du_smooth(H, 0.5, wave(), 2000, seed=6)
    assert pair_measure(d.measure, g) == pytest.approx(res["analytic"], rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("H", [QUAD, CUBIC], ids=["quadratic", "cubic"])
def test_time_difference(H):
    assert smooth.fd_time_check(H, 0.5, wave(256), 4000, seed=7)["pass"]


def test_time_difference_needs_interior_time():
    with pytest.raises(DomainError):
        smooth.fd_time_check(QUAD, 0.0, wave(), 10, seed=0)


def test_martingale_rows():
    rows = smooth.martingale_check(QUAD, [0.0, 0.5], 400, seed=8, N=16)
    assert rows[0]["deviation"] == 0.0
    assert all(r["pass"] for r in rows)


def test_martingale_without_noise():
    rows = smooth.martingale_check(QUAD, [0.25, 0.5], 50, seed=8, sigma=0.0, N=16)
    assert all(r["deviation"] == pytest.approx(0.0, abs=1e-14) for r in rows)


def test_growth_gate():
    H = smooth.FunctionalH("tight", T, (ONE,), QUAD.F, QUAD.dF, QUAD.d2F, 1, 0.01)
    with pytest.raises(GrowthViolationError) as exc:
        smooth.u_smooth(H, 0.5, wave(), 50, seed=0)
    assert exc.value.payload["functional"] == "tight"


def test_preflight_ratio_is_finite():
    out = smooth.preflight(CUBIC)
    assert out["probes"] == 32 and np.isfinite(out["max_ratio"])


def test_product_functional():
    H = smooth.functional("product", [ONE, cos_basis(2.0)], T)
    e = wave()
    L = H.features(e.values)[0]
    assert H(e) == pytest.approx(L[0] * L[1])
    assert np.max(np.abs(smooth.residual_samples(H, 0.5, e, 200, seed=0))) <= 1e-8


def test_unknown_functional():
    with pytest.raises(DomainError):
        smooth.functional("quartic", [ONE], T)
    with pytest.raises(DomainError):
        smooth.functional("product", [ONE], T)


def test_same_seed_gives_same_estimate():
    a = smooth.u_smooth(QUAD, 0.25, wave(), 300, seed=11)
    b = smooth.u_smooth(QUAD, 0.25, wave(), 300, seed=11)
    assert a == b
