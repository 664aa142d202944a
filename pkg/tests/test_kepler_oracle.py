import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy.integrate import solve_ivp

from moserbook.dynamics import angular_L_reg, make_unreg_rhs
from moserbook.errors import EnergyDomain, NonNegativeEnergy, OutsidePage, SupercriticalEnergy
from moserbook.flow import involution, sample_page_points
from moserbook.kepler_oracle import (
    KeplerContext,
    analytic_return,
    circular_orbits,
    cubic_residual,
    f_kepler,
    invariant_circle,
    kepler_period,
    polar_points,
    resonant_L,
)
from moserbook.phase import RegState, SystemSpec, UnregState

CTX = KeplerContext(-2.0)


def test_period_law_values():
    assert kepler_period(-0.5) == pytest.approx(2 * np.pi, rel=1e-15)
    assert kepler_period(-1.0) == pytest.approx(np.pi / np.sqrt(2), rel=1e-15)
    for K in (0.0, 0.3):
        with pytest.raises(NonNegativeEnergy):
            kepler_period(K)


def test_period_law_against_integrated_ellipse():
    # inertial Kepler problem: mu = 1 without the rotating term, so integrate K alone
    def rhs(_t, v):
        q, p = v[:3], v[3:]
        return np.concatenate([p, -q / np.linalg.norm(q) ** 3])

    q0, p0 = np.array([0.7, 0.0, 0.2]), np.array([0.0, 1.1, 0.1])
    K = 0.5 * p0 @ p0 - 1 / np.linalg.norm(q0)
    T = kepler_period(K)
    sol = solve_ivp(rhs, (0, T), np.concatenate([q0, p0]), method="DOP853", rtol=1e-12, atol=1e-13)
    assert_allclose(sol.y[:, -1], np.concatenate([q0, p0]), atol=1e-8)


def test_generating_function_derivative():
    h = 1e-6
    for L in (-1.0, 0.0, 0.5):
        d = (CTX.generating_function(L + h) - CTX.generating_function(L - h)) / (2 * h)
        assert d == pytest.approx(kepler_period(CTX.c - L), rel=1e-8)
    with pytest.raises(EnergyDomain):
        CTX.generating_function(-3.0)
    with pytest.raises(EnergyDomain):
        KeplerContext(0.1)


def test_polar_points_are_fixed():
    xp, xm = polar_points(-2.0)
    assert xm.eta[3] == pytest.approx(0.25)
    assert 0 < xm.eta[3] < 1 / 3
    for x in (xp, xm):
        assert f_kepler(x.xi, x.eta, -2.0) ** 2 * (x.eta @ x.eta) == pytest.approx(1.0)
        assert_array_equal(analytic_return(x, CTX).as_vector(), x.as_vector())


def test_return_preserves_L_and_xi0(rng, spec_kepler):
    st = sample_page_points(spec_kepler, 200, rng)
    out = analytic_return(st, CTX)
    assert_array_equal(out.xi[:, 0], st.xi[:, 0])
    assert_array_equal(out.eta[:, 3], st.eta[:, 3])
    assert_allclose(angular_L_reg(out.xi, out.eta), angular_L_reg(st.xi, st.eta), atol=1e-15)
    with pytest.raises(EnergyDomain):
        # L = -xi1 eta2 = -3 puts the Kepler energy c - L above zero
        analytic_return(RegState([0.0, 1, 0, 0], [0.0, 0, 3.0, 0.1]), CTX)


def test_return_commutes_with_r(rng, spec_kepler):
    st = sample_page_points(spec_kepler, 50, rng)
    a = involution("r", analytic_return(st, CTX))
    b = analytic_return(involution("r", st), CTX)
    assert_allclose(a.as_vector(), b.as_vector(), atol=1e-15)


def test_circular_orbits_critical_energy():
    co = circular_orbits(-1.5)
    assert co.used_guard
    assert co.r_dir == pytest.approx(1.0, abs=1e-10)
    assert co.r_ret == pytest.approx(0.25, abs=1e-10)
    assert co.p_dir == pytest.approx(1.0, abs=1e-10)
    assert co.p_ret == pytest.approx(2.0, abs=1e-10)
    assert abs(cubic_residual(co.r_ret, -1.5)) < 1e-12
    with pytest.raises(SupercriticalEnergy):
        circular_orbits(-1.4)


@pytest.mark.parametrize("c", [-1.5 - 1e-9, -1.6, -2.0, -3.0, -10.0])
def test_cardano_agrees_with_bracketing(c):
    co = circular_orbits(c)
    assert co.max_disagreement() < 1e-10
    for r in (co.r_dir, co.r_ret, co.r_unbounded):
        assert abs(cubic_residual(r, c)) < 1e-10 * max(1.0, c * c * r * r)
    assert co.r_dir < co.r_unbounded


def test_circular_orbit_is_periodic_in_rotating_frame():
    c = -2.0
    co = circular_orbits(c)
    spec = SystemSpec(1.0, c)
    r = co.r_ret
    s0 = UnregState([r, 0.0, 0.0], [0.0, -co.p_ret, 0.0])
    sol = solve_ivp(make_unreg_rhs(spec), (0, 5), s0.as_vector(), method="DOP853", rtol=1e-12, atol=1e-13,
                    dense_output=True)
    radii = np.linalg.norm(sol.sol(np.linspace(0, 5, 100))[:3], axis=0)
    assert np.max(np.abs(radii - r)) < 1e-9


def test_invariant_circles():
    circ = invariant_circle(0.3, [0.05, 0.1, 0.2], CTX)
    pts = circ.points(np.linspace(0, 2 * np.pi, 40))
    assert np.all(circ.contains(pts))
    assert np.all(circ.contains(analytic_return(pts, CTX)))
    xp, xm = polar_points(-2.0)
    north = invariant_circle(1.0, [0.0, 0.0, 0.0], CTX)
    assert_allclose(north.points(0.0).as_vector()[0], xp.as_vector(), atol=1e-15)
    south = invariant_circle(-1.0, [0.0, 0.0, 0.0], CTX)
    assert_allclose(south.points(0.0).as_vector()[0], xm.as_vector(), atol=1e-15)
    with pytest.raises(OutsidePage):
        invariant_circle(0.3, [0.0, 5.0, 5.0], CTX)
    with pytest.raises(OutsidePage):
        invariant_circle(1.3, [0.0, 0.0, 0.0], CTX)


def test_resonant_circle_iterate():
    # T(c) = pi/4 at c = -2, so the reachable resonances sit near p/q = 1/8
    L = resonant_L(-2.0, 1, 9)
    assert kepler_period(-2.0 - L) == pytest.approx(2 * np.pi / 9, rel=1e-14)
    # base point xi = (0, 1, 0, 0) has L = -eta2
    circ = invariant_circle(0.0, [0.0, 0.0, -L], CTX)
    pts = circ.points(np.linspace(0, 2 * np.pi, 7))
    assert_allclose(angular_L_reg(pts.xi, pts.eta), L, atol=1e-15)
    x = pts
    for _ in range(9):
        x = analytic_return(x, CTX)
    assert_allclose(x.as_vector(), pts.as_vector(), atol=1e-12)
    assert resonant_L(-2.0, 1, 8) == pytest.approx(0.0, abs=1e-15)
