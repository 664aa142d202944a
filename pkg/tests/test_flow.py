import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from moserbook.dynamics import Q_reg, angular_L_reg, sample_level_set
from moserbook.equilibria import critical_values
from moserbook.errors import NoConvergence, NoReturn, OnBinding, TimeBudgetExceeded
from moserbook.flow import (
    GEODESIC,
    TIGHT,
    Book,
    IntegratorConfig,
    PageChart,
    Projection,
    conjugacy_check,
    fixed_point_search,
    integrate,
    involution,
    return_map,
    sample_page_points,
    trajectory_records,
)
from moserbook.kepler_oracle import KeplerContext, analytic_return, kepler_period, polar_points
from moserbook.phase import RegState, SystemSpec, random_tangent_states, reg_to_unreg
from moserbook.sections import CutoffSpec, auto_amplitude, theta_value

CUT = CutoffSpec()


def great_circle(s):
    a = np.array([1.0, 0, 0, 0])
    b = np.array([0.0, 1, 0, 0])
    return np.concatenate([np.cos(s) * a + np.sin(s) * b, -np.sin(s) * a + np.cos(s) * b])


def test_round_sphere_great_circle():
    spec = SystemSpec.round_sphere()
    tr = integrate(RegState([1.0, 0, 0, 0], [0.0, 1, 0, 0]), 2 * np.pi, spec)
    for s in np.linspace(0, 2 * np.pi, 97):
        assert np.max(np.abs(tr(s)[:8] - great_circle(s))) < 1e-8
    q = integrate(RegState([1.0, 0, 0, 0], [0.0, 1, 0, 0]), np.pi / 2, spec).final
    assert_allclose(q.xi, [0, 1, 0, 0], atol=1e-8)
    assert_allclose(q.eta, [-1, 0, 0, 0], atol=1e-8)


def test_zero_time_is_identity_and_negative_time_inverts(spec_half, rng):
    st = sample_level_set(spec_half, 1, rng, near_binding_fraction=0.0)
    r = RegState(st.xi[0], st.eta[0])
    assert_array_equal(integrate(r, 0.0, spec_half).final.as_vector(), r.as_vector())
    fwd = integrate(r, 3.0, spec_half, TIGHT).final
    back = integrate(fwd, -3.0, spec_half, TIGHT).final
    assert_allclose(back.as_vector(), r.as_vector(), atol=1e-9)


def test_time_budget():
    with pytest.raises(TimeBudgetExceeded):
        integrate(RegState([1.0, 0, 0, 0], [0.0, 1, 0, 0]), 10.0, SystemSpec.round_sphere(),
                  IntegratorConfig(max_time=5.0))


def test_projection_keeps_constraints(spec_half, rng):
    st = sample_level_set(spec_half, 1, rng, near_binding_fraction=0.0)
    r = RegState(st.xi[0], st.eta[0])
    tr = integrate(r, 20.0, spec_half)
    a, b = RegState.from_vector(tr.y[:, :8]).constraint_residuals()
    assert np.max(np.abs(a)) < 1e-12 and np.max(np.abs(b)) < 1e-12
    tr_free = integrate(r, 20.0, spec_half, IntegratorConfig(projection=Projection.NEVER))
    assert tr_free.final.as_vector().shape == (8,)


def test_kepler_integrals_along_regularized_flow(spec_kepler, rng):
    st = sample_level_set(spec_kepler, 1, rng, near_binding_fraction=0.0)
    tr = integrate(RegState(st.xi[0], st.eta[0]), 50.0, spec_kepler)
    L = angular_L_reg(tr.y[:, :4], tr.y[:, 4:8])
    Q = Q_reg(RegState.from_vector(tr.y[:, :8]), spec_kepler)
    assert np.max(np.abs(L - L[0])) < 1e-9
    assert np.max(np.abs(Q - Q[0])) < 1e-9


def test_involution_identities(rng):
    r = random_tangent_states(rng, 1000)
    both = involution("rho1", involution("rho2", r))
    assert_array_equal(both.as_vector(), involution("r", r).as_vector())
    assert_array_equal(involution("rho2", involution("rho1", r)).as_vector(), both.as_vector())
    b = RegState(r.xi * [1, 1, 1, 0], r.eta * [1, 1, 1, 0])
    assert_array_equal(involution("r", b).as_vector(), b.as_vector())
    with pytest.raises(ValueError):
        involution("s", r)


def test_page_shift_under_r(rng):
    r = random_tangent_states(rng, 1000)
    a = np.angle(theta_value(r, CUT))
    b = np.angle(theta_value(involution("r", r), CUT))
    assert np.max(np.abs(np.angle(np.exp(1j * (b - a - np.pi))))) < 1e-14


def test_flow_symmetries(spec_half, rng):
    st = sample_level_set(spec_half, 3, rng, near_binding_fraction=0.0)
    for k in range(3):
        x = RegState(st.xi[k], st.eta[k])
        fx = integrate(x, 2.0, spec_half, TIGHT).final
        assert_allclose(integrate(involution("r", x), 2.0, spec_half, TIGHT).final.as_vector(),
                        involution("r", fx).as_vector(), atol=1e-9)
        for kind in ("rho1", "rho2"):
            assert_allclose(integrate(involution(kind, x), -2.0, spec_half, TIGHT).final.as_vector(),
                            involution(kind, fx).as_vector(), atol=1e-9)


def test_return_map_interpolated_page(spec_half, rng):
    cut = auto_amplitude(spec_half, CUT, n_samples=5000)
    book = Book("interpolated", cut)
    st = sample_page_points(spec_half, 5, rng, book)
    for k in range(5):
        x = RegState(st.xi[k], st.eta[k])
        rec = return_map(x, spec_half, cfg=IntegratorConfig(), book=book)
        assert abs(rec.angle_swept - 2 * np.pi) < 1e-9
        assert rec.q_drift < 1e-8
        assert abs(np.angle(book.z(rec.end.xi, rec.end.eta) * np.conj(book.z(x.xi, x.eta)))) < 1e-9
        assert rec.return_time > 0 and rec.physical_time > 0
        d = rec.to_dict()
        assert json.loads(json.dumps(d))["return_time"] == rec.return_time
        # r maps the page to the opposite page and commutes with the flow
        rr = return_map(involution("r", x), spec_half, cfg=IntegratorConfig(), book=book)
        assert_allclose(rr.end.as_vector(), involution("r", rec.end).as_vector(), atol=1e-8)


def test_return_map_refuses_binding(spec_half):
    r = RegState([0.0, 1.0, 0, 0], [0.1, 0.0, 0.3, 0.0])
    with pytest.raises(OnBinding):
        return_map(r, spec_half)


def test_no_return_within_budget(spec_kepler, rng):
    st = sample_page_points(spec_kepler, 1, rng)
    with pytest.raises(NoReturn):
        return_map(RegState(st.xi[0], st.eta[0]), spec_kepler, cfg=IntegratorConfig(max_time=1e-3), book=GEODESIC)


def test_kepler_returns_match_oracle(spec_kepler, rng):
    ctx = KeplerContext(spec_kepler.c)
    st = sample_page_points(spec_kepler, 100, rng)
    drift = []
    for k in range(100):
        x = RegState(st.xi[k], st.eta[k])
        rec = return_map(x, spec_kepler, cfg=IntegratorConfig(), book=GEODESIC)
        drift.append(rec.q_drift)
        if k < 10:
            tight = return_map(x, spec_kepler, cfg=TIGHT, book=GEODESIC)
            assert np.max(np.abs(tight.end.as_vector() - analytic_return(x, ctx).as_vector())) < 1e-6
            L = float(angular_L_reg(x.xi, x.eta))
            assert abs(tight.physical_time - kepler_period(spec_kepler.c - L)) < 1e-8
    assert max(drift) < 1e-8


def test_fixed_point_north_pole(spec_kepler):
    xp, _ = polar_points(spec_kepler.c)
    g = RegState(xp.xi + [-1e-3, 0.02, -0.01, 0], xp.eta + [0, 0.01, 0.02, 0])
    from moserbook.dynamics import project_to_level
    from moserbook.phase import project_to_TS3

    g = project_to_level(project_to_TS3(g.xi, g.eta), spec_kepler)
    fp = fixed_point_search(g, spec_kepler, book=GEODESIC)
    assert_allclose(fp.as_vector(), xp.as_vector(), atol=1e-8)


def test_fixed_point_failure_path(spec_kepler, rng):
    st = sample_page_points(spec_kepler, 1, rng, min_modulus=0.2)
    with pytest.raises(NoConvergence):
        fixed_point_search(RegState(st.xi[0], st.eta[0]), spec_kepler, book=GEODESIC, max_iter=1)


def test_page_chart_round_trip(spec_kepler):
    xp, _ = polar_points(spec_kepler.c)
    ch = PageChart(xp, spec_kepler, GEODESIC)
    u = np.array([0.01, -0.02, 0.005, 0.0])
    x = ch.point(u)
    assert_allclose(ch.coords(x), u, atol=1e-14)
    assert np.max(np.abs(ch.constraints(x))) < 1e-14


def test_trajectory_export(spec_half, rng):
    st = sample_level_set(spec_half, 1, rng, near_binding_fraction=0.0)
    tr = integrate(RegState(st.xi[0], st.eta[0]), 1.0, spec_half)
    recs = list(trajectory_records(tr, spec_half))
    assert len(recs) == len(tr.s)
    line = json.dumps(recs[-1])
    back = json.loads(line)
    assert set(back) == {"s", "t", "xi", "eta", "Q", "theta"}
    assert back["s"] == pytest.approx(1.0)


def test_conjugacy_with_unregularized_flow(spec_half, rng):
    st = sample_level_set(spec_half, 50, rng, near_binding_fraction=0.0)
    k = int(np.argmin(st.xi[:, 0]))
    s0 = reg_to_unreg(RegState(st.xi[k], st.eta[k]), spec_half)
    rep = conjugacy_check(s0, spec_half, 0.3)
    assert rep.min_distance > 0.05
    assert rep.passed and rep.max_error < 1e-6
