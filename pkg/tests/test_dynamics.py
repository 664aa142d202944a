import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy.integrate import solve_ivp

from moserbook.dynamics import (
    Q_reg,
    X_H,
    X_Q,
    angular_L,
    angular_L_reg,
    f_3bp,
    f_and_grad,
    f_parts,
    f_value,
    grad_H,
    grad_Q,
    jacobi_H,
    kepler_K,
    make_unreg_rhs,
    moon_chart_field,
    sample_level_set,
    scalar_fields,
)
from moserbook.errors import CollisionInput, OtherPrimaryCollision
from moserbook.flow import integrate
from moserbook.phase import Chart, RegState, SystemSpec, UnregState, random_tangent_states, unreg_to_reg


def fd_grad(fun, x, h=1e-6):
    """Central differences of a batched scalar function along each coordinate."""
    out = np.empty_like(x)
    for j in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[j] = h
        out[..., j] = (fun(x + e) - fun(x - e)) / (2 * h)
    return out


def away_from_primaries(rng, n, spec, dmin=0.2):
    q = rng.normal(size=(4 * n, 3))
    ok = (np.linalg.norm(q - spec.moon, axis=1) > dmin) & (np.linalg.norm(q - spec.earth, axis=1) > dmin)
    q = q[ok][:n]
    return UnregState(q, rng.normal(size=q.shape))


def test_jacobi_value_rotating_kepler():
    s = UnregState([1.0, 0, 0], [0.0, 1, 0])
    assert jacobi_H(s, SystemSpec(1.0, -2.0)) == pytest.approx(-1.5, abs=1e-15)


def test_jacobi_completed_square(rng):
    spec = SystemSpec(0.3, -1.8)
    s = away_from_primaries(rng, 200, spec)
    q, p = s.q, s.p
    r1 = np.linalg.norm(q - spec.moon, axis=1)
    r2 = np.linalg.norm(q - spec.earth, axis=1)
    sq = 0.5 * ((p[:, 0] + q[:, 1]) ** 2 + (p[:, 1] - q[:, 0]) ** 2 + p[:, 2] ** 2)
    V1 = -0.5 * (q[:, 0] ** 2 + q[:, 1] ** 2) - (1 - spec.mu) / r2
    assert_allclose(jacobi_H(s, spec), sq + V1 - spec.mu / r1, atol=1e-12)


def test_jacobi_collision_guard():
    spec = SystemSpec(0.5, -2.0)
    with pytest.raises(CollisionInput):
        jacobi_H(UnregState(spec.earth, np.ones(3)), spec)


@pytest.mark.parametrize("single", [False, True])
def test_grad_H_matches_fd(rng, single):
    base = SystemSpec(0.3, -1.8)
    s = away_from_primaries(rng, 1000, base)
    spec = base
    if single:
        # same dynamics written as a one-centre field around the Moon
        spec = SystemSpec(1.0, -1.8, Chart.SINGLE, moon_chart_field(0.3))
        s = UnregState(s.q - base.moon, s.p)
    Hq, Hp = grad_H(s, spec)
    g = fd_grad(lambda w: jacobi_H(UnregState.from_vector(w), spec), s.as_vector())
    exact = np.concatenate([Hq, Hp], axis=1)
    assert np.max(np.abs(g - exact) / np.maximum(1.0, np.abs(exact))) < 1e-6


def test_X_H_planar_set_invariant(rng):
    spec = SystemSpec(0.5, -2.0)
    s = away_from_primaries(rng, 100, spec)
    s = UnregState(s.q * [1, 1, 0], s.p * [1, 1, 0])
    X = X_H(s, spec)
    assert_array_equal(X.d_q[:, 2], 0.0)
    assert_array_equal(X.d_p[:, 2], 0.0)


def test_X_H_third_components_literal(rng):
    spec = SystemSpec(0.5, -2.0)
    s = away_from_primaries(rng, 50, spec)
    X = X_H(s, spec)
    r1 = np.linalg.norm(s.q - spec.moon, axis=1)
    r2 = np.linalg.norm(s.q - spec.earth, axis=1)
    F = spec.mu / r1**3 + (1 - spec.mu) / r2**3
    assert_allclose(X.d_q[:, 2], s.p[:, 2], rtol=0, atol=0)
    assert_allclose(X.d_p[:, 2], -s.q[:, 2] * F, rtol=1e-14)


def test_X_H_circular_direct_orbit():
    spec = SystemSpec(1.0, -1.5)
    for ang in np.linspace(0, 2 * np.pi, 7):
        q = np.array([np.cos(ang), np.sin(ang), 0.0])
        p = np.array([-np.sin(ang), np.cos(ang), 0.0])
        s = UnregState(q, p)
        assert jacobi_H(s, spec) == pytest.approx(-1.5, abs=1e-14)
        X = X_H(s, spec)
        assert abs(X.d_q @ q) < 1e-10


def test_f_collision_fibre_and_kepler_limit(rng):
    spec = SystemSpec(0.5, -2.0)
    eta = rng.normal(size=(20, 4)) * [0, 1, 1, 1]
    xi = np.tile([1.0, 0, 0, 0], (20, 1))
    assert_allclose(f_3bp(RegState(xi, eta), spec), 1.0, atol=1e-15)
    kep = SystemSpec(1.0, -2.0)
    r = random_tangent_states(rng, 200)
    want = 1 + (1 - r.xi[:, 0]) * (2.0 - 0.5 + angular_L_reg(r.xi, r.eta))
    assert_allclose(f_3bp(r, kep), want, atol=1e-14)
    assert_allclose(f_value(r, kep), want, atol=1e-14)


@pytest.mark.parametrize("chart", [Chart.MOON, Chart.EARTH])
def test_f_decomposition_two_paths(rng, chart):
    spec = SystemSpec(0.3, -1.8, chart)
    r = random_tangent_states(rng, 500, 0.3)
    parts = f_parts(r, spec)
    om = 1 - r.xi[:, 0]
    assert_allclose(parts.f, 1 + om * parts.b + parts.M, atol=1e-14)
    assert_allclose(f_3bp(r, spec), parts.f, atol=1e-13)
    assert_allclose(f_value(r, spec), parts.f, atol=1e-13)


def test_other_primary_collision():
    spec = SystemSpec(0.5, -2.0)
    s = UnregState(spec.earth, np.array([0.3, 0.1, 0.0]))
    r = unreg_to_reg(s, spec)
    with pytest.raises(OtherPrimaryCollision):
        f_parts(r, spec)


def test_generic_field_reproduces_three_body(rng):
    mu = 0.4
    a = SystemSpec(mu, -1.7)
    b = SystemSpec(1.0, -1.7, Chart.SINGLE, moon_chart_field(mu))
    r = random_tangent_states(rng, 200, 0.5)
    for x, y in zip(f_and_grad(r.xi, r.eta, a), f_and_grad(r.xi, r.eta, b)):
        assert_allclose(x, y, atol=1e-12)


@pytest.mark.parametrize("chart", [Chart.MOON, Chart.EARTH])
def test_level_set_matches_energy(rng, chart):
    # Q = g^2/2 exactly where H = c, in both charts
    spec0 = SystemSpec(0.3, -1.8, chart)
    s = away_from_primaries(rng, 50, spec0)
    H = jacobi_H(s, spec0)
    for k in range(50):
        sp = SystemSpec(0.3, float(H[k]), chart)
        r = unreg_to_reg(UnregState(s.q[k], s.p[k]), sp)
        assert Q_reg(r, sp) == pytest.approx(sp.coupling**2 / 2, abs=1e-12)


def test_sampled_level_points(rng):
    spec = SystemSpec(0.5, -1.8)
    st = sample_level_set(spec, 300, rng)
    assert np.max(np.abs(Q_reg(st, spec) - 0.125)) < 1e-10
    a, b = st.constraint_residuals()
    assert np.max(np.abs(a)) < 1e-12 and np.max(np.abs(b)) < 1e-12


def symplectic_defect(r, spec, rng, h=1e-6):
    """``omega(X_Q, v) + dQ(v)`` for random tangent vectors ``v``."""
    X = X_Q(r, spec)
    out = []
    for k in range(r.xi.shape[0]):
        xi, eta = r.xi[k], r.eta[k]
        v = rng.normal(size=8)
        v[:4] -= (v[:4] @ xi) * xi
        v[4:] -= (v[:4] @ eta + v[4:] @ xi) * xi
        qp = Q_reg(RegState(xi + h * v[:4], eta + h * v[4:]), spec)
        qm = Q_reg(RegState(xi - h * v[:4], eta - h * v[4:]), spec)
        dQ = (qp - qm) / (2 * h)
        om = X.d_eta[k] @ v[:4] - v[4:] @ X.d_xi[k]
        out.append(abs(om + dQ) / max(1.0, abs(dQ)))
    return np.array(out)


@pytest.mark.parametrize("chart", [Chart.MOON, Chart.EARTH])
def test_X_Q_matches_fd(rng, chart):
    spec = SystemSpec(0.5, -1.8, chart)
    st = sample_level_set(spec, 1000, rng)
    assert np.max(symplectic_defect(st, spec, rng)) < 1e-6


def test_X_Q_tangent_and_conserves_Q(rng, spec_half):
    st = sample_level_set(spec_half, 500, rng)
    X = X_Q(st, spec_half)
    assert np.max(np.abs(np.sum(st.xi * X.d_xi, axis=1))) < 1e-10
    assert np.max(np.abs(np.sum(X.d_xi * st.eta, axis=1) + np.sum(st.xi * X.d_eta, axis=1))) < 1e-10
    g_xi, g_eta = grad_Q(st.xi, st.eta, spec_half)
    dQ = np.sum(g_xi * X.d_xi, axis=1) + np.sum(g_eta * X.d_eta, axis=1)
    assert np.max(np.abs(dQ)) < 1e-10


def test_X_Q_round_sphere_exact(rng):
    spec = SystemSpec.round_sphere()
    r = random_tangent_states(rng, 100)
    X = X_Q(r, spec)
    N = np.sum(r.eta**2, axis=1)
    assert_array_equal(X.d_xi, r.eta)
    assert_allclose(X.d_eta, -N[:, None] * r.xi, rtol=1e-15, atol=1e-16)
    unit = RegState(r.xi, r.eta / np.sqrt(N)[:, None])
    assert_allclose(Q_reg(unit, spec), 0.5, atol=1e-15)
    Xu = X_Q(unit, spec)
    assert_allclose(Xu.as_vector(), np.concatenate([unit.eta, -unit.xi], axis=1), atol=1e-15)


def test_Q_conserved_along_flow(spec_half, rng):
    st = sample_level_set(spec_half, 3, rng, near_binding_fraction=0.0)
    for k in range(3):
        r = RegState(st.xi[k], st.eta[k])
        tr = integrate(r, 10.0, spec_half)
        Q = Q_reg(RegState.from_vector(tr.y[:, :8]), spec_half)
        assert np.max(np.abs(Q - Q[0])) < 1e-9


def test_kepler_integrals_conserved():
    spec = SystemSpec(1.0, -2.0)
    s0 = UnregState([0.4, 0.1, 0.2], [0.2, 1.3, 0.3])
    sol = solve_ivp(make_unreg_rhs(spec), (0, 20), s0.as_vector(), method="DOP853", rtol=1e-12, atol=1e-13,
                    dense_output=True)
    ys = sol.sol(np.linspace(0, 20, 200)).T
    s = UnregState.from_vector(ys)
    K, L = kepler_K(s, spec), angular_L(s)
    assert np.max(np.abs(K - K[0])) < 1e-9
    assert np.max(np.abs(L - L[0])) < 1e-9


def test_reg_angular_momentum_conserved(spec_kepler, rng):
    st = sample_level_set(spec_kepler, 2, rng, near_binding_fraction=0.0)
    for k in range(2):
        tr = integrate(RegState(st.xi[k], st.eta[k]), 50.0, spec_kepler)
        L = angular_L_reg(tr.y[:, :4], tr.y[:, 4:8])
        assert np.max(np.abs(L - L[0])) < 1e-9
        s = UnregState([0.3, 0.5, 0.1], [0.1, -0.4, 0.2])
        r = unreg_to_reg(s, spec_kepler)
        assert float(angular_L_reg(r.xi, r.eta)) == pytest.approx(float(angular_L(s)), abs=1e-14)


def test_scalar_fields_gradients(rng):
    spec = SystemSpec(0.5, -1.8)
    fields = scalar_fields(spec)
    st = sample_level_set(spec, 50, rng)
    v = st.as_vector()
    for name in ("f", "Q"):
        exact = np.concatenate(fields[name].gradient(st), axis=1)
        fd = fd_grad(lambda w: fields[name].value(RegState.from_vector(w)), v)
        assert np.max(np.abs(fd - exact) / np.maximum(1.0, np.abs(exact))) < 1e-6
