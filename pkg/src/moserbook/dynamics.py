"""Hamiltonians, closed-form gradients and vector fields.

Unregularized side: the Jacobi Hamiltonian of the rotating three-body problem
(or a one-centre Stark-Zeeman Hamiltonian) on ``T*R^3``.  Regularized side:
``Q = f^2 |eta|^2 / 2`` on ``T*S^3``, where

    f = 1 + (1 - xi0) b + M

encodes the Hamiltonian after switching positions and momenta.  For
the three-body problem, with ``y`` the position relative to the regularized
primary and ``w`` the position relative to the other one,

    b = -(c + 1/2) - g'/|w|,   M = (1 - xi0)(xi2 eta1 - xi1 eta2) + o1 xi2,

``g'`` the other mass and ``o1`` the first coordinate of the regularized
primary.  For a general Stark-Zeeman field ``(A, V1, g)`` the same function
reads ``f = 1 + (1 - xi0)(-(c + 1/2) + |A|^2/2 + V1) - <xi_vec, A(y)>``.

The energy surface is the level set ``Q = g^2 / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import CollisionInput, OtherPrimaryCollision, SamplingFailure
from .phase import (
    Chart,
    RegState,
    StarkZeemanField,
    SystemSpec,
    UnregState,
    relative_position,
)

COLLISION_GUARD = 1e-12


@dataclass(frozen=True)
class ScalarField:
    value: Callable
    gradient: Callable


@dataclass(frozen=True)
class TangentVector:
    d_xi: np.ndarray
    d_eta: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.d_xi, self.d_eta], axis=-1)


@dataclass(frozen=True)
class UnregTangent:
    d_q: np.ndarray
    d_p: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.d_q, self.d_p], axis=-1)


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


# --------------------------------------------------------------------------
# unregularized side

def _distances(q: np.ndarray, spec: SystemSpec):
    r1 = np.linalg.norm(q - spec.moon, axis=-1)
    r2 = np.linalg.norm(q - spec.earth, axis=-1)
    if np.any(r1 < COLLISION_GUARD) or (spec.mu < 1.0 and np.any(r2 < COLLISION_GUARD)):
        raise CollisionInput("position coincides with a primary")
    return r1, r2


def jacobi_H(s: UnregState, spec: SystemSpec) -> np.ndarray:
    """Jacobi Hamiltonian ``|p|^2/2 - mu/|q-m| - (1-mu)/|q-e| + p1 q2 - p2 q1``.

    For a single-centre spec the Stark-Zeeman Hamiltonian
    ``|p + A(q)|^2/2 - g/|q| + V1(q)`` is returned instead.
    """
    q, p = s.q, s.p
    if spec.chart is Chart.SINGLE:
        fld = spec.sz_field
        r = np.linalg.norm(q, axis=-1)
        if np.any(r < COLLISION_GUARD):
            raise CollisionInput("position coincides with the centre")
        pa = p + fld.A(q)
        return 0.5 * _dot(pa, pa) - fld.g / r + fld.V1(q)
    r1, r2 = _distances(q, spec)
    pot = -spec.mu / r1
    if spec.mu < 1.0:
        pot = pot - (1.0 - spec.mu) / r2
    return 0.5 * _dot(p, p) + pot + p[..., 0] * q[..., 1] - p[..., 1] * q[..., 0]


def effective_potential(q: np.ndarray, mu: float) -> np.ndarray:
    """``-(q1^2 + q2^2)/2 - mu/|q-m| - (1-mu)/|q-e|``, the minimum of H over p."""
    q = np.asarray(q, dtype=float)
    r1 = np.linalg.norm(q - np.array([mu - 1.0, 0.0, 0.0]), axis=-1)
    r2 = np.linalg.norm(q - np.array([mu, 0.0, 0.0]), axis=-1)
    out = -0.5 * (q[..., 0] ** 2 + q[..., 1] ** 2) - mu / r1
    if mu < 1.0:
        out = out - (1.0 - mu) / r2
    return out


def grad_effective_potential(q: np.ndarray, mu: float) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    m = np.array([mu - 1.0, 0.0, 0.0])
    e = np.array([mu, 0.0, 0.0])
    d1, d2 = q - m, q - e
    r1 = np.linalg.norm(d1, axis=-1)[..., None]
    r2 = np.linalg.norm(d2, axis=-1)[..., None]
    out = mu * d1 / r1**3 - q * np.array([1.0, 1.0, 0.0])
    if mu < 1.0:
        out = out + (1.0 - mu) * d2 / r2**3
    return out


def grad_H(s: UnregState, spec: SystemSpec) -> tuple[np.ndarray, np.ndarray]:
    """``(dH/dq, dH/dp)``."""
    q, p = s.q, s.p
    if spec.chart is Chart.SINGLE:
        fld = spec.sz_field
        r = np.linalg.norm(q, axis=-1)[..., None]
        if np.any(r < COLLISION_GUARD):
            raise CollisionInput("position coincides with the centre")
        pa = p + fld.A(q)
        dA = fld.jac_A(q)
        Hq = np.einsum("...ij,...i->...j", dA, pa) + fld.g * q / r**3 + fld.gradient_V1(q)
        return Hq, pa
    r1, r2 = _distances(q, spec)
    Hq = spec.mu * (q - spec.moon) / r1[..., None] ** 3
    if spec.mu < 1.0:
        Hq = Hq + (1.0 - spec.mu) * (q - spec.earth) / r2[..., None] ** 3
    rot_q = np.stack([-p[..., 1], p[..., 0], np.zeros_like(p[..., 0])], axis=-1)
    rot_p = np.stack([q[..., 1], -q[..., 0], np.zeros_like(q[..., 0])], axis=-1)
    return Hq + rot_q, p + rot_p


def X_H(s: UnregState, spec: SystemSpec) -> UnregTangent:
    """Hamiltonian vector field ``(dH/dp, -dH/dq)``; third components are ``(p3, -q3 F)``."""
    Hq, Hp = grad_H(s, spec)
    return UnregTangent(Hp, -Hq)


def kepler_K(s: UnregState, spec: SystemSpec) -> np.ndarray:
    """Kepler energy ``|p|^2/2 - g/|q - o|`` about the regularized primary."""
    y = s.q - spec.centre
    return 0.5 * _dot(s.p, s.p) - spec.coupling / np.linalg.norm(y, axis=-1)


def angular_L(s: UnregState) -> np.ndarray:
    """Angular momentum term ``p1 q2 - p2 q1`` (so that H = K + L when mu = 1)."""
    return s.p[..., 0] * s.q[..., 1] - s.p[..., 1] * s.q[..., 0]


# --------------------------------------------------------------------------
# regularized side

def angular_L_reg(xi: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """``xi2 eta1 - xi1 eta2``, the pull-back of ``p1 q2 - p2 q1`` in the rotating-Kepler chart."""
    return xi[..., 2] * eta[..., 1] - xi[..., 1] * eta[..., 2]


@dataclass(frozen=True)
class FParts:
    f: np.ndarray
    b: np.ndarray
    M: np.ndarray


def _other_offset(spec: SystemSpec) -> np.ndarray:
    return spec.centre - spec.other


def _other_distance(xi, eta, spec: SystemSpec, check: bool = True):
    w = relative_position(xi, eta) + _other_offset(spec)
    r = np.linalg.norm(w, axis=-1)
    if check and np.any(r < COLLISION_GUARD):
        raise OtherPrimaryCollision("state collides with the non-regularized primary")
    return w, r


def f_parts(r: RegState, spec: SystemSpec) -> FParts:
    """Three-body ``f`` together with ``b`` and ``M``.

    Raises
    ------
    OtherPrimaryCollision
        If the position meets the non-regularized primary.
    """
    xi, eta = r.xi, r.eta
    om = 1.0 - xi[..., 0]
    o1 = spec.centre[0]
    if spec.chart is Chart.SINGLE:
        raise ValueError("f_parts is the three-body decomposition; use f_value for single-centre systems")
    M = om * angular_L_reg(xi, eta) + o1 * xi[..., 2]
    b = -(spec.c + 0.5) * np.ones_like(om)
    if spec.other_mass > 0.0:
        _, dist = _other_distance(xi, eta, spec)
        b = b - spec.other_mass / dist
    return FParts(1.0 + om * b + M, b, M)


def f_3bp(r: RegState, spec: SystemSpec) -> np.ndarray:
    """Three-body ``f`` evaluated directly, without the ``b``/``M`` split."""
    xi, eta = r.xi, r.eta
    x0, x1, x2, x3 = (xi[..., k] for k in range(4))
    e0, e1, e2, e3 = (eta[..., k] for k in range(4))
    m_minus_e = _other_offset(spec)
    gp = spec.other_mass
    if gp > 0.0:
        D = np.sqrt(
            (e1 * (1 - x0) + x1 * e0 + m_minus_e[0]) ** 2
            + (e2 * (1 - x0) + x2 * e0) ** 2
            + (e3 * (1 - x0) + x3 * e0) ** 2
        )
        if np.any(D < COLLISION_GUARD):
            raise OtherPrimaryCollision("state collides with the non-regularized primary")
        tail = gp / D
    else:
        tail = 0.0
    return 1 + (1 - x0) * (-spec.c - 0.5 + x2 * e1 - x1 * e2 - tail) + x2 * spec.centre[0]


def _sz_f_and_grad(xi, eta, spec: SystemSpec, fld: StarkZeemanField):
    om = 1.0 - xi[..., 0]
    xv, ev = xi[..., 1:], eta[..., 1:]
    e0 = eta[..., 0]
    y = relative_position(xi, eta)
    A = np.asarray(fld.A(y), dtype=float)
    dA = fld.jac_A(y)
    W = 0.5 * _dot(A, A) + fld.V1(y)
    Wy = np.einsum("...ij,...i->...j", dA, A) + fld.gradient_V1(y)
    base = -(spec.c + 0.5) + W
    f = 1.0 + om * base - _dot(xv, A)
    dAt_xi = np.einsum("...ij,...i->...j", dA, xv)
    f_xi0 = -base - om * _dot(Wy, ev) + _dot(dAt_xi, ev)
    f_xiv = (om * e0)[..., None] * Wy - A - e0[..., None] * dAt_xi
    f_eta0 = om * _dot(Wy, xv) - _dot(dAt_xi, xv)
    f_etav = (om**2)[..., None] * Wy - om[..., None] * dAt_xi
    f_xi = np.concatenate([f_xi0[..., None], f_xiv], axis=-1)
    f_eta = np.concatenate([f_eta0[..., None], f_etav], axis=-1)
    return f, f_xi, f_eta


def _3bp_f_and_grad(xi, eta, spec: SystemSpec, check: bool = True):
    om = 1.0 - xi[..., 0]
    xv, ev = xi[..., 1:], eta[..., 1:]
    e0 = eta[..., 0]
    o1 = spec.centre[0]
    L = angular_L_reg(xi, eta)
    zero = np.zeros_like(om)
    dL_dxi = np.stack([-eta[..., 2], eta[..., 1], zero], axis=-1)
    dL_deta = np.stack([xi[..., 2], -xi[..., 1], zero], axis=-1)
    f = 1.0 + om * (-(spec.c + 0.5) + L) + o1 * xi[..., 2]
    f_xi0 = (spec.c + 0.5) - L
    f_xiv = om[..., None] * dL_dxi + np.array([0.0, o1, 0.0])
    f_eta0 = zero
    f_etav = om[..., None] * dL_deta
    gp = spec.other_mass
    if gp > 0.0:
        w, r = _other_distance(xi, eta, spec, check=check)
        r3 = r**3
        f = f - gp * om / r
        f_xi0 = f_xi0 + gp / r - gp * om * _dot(w, ev) / r3
        f_xiv = f_xiv + (gp * om * e0 / r3)[..., None] * w
        f_eta0 = f_eta0 + gp * om * _dot(w, xv) / r3
        f_etav = f_etav + (gp * om**2 / r3)[..., None] * w
    f_xi = np.concatenate([f_xi0[..., None], f_xiv], axis=-1)
    f_eta = np.concatenate([f_eta0[..., None], f_etav], axis=-1)
    return f, f_xi, f_eta


def f_and_grad(xi, eta, spec: SystemSpec, check: bool = True):
    """``f`` and its gradients ``(f_xi, f_eta)`` as functions on ``R^8``."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if spec.chart is Chart.SINGLE:
        return _sz_f_and_grad(xi, eta, spec, spec.sz_field)
    return _3bp_f_and_grad(xi, eta, spec, check=check)


def moon_chart_field(mu: float) -> StarkZeemanField:
    """The three-body problem in the Moon chart written as a Stark-Zeeman field.

    Used as an independent code path: ``A(y) = (y2, -(y1 + m1), 0)`` and
    ``V1 = -(1-mu)/|y + m - e| - ((y1 + m1)^2 + y2^2)/2``.
    """
    m1 = mu - 1.0

    def A(y):
        y = np.asarray(y, dtype=float)
        return np.stack([y[..., 1], -(y[..., 0] + m1), np.zeros_like(y[..., 0])], axis=-1)

    def dA(y):
        out = np.zeros(np.shape(y)[:-1] + (3, 3))
        out[..., 0, 1] = 1.0
        out[..., 1, 0] = -1.0
        return out

    def V1(y):
        y = np.asarray(y, dtype=float)
        w = y + np.array([-1.0, 0.0, 0.0])
        return -(1.0 - mu) / np.linalg.norm(w, axis=-1) - 0.5 * ((y[..., 0] + m1) ** 2 + y[..., 1] ** 2)

    def gV1(y):
        y = np.asarray(y, dtype=float)
        w = y + np.array([-1.0, 0.0, 0.0])
        r = np.linalg.norm(w, axis=-1)[..., None]
        lin = np.stack([y[..., 0] + m1, y[..., 1], np.zeros_like(y[..., 0])], axis=-1)
        return (1.0 - mu) * w / r**3 - lin

    return StarkZeemanField(A=A, V1=V1, g=mu, dA=dA, grad_V1=gV1)


def f_value(r: RegState, spec: SystemSpec) -> np.ndarray:
    return f_and_grad(r.xi, r.eta, spec)[0]


def Q_reg(r: RegState, spec: SystemSpec) -> np.ndarray:
    """Regularized Hamiltonian ``f^2 |eta|^2 / 2``."""
    f = f_value(r, spec)
    return 0.5 * f**2 * _dot(r.eta, r.eta)


def grad_Q(xi, eta, spec: SystemSpec):
    f, f_xi, f_eta = f_and_grad(xi, eta, spec)
    N = _dot(eta, eta)
    return (f * N)[..., None] * f_xi, (f * N)[..., None] * f_eta + (f**2)[..., None] * eta


def _xq_from_parts(xi, eta, f, f_xi, f_eta):
    N = _dot(eta, eta)
    fe_xi = _dot(f_eta, xi)
    fe_eta = _dot(f_eta, eta)
    fx_xi = _dot(f_xi, xi)
    d_xi = f[..., None] * (f[..., None] * eta + N[..., None] * (f_eta - fe_xi[..., None] * xi))
    d_eta = (N * f)[..., None] * (
        eta * fe_xi[..., None] - f_xi - xi * (f + fe_eta - fx_xi)[..., None]
    )
    return d_xi, d_eta


def X_Q(r: RegState, spec: SystemSpec) -> TangentVector:
    """Hamiltonian vector field of ``Q`` constrained to ``T*S^3``.

    ``xi' = f (f eta + |eta|^2 (f_eta - xi <f_eta, xi>))`` and
    ``eta' = |eta|^2 f (eta <f_eta, xi> - f_xi - xi (f + <f_eta, eta> - <f_xi, xi>))``.
    With ``f = 1`` this is ``(eta, -|eta|^2 xi)``.
    """
    f, f_xi, f_eta = f_and_grad(r.xi, r.eta, spec)
    return TangentVector(*_xq_from_parts(r.xi, r.eta, f, f_xi, f_eta))


def physical_time_rate(xi, eta, f) -> np.ndarray:
    """``dt/ds = f (1 - xi0) |eta|^2``: physical time per unit of regularized time."""
    return f * (1.0 - xi[..., 0]) * _dot(eta, eta)


def make_rhs(spec: SystemSpec, with_time: bool = True) -> Callable:
    """Flat right-hand side for ``solve_ivp``-style integrators.

    The state is ``(xi, eta)`` with an optional ninth entry accumulating
    physical time.
    """

    def rhs(_s, v):
        xi, eta = v[:4], v[4:8]
        f, f_xi, f_eta = f_and_grad(xi, eta, spec)
        d_xi, d_eta = _xq_from_parts(xi, eta, f, f_xi, f_eta)
        if with_time:
            return np.concatenate([d_xi, d_eta, [physical_time_rate(xi, eta, f)]])
        return np.concatenate([d_xi, d_eta])

    return rhs


def make_unreg_rhs(spec: SystemSpec) -> Callable:
    def rhs(_t, v):
        Hq, Hp = grad_H(UnregState(v[:3], v[3:6]), spec)
        return np.concatenate([Hp, -Hq])

    return rhs


def scalar_fields(spec: SystemSpec) -> dict[str, ScalarField]:
    """Value/gradient pairs for the Hamiltonians, as used by the FD oracles."""
    return {
        "H": ScalarField(lambda s: jacobi_H(s, spec), lambda s: grad_H(s, spec)),
        "f": ScalarField(lambda r: f_value(r, spec), lambda r: f_and_grad(r.xi, r.eta, spec)[1:]),
        "Q": ScalarField(lambda r: Q_reg(r, spec), lambda r: grad_Q(r.xi, r.eta, spec)),
    }


# --------------------------------------------------------------------------
# level sets of Q

def _radial_value(xi, u, s, spec):
    """``s f(xi, s u)`` and its derivative in ``s``; NaN where ``f`` is singular."""
    eta = s[..., None] * u
    with np.errstate(divide="ignore", invalid="ignore"):
        f, _, f_eta = f_and_grad(xi, eta, spec, check=False)
    return s * f, f + s * _dot(f_eta, u)


def scale_to_level(xi, u, spec: SystemSpec, s_max: float = 1e4, n_grid: int = 240):
    """Scale factors ``s > 0`` with ``s f(xi, s u) = g`` for unit cotangent directions ``u``.

    The first positive root is taken, which lies in the Hill component of the
    regularized primary.  Returns ``(s, ok)``; ``ok`` is False where no root
    was found below ``s_max``.
    """
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    g = spec.coupling
    n = xi.shape[0]
    grid = g * np.logspace(-6, np.log10(s_max / g), n_grid)
    lo = np.full(n, np.nan)
    hi = np.full(n, np.nan)
    found = np.zeros(n, dtype=bool)
    dead = np.zeros(n, dtype=bool)
    prev_s = 0.0
    for s_val in grid:
        v, _ = _radial_value(xi, u, np.full(n, s_val), spec)
        v = v - g
        # a singular value means the ray met the other primary before reaching the level
        dead |= ~found & ~np.isfinite(v)
        cross = ~found & ~dead & (v >= 0)
        lo[cross] = prev_s
        hi[cross] = s_val
        found |= cross
        prev_s = s_val
        if (found | dead).all():
            break
    s = 0.5 * (lo + hi)
    idx = np.flatnonzero(found)
    a, b_ = lo[idx], hi[idx]
    x = s[idx]
    for _ in range(100):
        val, der = _radial_value(xi[idx], u[idx], x, spec)
        val = val - g
        a = np.where(val < 0, x, a)
        b_ = np.where(val >= 0, x, b_)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = x - val / der
        inside = np.isfinite(step) & (step > a) & (step < b_)
        x_new = np.where(inside, step, 0.5 * (a + b_))
        if np.all(np.abs(x_new - x) <= 1e-15 * np.maximum(1.0, np.abs(x))):
            x = x_new
            break
        x = x_new
    s[idx] = x
    return s, found


def sample_level_set(
    spec: SystemSpec,
    n: int,
    rng: np.random.Generator,
    near_binding_fraction: float = 0.2,
    max_failure_rate: float = 0.01,
) -> RegState:
    """Random states on the component of ``Q = g^2/2`` around the regularized primary.

    Directions are drawn uniformly; a fraction of them is squeezed towards the
    binding ``xi3 = eta3 = 0`` by factors ``10^U(-4, -1)`` so that the
    quadratic behaviour near the binding is exercised.

    Raises
    ------
    SamplingFailure
        If more than ``max_failure_rate`` of the draws admit no level point.
    """
    out_xi, out_eta = [], []
    total, failed, have = 0, 0, 0
    while have < n:
        m = max(n - have, 16)
        xi = rng.normal(size=(m, 4))
        u = rng.normal(size=(m, 4))
        k = int(round(near_binding_fraction * m))
        if k > 0:
            scale = 10.0 ** rng.uniform(-4.0, -1.0, size=k)
            xi[:k, 3] *= scale
            u[:k, 3] *= scale
        xi /= np.linalg.norm(xi, axis=1, keepdims=True)
        u -= _dot(xi, u)[:, None] * xi
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        s, ok = scale_to_level(xi, u, spec)
        total += m
        failed += int((~ok).sum())
        if total >= 100 and failed > max_failure_rate * total:
            raise SamplingFailure(f"level-set projection failed for {failed}/{total} draws")
        out_xi.append(xi[ok])
        out_eta.append(s[ok, None] * u[ok])
        have += int(ok.sum())
        if total > 20 * n + 1000:
            raise SamplingFailure("could not gather enough level-set samples")
    xi = np.concatenate(out_xi)[:n]
    eta = np.concatenate(out_eta)[:n]
    return RegState(xi, eta)


def project_to_level(r: RegState, spec: SystemSpec) -> RegState:
    """Rescale ``eta`` along its own direction onto ``Q = g^2/2``."""
    eta = np.atleast_2d(r.eta)
    xi = np.atleast_2d(r.xi)
    nrm = np.linalg.norm(eta, axis=1)
    u = eta / nrm[:, None]
    s, ok = scale_to_level(xi, u, spec)
    if not ok.all():
        raise SamplingFailure("no level point along the given cotangent direction")
    out = RegState(xi, s[:, None] * u)
    if np.ndim(r.xi) == 1:
        return RegState(out.xi[0], out.eta[0])
    return out
