"""Second-order behaviour of the flow transverse to the binding.

Along ``B = {xi3 = eta3 = 0}`` the linearized flow in the normal frame
``(u, v) = (d eta3, d xi3)`` turns with angular speed
``(u, v) S (u, v)^T / (u^2 + v^2)``, where

    S11 = f (f + |eta|^2 f_{eta3 eta3})
    S12 = f |eta|^2 (f_{xi3 eta3} - <f_eta, xi>)
    S22 = f |eta|^2 (f_{xi3 xi3} + f + <f_eta, eta> - <f_xi, xi>).

Positive definiteness of ``S`` is the hypothesis under which the return map
extends smoothly to the boundary of the page.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynamics import X_Q, f_and_grad, scale_to_level
from .errors import CollisionInput, OffBinding, SamplingFailure
from .phase import Chart, RegState, SystemSpec, UnregState
from .sections import CutoffSpec

BINDING_TOL = 1e-10


@dataclass(frozen=True)
class NormalHessian:
    s11: np.ndarray
    s12: np.ndarray
    s22: np.ndarray

    @property
    def eigen_min(self) -> np.ndarray:
        tr = 0.5 * (self.s11 + self.s22)
        disc = np.sqrt(0.25 * (self.s11 - self.s22) ** 2 + self.s12**2)
        return tr - disc

    @property
    def eigen_max(self) -> np.ndarray:
        tr = 0.5 * (self.s11 + self.s22)
        disc = np.sqrt(0.25 * (self.s11 - self.s22) ** 2 + self.s12**2)
        return tr + disc

    def matrix(self) -> np.ndarray:
        return np.array([[self.s11, self.s12], [self.s12, self.s22]])


def _second_derivatives(xi, eta, spec: SystemSpec, h: float = 1e-6):
    """``(f_{xi3 xi3}, f_{xi3 eta3}, f_{eta3 eta3})`` on the binding.

    Closed form for the three-body problem, where the only dependence on
    ``(xi3, eta3)`` beyond the planar part is through ``y3 = eta0 xi3 + (1-xi0) eta3``
    in ``g'/|w|``; central differences of the analytic gradient otherwise.
    """
    if spec.chart is not Chart.SINGLE:
        om = 1.0 - xi[..., 0]
        gp = spec.other_mass
        if gp == 0.0:
            z = np.zeros_like(om)
            return z, z, z
        y = eta[..., :1] * xi[..., 1:] + (1.0 - xi[..., :1]) * eta[..., 1:]
        w = y + (spec.centre - spec.other)
        r3 = np.linalg.norm(w, axis=-1) ** 3
        e0 = eta[..., 0]
        return gp * om * e0**2 / r3, gp * om**2 * e0 / r3, gp * om**3 / r3
    e3 = np.zeros(4)
    e3[3] = h
    _, fx_p, _ = f_and_grad(xi + e3, eta, spec)
    _, fx_m, _ = f_and_grad(xi - e3, eta, spec)
    _, _, fe_p = f_and_grad(xi, eta + e3, spec)
    _, _, fe_m = f_and_grad(xi, eta - e3, spec)
    f_x3x3 = (fx_p[..., 3] - fx_m[..., 3]) / (2 * h)
    f_e3e3 = (fe_p[..., 3] - fe_m[..., 3]) / (2 * h)
    _, fx_ep, _ = f_and_grad(xi, eta + e3, spec)
    _, fx_em, _ = f_and_grad(xi, eta - e3, spec)
    f_x3e3 = (fx_ep[..., 3] - fx_em[..., 3]) / (2 * h)
    return f_x3x3, f_x3e3, f_e3e3


def hessian_S(r: RegState, spec: SystemSpec) -> NormalHessian:
    """Normal Hessian block at binding states.

    Raises
    ------
    OffBinding
        If ``|xi3|`` or ``|eta3|`` exceeds ``1e-10``.
    """
    xi, eta = np.asarray(r.xi, dtype=float), np.asarray(r.eta, dtype=float)
    if np.any(np.abs(xi[..., 3]) > BINDING_TOL) or np.any(np.abs(eta[..., 3]) > BINDING_TOL):
        raise OffBinding("normal Hessian is defined along the binding only")
    f, f_xi, f_eta = f_and_grad(xi, eta, spec)
    N = np.einsum("...i,...i->...", eta, eta)
    fxx, fxe, fee = _second_derivatives(xi, eta, spec)
    fe_xi = np.einsum("...i,...i->...", f_eta, xi)
    diag = f + np.einsum("...i,...i->...", f_eta, eta) - np.einsum("...i,...i->...", f_xi, xi)
    return NormalHessian(f * (f + N * fee), f * N * (fxe - fe_xi), f * N * (fxx + diag))


def hessian_S_expanded(r: RegState, spec: SystemSpec) -> NormalHessian:
    """The same block written out in Moon-chart three-body coordinates.

    ``D`` is the squared distance to the Earth.  Independent of
    :func:`hessian_S` and used as a cross-check.
    """
    if spec.chart is not Chart.MOON or spec.field is not None:
        raise ValueError("expanded formulas are written for the Moon chart")
    xi, eta = np.asarray(r.xi, dtype=float), np.asarray(r.eta, dtype=float)
    mu, c = spec.mu, spec.c
    x0, x1, x2 = xi[..., 0], xi[..., 1], xi[..., 2]
    e0, e1, e2 = eta[..., 0], eta[..., 1], eta[..., 2]
    om = 1.0 - x0
    L = x2 * e1 - x1 * e2
    N = np.einsum("...i,...i->...", eta, eta)
    D = (eta[..., 3] * om + xi[..., 3] * e0) ** 2 + (e2 * om + x2 * e0) ** 2 + (e1 * om + x1 * e0 - 1.0) ** 2
    gp = 1.0 - mu
    f = 1.0 + om * (L - c - 0.5) - x2 * gp - gp * om / np.sqrt(D)
    ev2 = e1**2 + e2**2 + eta[..., 3] ** 2
    exv = e1 * x1 + e2 * x2 + eta[..., 3] * xi[..., 3]
    xv2 = x1**2 + x2**2 + xi[..., 3] ** 2
    s11 = f * (1.0 + om * (L - c - 0.5) - x2 * gp + gp * om * (N * om**2 - D) / D**1.5)
    s22 = f * N * (gp * om / D**1.5 * (e0**2 + e0 * exv + om * ev2 - e1) + L - c + 0.5 - gp / np.sqrt(D))
    s12 = -f * N * (gp * om / (2 * D**1.5) * (2 * om * (exv - e0) + 2 * e0 * xv2 - 2 * x1))
    return NormalHessian(s11, s12, s22)


def hessian_S_fd(r: RegState, spec: SystemSpec, h: float = 1e-6) -> NormalHessian:
    """Finite-difference oracle: linearize ``X_Q`` in the ``(d eta3, d xi3)`` frame.

    With ``u' = M11 u + M12 v`` and ``v' = M21 u + M22 v`` the angular
    numerator ``u v' - v u'`` is ``M21 u^2 + (M22 - M11) u v - M12 v^2``.
    """
    xi, eta = np.asarray(r.xi, dtype=float), np.asarray(r.eta, dtype=float)

    def rates(dxi3, deta3):
        x = xi.copy()
        e = eta.copy()
        x[3] += dxi3
        e[3] += deta3
        X = X_Q(RegState(x, e), spec)
        return np.array([X.d_eta[3], X.d_xi[3]])

    col_u = (rates(0.0, h) - rates(0.0, -h)) / (2 * h)
    col_v = (rates(h, 0.0) - rates(-h, 0.0)) / (2 * h)
    M11, M21 = col_u
    M12, M22 = col_v
    return NormalHessian(M21, 0.5 * (M22 - M11), -M12)


def unreg_rotation_rate(s: UnregState, spec: SystemSpec) -> tuple[float, float]:
    """``(1, mu/|q-m|^3 + (1-mu)/|q-e|^3)`` on the planar set.

    Raises
    ------
    OffBinding
        If ``q3`` or ``p3`` is non-zero.
    CollisionInput
        Within ``1e-6`` of a primary.
    """
    q, p = np.asarray(s.q, dtype=float), np.asarray(s.p, dtype=float)
    if abs(q[2]) > BINDING_TOL or abs(p[2]) > BINDING_TOL:
        raise OffBinding("rotation rates are defined on the planar set")
    r1 = float(np.linalg.norm(q - spec.moon))
    r2 = float(np.linalg.norm(q - spec.earth))
    if r1 < 1e-6 or (spec.mu < 1.0 and r2 < 1e-6):
        raise CollisionInput("too close to a primary")
    lam2 = spec.mu / r1**3 + ((1.0 - spec.mu) / r2**3 if spec.mu < 1.0 else 0.0)
    return 1.0, lam2


def sample_binding(spec: SystemSpec, n: int, rng: np.random.Generator) -> RegState:
    """Random binding states on the energy surface component of the regularized primary."""
    xi_out, eta_out = [], []
    have, tries = 0, 0
    while have < n:
        m = max(n - have, 16)
        xi = rng.normal(size=(m, 4))
        u = rng.normal(size=(m, 4))
        xi[:, 3] = 0.0
        u[:, 3] = 0.0
        xi /= np.linalg.norm(xi, axis=1, keepdims=True)
        u -= np.einsum("ij,ij->i", xi, u)[:, None] * xi
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        s, ok = scale_to_level(xi, u, spec)
        xi_out.append(xi[ok])
        eta_out.append(s[ok, None] * u[ok])
        have += int(ok.sum())
        tries += m
        if tries > 20 * n + 1000:
            raise SamplingFailure("could not sample the binding")
    return RegState(np.concatenate(xi_out)[:n], np.concatenate(eta_out)[:n])


@dataclass
class ConvexityReport:
    states: RegState
    eigen_min: np.ndarray
    spec: SystemSpec

    @property
    def margin(self) -> float:
        return float(np.min(self.eigen_min))

    @property
    def passed(self) -> bool:
        return self.margin > 0.0

    def summary(self) -> dict:
        k = int(np.argmin(self.eigen_min))
        return {
            "mu": self.spec.mu,
            "c": self.spec.c,
            "samples": int(self.eigen_min.size),
            "min_eigenvalue": self.margin,
            "argmin_state": {"xi": self.states.xi[k].tolist(), "eta": self.states.eta[k].tolist()},
            "passed": self.passed,
        }


def convexity_certificate(spec: SystemSpec, cut: Optional[CutoffSpec], n_samples: int, seed: int,
                          include_collision: bool = True) -> ConvexityReport:
    """Sample the binding of the energy surface and check ``S > 0``.

    ``S`` lives on the binding, where every section map vanishes, so ``cut``
    does not enter and is accepted for a uniform call signature.  The
    collision circle ``xi = (1, 0, 0, 0)`` is added explicitly when
    ``include_collision`` is set, since random draws never hit it.
    """
    rng = np.random.default_rng(seed)
    st = sample_binding(spec, n_samples, rng)
    if include_collision:
        ang = np.linspace(0.0, 2 * np.pi, 8, endpoint=False)
        g = spec.coupling
        cx = np.tile([1.0, 0.0, 0.0, 0.0], (ang.size, 1))
        ce = np.column_stack([np.zeros_like(ang), g * np.cos(ang), g * np.sin(ang), np.zeros_like(ang)])
        st = RegState(np.vstack([st.xi, cx]), np.vstack([st.eta, ce]))
    S = hessian_S(st, spec)
    return ConvexityReport(st, S.eigen_min, spec)
