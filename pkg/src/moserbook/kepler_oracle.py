"""Closed-form rotating Kepler problem (``mu = 1``).

With ``H = K + L``, ``K`` the Kepler energy and ``L = p1 q2 - p2 q1`` the
rotation term, the two flows commute.  Every bounded Kepler orbit of energy
``K < 0`` is periodic with period

    T(K) = 2 pi (-2K)^(-3/2),

so on the geodesic page ``{xi3 = 0, eta3 > 0}`` the return map is the time
``T(c - L)`` flow of ``L``: a rotation of ``(xi1, xi2)`` and ``(eta1, eta2)``
fixing ``xi0, eta0, eta3``.  The ``L`` flow turns the plane clockwise
(``q1' = q2``, ``q2' = -q1``), so the rotation angle is ``-T(c - L)``.
The return map is the time-one map of ``G(L) = -2 pi (2 (L - c))^(-1/2)``,
whose derivative is ``T(c - L)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .dynamics import angular_L_reg
from .errors import EnergyDomain, NonNegativeEnergy, OutsidePage, SupercriticalEnergy
from .phase import RegState

CARDANO_GUARD = 1e-8


def kepler_period(K: float) -> float:
    """Period ``2 pi (-2K)^(-3/2)`` of a Kepler ellipse with energy ``K`` (unit mass).

    Raises
    ------
    NonNegativeEnergy
        For ``K >= 0``.
    """
    if K >= 0:
        raise NonNegativeEnergy("Kepler period needs negative energy")
    return 2.0 * np.pi * (-2.0 * K) ** -1.5


@dataclass(frozen=True)
class KeplerContext:
    c: float

    def __post_init__(self):
        if not self.c < 0:
            raise EnergyDomain("rotating Kepler context needs c < 0")

    def T(self, K: float) -> float:
        return kepler_period(K)

    def generating_function(self, L: float) -> float:
        """``G(L) = -2 pi (2 (L - c))^(-1/2)``; ``G'(L) = T(c - L)``."""
        if not L > self.c:
            raise EnergyDomain("generating function needs L > c")
        return -2.0 * np.pi * (2.0 * (L - self.c)) ** -0.5

    def rotation_angle(self, L) -> np.ndarray:
        K = self.c - np.asarray(L, dtype=float)
        if np.any(K >= 0):
            raise EnergyDomain("return map needs c - L < 0")
        return -2.0 * np.pi * (-2.0 * K) ** -1.5


def _rotate(a, b, ang):
    ca, sa = np.cos(ang), np.sin(ang)
    return ca * a - sa * b, sa * a + ca * b


def analytic_return(r: RegState, ctx: KeplerContext) -> RegState:
    """Exact return map on the geodesic page of the rotating Kepler problem.

    Raises
    ------
    EnergyDomain
        If ``c - L >= 0``.
    """
    xi = np.array(r.xi, dtype=float, copy=True)
    eta = np.array(r.eta, dtype=float, copy=True)
    ang = ctx.rotation_angle(angular_L_reg(xi, eta))
    xi[..., 1], xi[..., 2] = _rotate(xi[..., 1], xi[..., 2], ang)
    eta[..., 1], eta[..., 2] = _rotate(eta[..., 1], eta[..., 2], ang)
    return RegState(xi, eta)


def f_kepler(xi, eta, c: float) -> np.ndarray:
    """``f = 1 + (1 - xi0)(-c - 1/2 + xi2 eta1 - xi1 eta2)``."""
    return 1.0 + (1.0 - xi[..., 0]) * (-c - 0.5 + angular_L_reg(xi, eta))


def polar_points(c: float) -> tuple[RegState, RegState]:
    """``x+ = (1,0,0,0; 0,0,0,1)`` and ``x- = (-1,0,0,0; 0,0,0,-1/(2c))``."""
    if not c < 0:
        raise EnergyDomain("polar points need c < 0")
    plus = RegState(np.array([1.0, 0, 0, 0]), np.array([0.0, 0, 0, 1.0]))
    minus = RegState(np.array([-1.0, 0, 0, 0]), np.array([0.0, 0, 0, -1.0 / (2.0 * c)]))
    return plus, minus


# --------------------------------------------------------------------------
# circular orbits

def _cardano(c: float) -> tuple[float, float, float]:
    c = complex(c)
    s = np.sqrt(24 * c**3 + 81)
    a = (-54 - 8 * c**3 + 6 * s) ** (1.0 / 3.0)
    b = (54 + 8 * c**3 + 6 * s) ** (1.0 / 3.0)
    r_unb = (a / 6 + 2 * c**2 / (3 * a) - c / 3) ** 2
    r_ret = (b / 6 + 2 * c**2 / (3 * b) + c / 3) ** 2
    r_dir = c**2 - r_unb - r_ret
    return r_dir.real, r_ret.real, r_unb.real


def _bracketed(c: float) -> tuple[float, float, float]:
    def direct(r):
        return -0.5 / r - np.sqrt(r) - c

    def retro(r):
        return -0.5 / r + np.sqrt(r) - c

    tol = dict(xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    # direct-type equation peaks at r = 1 with value -3/2
    if abs(c + 1.5) < 1e-15:
        r_dir = r_unb = 1.0
    else:
        r_dir = optimize.brentq(direct, 1e-12, 1.0, **tol)
        r_unb = optimize.brentq(direct, 1.0, 4.0 * c * c + 4.0, **tol)
    r_ret = optimize.brentq(retro, 1e-12, c * c + 4.0, **tol)
    return r_dir, r_ret, r_unb


@dataclass(frozen=True)
class CircularOrbits:
    r_dir: float
    r_ret: float
    r_unbounded: float
    p_dir: float
    p_ret: float
    r_dir_bracketed: float
    r_ret_bracketed: float
    r_unbounded_bracketed: float
    used_guard: bool

    def max_disagreement(self) -> float:
        return max(
            abs(self.r_dir - self.r_dir_bracketed),
            abs(self.r_ret - self.r_ret_bracketed),
            abs(self.r_unbounded - self.r_unbounded_bracketed),
        )


def circular_orbits(c: float) -> CircularOrbits:
    """Circular planar orbits of the rotating Kepler problem at energy ``c``.

    Radii solve ``r^3 - c^2 r^2 - c r - 1/4 = 0``, computed from Cardano's
    formula (principal complex branches) and independently by bracketed
    root-finding on ``-1/(2r) -+ sqrt(r) = c``.  Near ``c = -3/2`` the radicals
    are ill-conditioned, so the bracketed values are used when
    ``|24 c^3 + 81| < 1e-8``.  Momenta are ``p = 1/sqrt(r)``.

    Raises
    ------
    SupercriticalEnergy
        For ``c > -3/2``.
    """
    if c > -1.5:
        raise SupercriticalEnergy("circular direct orbit needs c <= -3/2")
    br = _bracketed(c)
    guard = abs(24 * c**3 + 81) < CARDANO_GUARD
    cf = br if guard else _cardano(c)
    r_dir, r_ret, r_unb = cf
    return CircularOrbits(r_dir, r_ret, r_unb, r_dir**-0.5, r_ret**-0.5, *br, guard)


def cubic_residual(r: float, c: float) -> float:
    return r**3 - c**2 * r**2 - c * r - 0.25


# --------------------------------------------------------------------------
# invariant circles

@dataclass(frozen=True)
class InvariantCircle:
    """``{xi0 = x, xi3 = 0}`` orbit of the rotation through a base cotangent vector.

    The base point is ``xi = (x, sqrt(1 - x^2), 0, 0)`` with cotangent
    ``(eta0, eta1, eta2) = eta_fix``; ``eta3 >= 0`` is fixed by ``Q = 1/2``.
    """

    x: float
    eta_fix: np.ndarray
    eta3: float
    c: float

    def points(self, t) -> RegState:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        s = np.sqrt(max(1.0 - self.x**2, 0.0))
        xi = np.zeros((t.size, 4))
        eta = np.zeros((t.size, 4))
        xi[:, 0] = self.x
        xi[:, 1], xi[:, 2] = _rotate(s, 0.0, t)
        eta[:, 0] = self.eta_fix[0]
        eta[:, 1], eta[:, 2] = _rotate(self.eta_fix[1], self.eta_fix[2], t)
        eta[:, 3] = self.eta3
        return RegState(xi, eta)

    def contains(self, r: RegState, tol: float = 1e-10) -> np.ndarray:
        """Pointwise membership test."""
        xi, eta = np.atleast_2d(r.xi), np.atleast_2d(r.eta)
        s = np.sqrt(max(1.0 - self.x**2, 0.0))
        ok = np.abs(xi[:, 0] - self.x) < tol
        ok &= np.abs(xi[:, 3]) < tol
        ok &= np.abs(np.hypot(xi[:, 1], xi[:, 2]) - s) < tol
        ok &= np.abs(eta[:, 0] - self.eta_fix[0]) < tol
        ok &= np.abs(eta[:, 3] - self.eta3) < tol
        ok &= np.abs(np.hypot(eta[:, 1], eta[:, 2]) - np.hypot(self.eta_fix[1], self.eta_fix[2])) < tol
        # the angle between the xi and eta planar parts is rotation invariant
        base = np.arctan2(self.eta_fix[2], self.eta_fix[1])
        rel = np.angle((eta[:, 1] + 1j * eta[:, 2]) * np.conj(xi[:, 1] + 1j * xi[:, 2]))
        if np.hypot(self.eta_fix[1], self.eta_fix[2]) > tol and s > tol:
            ok &= np.abs(np.angle(np.exp(1j * (rel - base)))) < tol / min(s, np.hypot(self.eta_fix[1], self.eta_fix[2]))
        f = f_kepler(xi, eta, self.c)
        ok &= np.abs(0.5 * f**2 * np.einsum("ij,ij->i", eta, eta) - 0.5) < tol
        return ok


def invariant_circle(x: float, eta_fix, ctx: KeplerContext) -> InvariantCircle:
    """Invariant circle ``C_{x, eta_fix}`` of the rotating-Kepler return map.

    ``eta_fix`` is projected to be tangent at the base point.

    Raises
    ------
    OutsidePage
        If ``|eta_fix| f > 1`` so that no ``eta3 >= 0`` reaches ``Q = 1/2``.
    """
    if not -1.0 <= x <= 1.0:
        raise OutsidePage("x must lie in [-1, 1]")
    e = np.asarray(eta_fix, dtype=float).copy()
    xi3 = np.array([x, np.sqrt(max(1.0 - x * x, 0.0)), 0.0])
    e = e - (e @ xi3) * xi3
    xi = np.concatenate([xi3, [0.0]])
    f = float(f_kepler(xi, np.concatenate([e, [0.0]]), ctx.c))
    if f <= 0 or np.linalg.norm(e) * f > 1.0 + 1e-15:
        raise OutsidePage("cotangent vector does not fit in the page")
    eta3 = np.sqrt(max(f**-2 - e @ e, 0.0))
    return InvariantCircle(x, e, float(eta3), ctx.c)


def resonant_L(c: float, p: int, q: int) -> float:
    """``L`` with ``T(c - L) = 2 pi p / q``."""
    # 2 pi (2 (L - c))^(-3/2) = 2 pi p/q
    return c + 0.5 * (q / p) ** (2.0 / 3.0)
