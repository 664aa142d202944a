"""Phase-space types and the stereographic regularizing coordinate transitions.

Unregularized states live in the rotating frame, ``(q, p)`` in ``T*R^3``.
Regularized states are pairs ``(xi, eta)`` in ``T*S^3``, embedded in
``T*R^4`` through ``|xi| = 1`` and ``<xi, eta> = 0``.  The collision fibre
over the north pole ``xi = (1, 0, 0, 0)`` has no physical image.

All array functions broadcast over leading axes, so a batch of states is an
array of shape ``(n, 4)`` (or ``(n, 3)`` for physical vectors).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import CollisionLocus, DegenerateInput, OutOfRange

COLLISION_TOL = 1e-9


class Chart(enum.Enum):
    MOON = "moon"
    EARTH = "earth"
    SINGLE = "single"


@dataclass(frozen=True)
class StarkZeemanField:
    """Magnetic primitive ``A``, extra potential ``V1`` and Coulomb coupling ``g``.

    Positions are measured from the regularized centre.  ``dA`` returns the
    Jacobian ``dA_i/dq_j`` with shape ``(..., 3, 3)`` and ``grad_V1`` the
    gradient; when omitted they are replaced by central differences.
    """

    A: Callable[[np.ndarray], np.ndarray]
    V1: Callable[[np.ndarray], np.ndarray]
    g: float
    dA: Optional[Callable[[np.ndarray], np.ndarray]] = None
    grad_V1: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if not self.g > 0:
            raise OutOfRange("coupling g must be positive")
        # planar-invariance assumptions: A = (A1(q1,q2), A2(q1,q2), 0), V1 even in q3
        probes = np.random.default_rng(12345).normal(size=(6, 3))
        flipped = probes * np.array([1.0, 1.0, -1.0])
        a, a_flip = np.asarray(self.A(probes)), np.asarray(self.A(flipped))
        lifted = probes + np.array([0.0, 0.0, 0.37])
        if np.max(np.abs(a[..., 2])) > 1e-12:
            raise OutOfRange("A must have vanishing third component")
        if np.max(np.abs(a - np.asarray(self.A(lifted)))) > 1e-12 or np.max(np.abs(a - a_flip)) > 1e-12:
            raise OutOfRange("A may only depend on (q1, q2)")
        if np.max(np.abs(np.asarray(self.V1(probes)) - np.asarray(self.V1(flipped)))) > 1e-12:
            raise OutOfRange("V1 must be symmetric under q3 -> -q3")

    def jac_A(self, q: np.ndarray) -> np.ndarray:
        if self.dA is not None:
            return np.asarray(self.dA(q), dtype=float)
        h = 1e-6
        cols = []
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            cols.append((np.asarray(self.A(q + e)) - np.asarray(self.A(q - e))) / (2 * h))
        return np.stack(cols, axis=-1)

    def gradient_V1(self, q: np.ndarray) -> np.ndarray:
        if self.grad_V1 is not None:
            return np.asarray(self.grad_V1(q), dtype=float)
        h = 1e-6
        out = []
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            out.append((np.asarray(self.V1(q + e)) - np.asarray(self.V1(q - e))) / (2 * h))
        return np.stack(out, axis=-1)


def kepler_field() -> StarkZeemanField:
    """The plain Kepler problem ``A = 0``, ``V1 = 0``, ``g = 1``."""
    return StarkZeemanField(
        A=lambda q: np.zeros_like(np.asarray(q, dtype=float)),
        V1=lambda q: np.zeros(np.shape(q)[:-1]),
        g=1.0,
        dA=lambda q: np.zeros(np.shape(q)[:-1] + (3, 3)),
        grad_V1=lambda q: np.zeros_like(np.asarray(q, dtype=float)),
    )


@dataclass(frozen=True)
class SystemSpec:
    """Mass ratio, Jacobi energy and the chart used for regularization.

    ``MOON`` regularizes the collision with ``m = (mu - 1, 0, 0)`` and has
    coupling ``g = mu``; ``EARTH`` regularizes at ``e = (mu, 0, 0)`` with
    ``g = 1 - mu``.  ``SINGLE`` is a one-centre Stark-Zeeman system given by
    ``field`` (the plain Kepler problem when ``field`` is None); its centre is
    the origin.
    """

    mu: float
    c: float
    chart: Chart = Chart.MOON
    field: Optional[StarkZeemanField] = None

    def __post_init__(self):
        if not (0.0 < self.mu <= 1.0):
            raise OutOfRange(f"mu must lie in (0, 1], got {self.mu}")
        if self.chart is Chart.EARTH and self.mu >= 1.0:
            raise OutOfRange("Earth chart needs a positive Earth mass (mu < 1)")
        if self.chart is not Chart.SINGLE and self.field is not None:
            raise OutOfRange("a custom field is only allowed with the single-centre chart")

    @classmethod
    def round_sphere(cls) -> "SystemSpec":
        """Kepler problem at c = -1/2, for which f is identically one."""
        return cls(mu=1.0, c=-0.5, chart=Chart.SINGLE)

    def with_chart(self, chart: Chart) -> "SystemSpec":
        return SystemSpec(self.mu, self.c, chart, self.field)

    @property
    def moon(self) -> np.ndarray:
        return np.array([self.mu - 1.0, 0.0, 0.0])

    @property
    def earth(self) -> np.ndarray:
        return np.array([self.mu, 0.0, 0.0])

    @property
    def centre(self) -> np.ndarray:
        """Position of the regularized primary."""
        if self.chart is Chart.MOON:
            return self.moon
        if self.chart is Chart.EARTH:
            return self.earth
        return np.zeros(3)

    @property
    def other(self) -> np.ndarray:
        return self.earth if self.chart is Chart.MOON else self.moon

    @property
    def coupling(self) -> float:
        if self.chart is Chart.MOON:
            return self.mu
        if self.chart is Chart.EARTH:
            return 1.0 - self.mu
        return self.field.g if self.field is not None else 1.0

    @property
    def other_mass(self) -> float:
        if self.chart is Chart.MOON:
            return 1.0 - self.mu
        if self.chart is Chart.EARTH:
            return self.mu
        return 0.0

    @property
    def sz_field(self) -> StarkZeemanField:
        return self.field if self.field is not None else kepler_field()


@dataclass(frozen=True)
class UnregState:
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.p], axis=-1)

    @classmethod
    def from_vector(cls, v) -> "UnregState":
        v = np.asarray(v, dtype=float)
        return cls(v[..., :3], v[..., 3:6])


@dataclass(frozen=True)
class RegState:
    xi: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "xi", np.asarray(self.xi, dtype=float))
        object.__setattr__(self, "eta", np.asarray(self.eta, dtype=float))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.xi, self.eta], axis=-1)

    @classmethod
    def from_vector(cls, v) -> "RegState":
        v = np.asarray(v, dtype=float)
        return cls(v[..., :4], v[..., 4:8])

    def constraint_residuals(self) -> tuple[np.ndarray, np.ndarray]:
        return (
            np.einsum("...i,...i->...", self.xi, self.xi) - 1.0,
            np.einsum("...i,...i->...", self.xi, self.eta),
        )


# --------------------------------------------------------------------------
# stereographic transitions

def stereo_to_sphere(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(x, y)`` in ``T*R^3`` to ``(xi, eta)`` in ``T*S^3`` (no chart shift)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x2 = np.einsum("...i,...i->...", x, x)
    xy = np.einsum("...i,...i->...", x, y)
    den = x2 + 1.0
    xi0 = (x2 - 1.0) / den
    xiv = 2.0 * x / den[..., None]
    eta0 = xy
    etav = 0.5 * den[..., None] * y - xy[..., None] * x
    return (
        np.concatenate([xi0[..., None], xiv], axis=-1),
        np.concatenate([eta0[..., None], etav], axis=-1),
    )


def sphere_to_stereo(xi: np.ndarray, eta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`stereo_to_sphere`; raises on the collision fibre."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    one_minus = 1.0 - xi[..., 0]
    if np.any(one_minus < COLLISION_TOL):
        raise CollisionLocus("xi_0 = 1 has no unregularized image")
    x = xi[..., 1:] / one_minus[..., None]
    y = eta[..., :1] * xi[..., 1:] + one_minus[..., None] * eta[..., 1:]
    return x, y


def unreg_to_reg(s: UnregState, spec: SystemSpec) -> RegState:
    """Regularized coordinates of a physical state, centred at the chart's primary."""
    y = s.q - spec.centre
    x = -s.p
    xi, eta = stereo_to_sphere(x, y)
    return RegState(xi, eta)


def reg_to_unreg(r: RegState, spec: SystemSpec) -> UnregState:
    x, y = sphere_to_stereo(r.xi, r.eta)
    return UnregState(y + spec.centre, -x)


def relative_position(xi: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Physical position relative to the regularized primary; smooth through collision."""
    return eta[..., :1] * xi[..., 1:] + (1.0 - xi[..., :1]) * eta[..., 1:]


def project_to_TS3(xi, eta) -> RegState:
    """Normalize ``xi`` and remove the ``xi`` component of ``eta``."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    nrm = np.linalg.norm(xi, axis=-1)
    if np.any(nrm < 1e-9):
        raise DegenerateInput("|xi| is too small to normalize")
    xi_n = xi / nrm[..., None]
    eta_n = eta - np.einsum("...i,...i->...", xi_n, eta)[..., None] * xi_n
    return RegState(xi_n, eta_n)


def project_vector(v: np.ndarray) -> np.ndarray:
    """Flat 8-vector version of :func:`project_to_TS3` used inside the integrator."""
    xi = v[:4] / np.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + v[3] * v[3])
    eta = v[4:8] - (xi @ v[4:8]) * xi
    out = v.copy()
    out[:4] = xi
    out[4:8] = eta
    return out


def random_tangent_states(rng: np.random.Generator, n: int, eta_scale: float = 1.0) -> RegState:
    """``n`` states with ``xi`` uniform on ``S^3`` and Gaussian cotangent ``eta``."""
    xi = rng.normal(size=(n, 4))
    xi /= np.linalg.norm(xi, axis=1, keepdims=True)
    eta = rng.normal(size=(n, 4)) * eta_scale
    eta -= np.einsum("ij,ij->i", xi, eta)[:, None] * xi
    return RegState(xi, eta)
