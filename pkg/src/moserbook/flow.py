"""Constrained integration on ``T*S^3``, return maps and fixed points.

The flow of ``X_Q`` is integrated with scipy's DOP853 (8(5,3) pair with a
7th-order dense output).  After every accepted step the state is projected
back onto ``T*S^3``; the projected state and its derivative replace the
solver's own, so the next step and its dense interpolant start on the
manifold.  A ninth component accumulates physical time ``t`` through
``dt/ds = f (1 - xi0) |eta|^2``.

Return maps are computed for a *book*: a complex map ``Z`` whose argument
(the page angle) increases along the flow.  The page through a start point
is left and re-entered when the continuously lifted angle has grown by
exactly ``2 pi``; the crossing is located by Brent's method on the dense
output.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import optimize
from scipy.integrate import DOP853, solve_ivp

from .dynamics import Q_reg, make_rhs, make_unreg_rhs, project_to_level, sample_level_set
from .errors import (
    NoConvergence,
    NoReturn,
    OnBinding,
    OutsidePage,
    StepFailure,
    TimeBudgetExceeded,
)
from .phase import RegState, SystemSpec, UnregState, project_to_TS3, project_vector, reg_to_unreg, unreg_to_reg
from .sections import CutoffSpec, theta_geodesic, theta_value

TWO_PI = 2.0 * np.pi


class Projection(enum.Enum):
    EVERY_STEP = "every-step"
    NEVER = "never"


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_step: float = np.inf
    max_time: float = 1e4
    projection: Projection = Projection.EVERY_STEP

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if not self.max_time > 0:
            raise ValueError("max_time must be positive")


TIGHT = IntegratorConfig(rel_tol=1e-12, abs_tol=1e-13)


class ProjectedDOP853(DOP853):
    """DOP853 that re-projects the first eight components onto ``T*S^3`` after each step."""

    def __init__(self, fun, t0, y0, t_bound, project: bool = True, **kw):
        self._project = project
        super().__init__(fun, t0, y0, t_bound, **kw)

    def _step_impl(self):
        ok, msg = super()._step_impl()
        if ok and self._project:
            self.y = project_vector(self.y)
            self.f = self.fun(self.t, self.y)
        return ok, msg


def _solver(spec: SystemSpec, y0: np.ndarray, t_bound: float, cfg: IntegratorConfig, t0: float = 0.0):
    rhs = make_rhs(spec, with_time=True)
    return ProjectedDOP853(
        rhs, t0, y0, t_bound,
        project=cfg.projection is Projection.EVERY_STEP,
        rtol=cfg.rel_tol, atol=cfg.abs_tol, max_step=cfg.max_step,
    )


def _step(solver):
    msg = solver.step()
    if solver.status == "failed":
        raise StepFailure(str(msg))


@dataclass
class Trajectory:
    """Accepted steps of an integration with piecewise dense output.

    ``s`` is the flow time of ``X_Q`` and ``y`` holds ``(xi, eta, t)`` rows.
    """

    s: np.ndarray
    y: np.ndarray
    dense: list

    def __call__(self, s: float) -> np.ndarray:
        if len(self.dense) == 0:
            return self.y[0].copy()
        k = int(np.searchsorted(self.s, s, side="left") if self.s[-1] >= self.s[0]
                else np.searchsorted(-self.s, -s, side="left"))
        k = min(max(k, 1), len(self.dense))
        return self.dense[k - 1](s)

    def state(self, s: float) -> RegState:
        return RegState.from_vector(self(s)[:8])

    @property
    def final(self) -> RegState:
        return RegState.from_vector(self.y[-1, :8])

    @property
    def physical_time(self) -> np.ndarray:
        return self.y[:, 8]


def integrate(r: RegState, t_final: float, spec: SystemSpec, cfg: IntegratorConfig = IntegratorConfig()) -> Trajectory:
    """Integrate ``X_Q`` from ``r`` for flow time ``t_final`` (may be negative).

    Raises
    ------
    TimeBudgetExceeded
        If ``|t_final|`` exceeds ``cfg.max_time``.
    StepFailure
        If the step size underflows.
    """
    if abs(t_final) > cfg.max_time:
        raise TimeBudgetExceeded(f"requested time {t_final} exceeds budget {cfg.max_time}")
    y0 = np.concatenate([r.xi, r.eta, [0.0]])
    if t_final == 0.0:
        return Trajectory(np.array([0.0]), y0[None, :], [])
    solver = _solver(spec, y0, t_final, cfg)
    ss, ys, dense = [0.0], [y0.copy()], []
    while solver.status == "running":
        _step(solver)
        ss.append(solver.t)
        ys.append(solver.y.copy())
        dense.append(solver.dense_output())
    return Trajectory(np.array(ss), np.array(ys), dense)


# --------------------------------------------------------------------------
# books (page-angle functions)

@dataclass(frozen=True)
class Book:
    """A complex map whose argument increases along the flow.

    ``kind`` is ``"interpolated"`` (``Z = conj Theta``) or ``"geodesic"``
    (``Z = eta3 + i xi3``).
    """

    kind: str = "interpolated"
    cut: CutoffSpec = field(default_factory=CutoffSpec)

    def z(self, xi, eta) -> np.ndarray:
        r = RegState(xi, eta)
        if self.kind == "geodesic":
            return theta_geodesic(r)
        return np.conj(theta_value(r, self.cut))

    def angle(self, xi, eta) -> np.ndarray:
        return np.mod(np.angle(self.z(xi, eta)), TWO_PI)

    def page_residual(self, xi, eta, theta0: float) -> np.ndarray:
        return np.imag(np.exp(-1j * theta0) * self.z(xi, eta))


GEODESIC = Book("geodesic")


def _wrap(a):
    return (a + np.pi) % TWO_PI - np.pi


@dataclass
class ReturnRecord:
    start: RegState
    end: RegState
    return_time: float
    physical_time: float
    angle_swept: float
    q_drift: float
    crossings: list

    def to_dict(self) -> dict:
        return {
            "start": {"xi": self.start.xi.tolist(), "eta": self.start.eta.tolist()},
            "end": {"xi": self.end.xi.tolist(), "eta": self.end.eta.tolist()},
            "return_time": self.return_time,
            "physical_time": self.physical_time,
            "angle_swept": self.angle_swept,
            "q_drift": self.q_drift,
            "crossings": [[float(a), float(b)] for a, b in self.crossings],
        }


def return_map(r: RegState, spec: SystemSpec, cut: Optional[CutoffSpec] = None,
               cfg: IntegratorConfig = IntegratorConfig(), book: Optional[Book] = None,
               n_sub: int = 8) -> ReturnRecord:
    """First return of ``r`` to its own page.

    The page angle is lifted continuously by sampling the dense output at
    ``n_sub`` interior points per step; the return is the first time the
    lifted angle has grown by ``2 pi``, refined by Brent's method.

    Raises
    ------
    OnBinding
        If ``|Z(r)| < 1e-6``.
    NoReturn
        If no return happens before ``cfg.max_time``.
    """
    if book is None:
        book = Book("interpolated", cut or CutoffSpec())
    z0 = book.z(r.xi, r.eta)
    if abs(z0) < 1e-6:
        raise OnBinding("start point is on (or numerically at) the binding")
    theta0 = float(np.angle(z0))
    target = theta0 + TWO_PI
    y0 = np.concatenate([r.xi, r.eta, [0.0]])
    solver = _solver(spec, y0, cfg.max_time, cfg)
    lifted = theta0
    s_prev = 0.0
    crossings = []

    def ang(y):
        return float(np.angle(book.z(y[:4], y[4:8])))

    while True:
        if solver.status != "running":
            raise NoReturn(f"no return to the page within flow time {cfg.max_time}")
        _step(solver)
        dense = solver.dense_output()
        grid = np.linspace(s_prev, solver.t, n_sub + 1)[1:]
        a_left, s_left = lifted, s_prev
        for s_k in grid:
            y_k = dense(s_k) if s_k < solver.t else solver.y
            a_k = a_left + _wrap(ang(y_k) - a_left)
            if a_k >= target:
                ref = a_left

                def gfun(s):
                    return ref + _wrap(ang(dense(s)) - ref) - target

                s_star = optimize.brentq(gfun, s_left, s_k, xtol=1e-14, rtol=1e-15, maxiter=200)
                y_star = dense(s_star)
                end = RegState.from_vector(project_vector(y_star[:8]))
                crossings.append((s_star, float(np.angle(book.z(end.xi, end.eta)))))
                q_drift = float(abs(Q_reg(end, spec) - Q_reg(r, spec)))
                swept = ref + _wrap(ang(y_star) - ref) - theta0
                return ReturnRecord(r, end, float(s_star), float(y_star[8]), float(swept), q_drift, crossings)
            if np.floor((a_k - theta0) / np.pi) > np.floor((a_left - theta0) / np.pi):
                crossings.append((float(s_k), float(a_k)))
            a_left, s_left = a_k, s_k
        lifted, s_prev = a_left, solver.t


# --------------------------------------------------------------------------
# symmetries

_SIGNS = {
    "r": np.array([1, 1, 1, -1, 1, 1, 1, -1], dtype=float),
    "rho1": np.array([1, -1, 1, 1, -1, 1, -1, -1], dtype=float),
    "rho2": np.array([1, -1, 1, -1, -1, 1, -1, 1], dtype=float),
}


def involution(kind: str, x: RegState) -> RegState:
    """Apply ``r`` (symplectic) or ``rho1``/``rho2`` (anti-symplectic) sign patterns."""
    try:
        s = _SIGNS[kind]
    except KeyError:
        raise ValueError(f"unknown involution {kind!r}") from None
    v = x.as_vector() * s
    return RegState.from_vector(v)


# --------------------------------------------------------------------------
# page charts

class PageChart:
    """Local coordinates ``u`` in R^4 on the page ``arg Z = theta0`` of ``Q = g^2/2``.

    ``x(u) = xbar + B u + N v(u)`` with ``B`` and ``N`` orthonormal bases of
    the tangent and normal spaces of the page at ``xbar``; ``v(u)`` solves
    the four constraints by Newton's method.  The inverse is
    ``u = B^T (x - xbar)``.
    """

    def __init__(self, xbar: RegState, spec: SystemSpec, book: Book, theta0: Optional[float] = None):
        self.spec = spec
        self.book = book
        self.level = 0.5 * spec.coupling**2
        x = xbar.as_vector()
        self.theta0 = float(np.angle(book.z(x[:4], x[4:]))) if theta0 is None else theta0
        self.xbar = x
        J = self.jac(x)
        _, _, Vt = np.linalg.svd(J)
        self.N = Vt[:4].T
        self.B = Vt[4:].T

    def constraints(self, x) -> np.ndarray:
        xi, eta = x[:4], x[4:8]
        return np.array([
            xi @ xi - 1.0,
            xi @ eta,
            float(Q_reg(RegState(xi, eta), self.spec)) - self.level,
            float(self.book.page_residual(xi, eta, self.theta0)),
        ])

    def jac(self, x, h: float = 1e-7) -> np.ndarray:
        J = np.zeros((4, 8))
        for k in range(8):
            e = np.zeros(8)
            e[k] = h
            J[:, k] = (self.constraints(x + e) - self.constraints(x - e)) / (2 * h)
        return J

    def point(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        base = self.xbar + self.B @ u
        v = np.zeros(4)
        for _ in range(50):
            x = base + self.N @ v
            c = self.constraints(x)
            if np.max(np.abs(c)) < 1e-15:
                break
            dv = np.linalg.solve(self.jac(x) @ self.N, -c)
            v = v + dv
            if np.linalg.norm(dv) < 1e-16:
                break
        else:
            raise NoConvergence("could not solve the page constraints")
        x = base + self.N @ v
        if np.real(np.exp(-1j * self.theta0) * self.book.z(x[:4], x[4:8])) <= 0:
            raise OutsidePage("chart point lies on the opposite page")
        return x

    def coords(self, x) -> np.ndarray:
        return self.B.T @ (np.asarray(x, dtype=float)[:8] - self.xbar)

    def tangent_frame(self, u) -> np.ndarray:
        """Columns ``dx/du`` at ``x(u)``."""
        x = self.point(u)
        J = self.jac(x)
        dv = -np.linalg.solve(J @ self.N, J @ self.B)
        return self.B + self.N @ dv


def _omega_matrix(T: np.ndarray) -> np.ndarray:
    """``omega(v_i, v_j) = <v_i eta, v_j xi> - <v_j eta, v_i xi>`` for columns of ``T``."""
    Xi, Eta = T[:4], T[4:8]
    M = Eta.T @ Xi
    return M - M.T


def chart_return(chart: PageChart, u, cfg: IntegratorConfig) -> tuple[np.ndarray, ReturnRecord]:
    x = chart.point(u)
    rec = return_map(RegState.from_vector(x), chart.spec, cfg=cfg, book=chart.book)
    return chart.coords(rec.end.as_vector()), rec


def return_jacobian(chart: PageChart, u, cfg: IntegratorConfig, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference Jacobian of the return map in chart coordinates."""
    J = np.zeros((4, 4))
    for k in range(4):
        e = np.zeros(4)
        e[k] = h
        J[:, k] = (chart_return(chart, u + e, cfg)[0] - chart_return(chart, u - e, cfg)[0]) / (2 * h)
    return J


def fixed_point_search(guess: RegState, spec: SystemSpec, cut: Optional[CutoffSpec] = None,
                       cfg: IntegratorConfig = TIGHT, book: Optional[Book] = None,
                       theta0: Optional[float] = None, max_iter: int = 50, tol: float = 1e-9,
                       fd_step: float = 1e-6) -> RegState:
    """Damped Newton for a fixed point of the return map on a page.

    The page defaults to the one through ``guess``.  Converged when the
    return displacement ``|R(x) - x|`` drops below ``tol``.

    Raises
    ------
    NoConvergence
        After ``max_iter`` iterations.
    """
    if book is None:
        book = Book("interpolated", cut or CutoffSpec())
    chart = PageChart(guess, spec, book, theta0)
    u = np.zeros(4)
    for _ in range(max_iter):
        x = chart.point(u)
        rec = return_map(RegState.from_vector(x), spec, cfg=cfg, book=book)
        disp = rec.end.as_vector() - x
        if np.linalg.norm(disp) < tol:
            return RegState.from_vector(x)
        G = chart.coords(rec.end.as_vector()) - u
        J = return_jacobian(chart, u, cfg, h=fd_step) - np.eye(4)
        step = np.linalg.lstsq(J, -G, rcond=None)[0]
        lam = 1.0
        g0 = np.linalg.norm(G)
        while lam > 1e-4:
            try:
                trial = u + lam * step
                Gt = chart_return(chart, trial, cfg)[0] - trial
                if np.linalg.norm(Gt) < g0 or lam <= 1.0 / 64:
                    break
            except (NoConvergence, OutsidePage, NoReturn):
                pass
            lam *= 0.5
        u = u + lam * step
    raise NoConvergence(f"fixed point search did not converge in {max_iter} iterations")


@dataclass
class VolumeCheck:
    det_jacobian: float
    density_ratio: float

    @property
    def distortion(self) -> float:
        return abs(self.det_jacobian * self.density_ratio - 1.0)


def volume_distortion(chart: PageChart, u, cfg: IntegratorConfig = TIGHT, h: float = 1e-5) -> VolumeCheck:
    """Change of the ``omega^2`` volume of a small simplex under the return map.

    In chart coordinates the invariant density is the Pfaffian of the
    induced form, so preservation reads
    ``|det DR| sqrt(det Omega(R u) / det Omega(u)) = 1``.
    """
    u = np.asarray(u, dtype=float)
    J = return_jacobian(chart, u, cfg, h)
    u_end, _ = chart_return(chart, u, cfg)
    w0 = np.linalg.det(_omega_matrix(chart.tangent_frame(u)))
    w1 = np.linalg.det(_omega_matrix(chart.tangent_frame(u_end)))
    return VolumeCheck(float(abs(np.linalg.det(J))), float(np.sqrt(w1 / w0)))


# --------------------------------------------------------------------------
# export and conjugacy

def trajectory_records(traj: Trajectory, spec: SystemSpec, cut: Optional[CutoffSpec] = None):
    """One dict per accepted step: flow time, state, ``Q`` and ``Theta``."""
    cut = cut or CutoffSpec()
    for s, y in zip(traj.s, traj.y):
        r = RegState.from_vector(y[:8])
        th = complex(theta_value(r, cut))
        yield {
            "s": float(s),
            "t": float(y[8]),
            "xi": y[:4].tolist(),
            "eta": y[4:8].tolist(),
            "Q": float(Q_reg(r, spec)),
            "theta": [th.real, th.imag],
        }


@dataclass
class ConjugacyReport:
    times: np.ndarray
    max_error: float
    min_distance: float

    @property
    def passed(self) -> bool:
        return self.max_error < 1e-6


def conjugacy_check(s0: UnregState, spec: SystemSpec, t_phys: float, n_checks: int = 25,
                    cfg: IntegratorConfig = TIGHT) -> ConjugacyReport:
    """Compare the ``X_H`` flow with the pushed-forward ``X_Q`` flow.

    ``X_H`` is integrated in ``T*R^3`` with DOP853; ``X_Q`` from the
    regularized image of ``s0``.  At ``n_checks`` physical times the flow
    time of ``X_Q`` is found by Brent's method on the accumulated physical
    time and the two positions and momenta are compared.
    """
    ref = solve_ivp(make_unreg_rhs(spec), (0.0, t_phys), s0.as_vector(), method="DOP853",
                    rtol=cfg.rel_tol, atol=cfg.abs_tol, dense_output=True)
    if ref.status != 0:
        raise StepFailure(ref.message)
    r0 = unreg_to_reg(s0, spec)
    solver = _solver(spec, np.concatenate([r0.xi, r0.eta, [0.0]]), cfg.max_time, cfg)
    pieces = []
    while solver.y[8] < t_phys:
        if solver.status != "running":
            raise NoReturn("regularized flow did not reach the requested physical time")
        s_left = solver.t
        _step(solver)
        pieces.append((s_left, solver.t, solver.dense_output()))
    times = np.linspace(0.0, t_phys, n_checks + 1)[1:]
    err, dmin = 0.0, np.inf
    for t in times:
        for a, b, dense in pieces:
            if dense(b)[8] >= t:
                s_t = optimize.brentq(lambda s: dense(s)[8] - t, a, b, xtol=1e-15, rtol=1e-15)
                u = reg_to_unreg(RegState.from_vector(dense(s_t)[:8]), spec).as_vector()
                break
        v = ref.sol(t)
        err = max(err, float(np.max(np.abs(u - v)) / max(1.0, float(np.max(np.abs(v))))))
        dmin = min(dmin, float(np.linalg.norm(v[:3] - spec.centre)))
    return ConjugacyReport(times, err, dmin)


def sample_page_points(spec: SystemSpec, n: int, rng: np.random.Generator, book: Book = GEODESIC,
                       min_modulus: float = 1e-2) -> RegState:
    """Random energy-surface states with ``|Z| >= min_modulus``.

    For the geodesic book the states are moved onto the page ``{xi3 = 0,
    eta3 > 0}`` by zeroing ``xi3`` and re-projecting onto ``T*S^3`` and the
    level set; any state lies on some page of the interpolated book.
    """
    xi_out, eta_out = [], []
    tries = 0
    while len(xi_out) < n:
        st = sample_level_set(spec, 2 * (n - len(xi_out)) + 8, rng, near_binding_fraction=0.0)
        for k in range(st.xi.shape[0]):
            xi, eta = st.xi[k].copy(), st.eta[k].copy()
            if book.kind == "geodesic":
                xi[3] = 0.0
                x = project_to_level(project_to_TS3(xi, eta), spec)
                ok = x.eta[3] >= min_modulus
            else:
                x = RegState(xi, eta)
                ok = abs(book.z(xi, eta)) >= min_modulus
            if ok and len(xi_out) < n:
                xi_out.append(x.xi)
                eta_out.append(x.eta)
        tries += 1
        if tries > 50:
            raise OutsidePage("could not draw enough interior page points")
    return RegState(np.array(xi_out), np.array(eta_out))
