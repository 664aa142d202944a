"""Open-book section maps and the angular-form transversality machinery.

Three complex-valued maps on ``T*S^3`` are used, each vanishing exactly on
the binding ``B = {xi3 = eta3 = 0}``:

* physical ``Theta_p = xi3 + i ((1-xi0) eta0 xi3 + (1-xi0)^2 eta3)``, which is
  ``(1 - xi0) i (q3 + i p3)`` away from collision;
* geodesic ``Theta_g = eta3 + i xi3``;
* interpolated ``Theta = Theta_p + i rho(xi0) eta3`` with a cutoff ``rho``
  that switches on near the collision fibre ``xi0 = 1``.

Orientation.  Along the flow the argument of ``Theta_p`` (and hence of
``Theta``) *decreases*, while that of ``Theta_g`` increases.  The page angle
reported in :class:`SectionValue` is therefore ``-arg Theta`` so that it
grows with time, and the pairing is the matching positive quantity

    Omega(X_Q) = Im(Theta) Re(dTheta X_Q) - Re(Theta) Im(dTheta X_Q)
               = Omega_p(X_Q) + rho Omega_g(X_Q) - xi3 eta3 rho'(xi0) xi0'.
"""

from __future__ import annotations

import enum
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import ndimage, optimize

from .dynamics import _xq_from_parts, f_and_grad, physical_time_rate, sample_level_set
from .errors import OutOfRange, RegionMismatch
from .phase import (
    Chart,
    RegState,
    SystemSpec,
    UnregState,
    project_to_TS3,
    reg_to_unreg,
    relative_position,
    unreg_to_reg,
)

TWO_PI = 2.0 * np.pi
BINDING_PROBE = 1e-4


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


@dataclass(frozen=True)
class SectionValue:
    """``Theta`` at a state with its page angle and flow pairing.

    ``angle`` is the page angle in ``[0, 2 pi)`` (increasing along the flow);
    ``normalized_pairing`` is ``pairing / (xi3^2 + eta3^2)``, replaced on the
    binding by its limit estimated at radius ``1e-4``.
    """

    theta_complex: np.ndarray
    angle: np.ndarray
    pairing: np.ndarray
    normalized_pairing: np.ndarray


@dataclass(frozen=True)
class CutoffSpec:
    """Cutoff ``rho(xi0) = amplitude * S((xi0 - 1 + delta) / (delta - epsilon))``.

    ``S`` is the C2 smoothstep ``6t^5 - 15t^4 + 10t^3`` clipped to [0, 1], so
    ``rho`` vanishes for ``xi0 <= 1 - delta`` and equals ``amplitude`` for
    ``xi0 >= 1 - epsilon``.
    """

    delta: float = 0.4
    epsilon: float = 0.15
    amplitude: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.epsilon <= self.delta / 2.0 < 1.0):
            raise OutOfRange("cutoff needs 0 < epsilon <= delta/2 < 1")
        if not self.amplitude > 0.0:
            raise OutOfRange("cutoff amplitude must be positive")

    def _t(self, xi0):
        return np.clip((np.asarray(xi0, dtype=float) - (1.0 - self.delta)) / (self.delta - self.epsilon), 0.0, 1.0)

    def rho(self, xi0) -> np.ndarray:
        t = self._t(xi0)
        return self.amplitude * t**3 * (10.0 - 15.0 * t + 6.0 * t**2)

    def drho(self, xi0) -> np.ndarray:
        t = self._t(xi0)
        return self.amplitude * 30.0 * t**2 * (1.0 - t) ** 2 / (self.delta - self.epsilon)

    def with_amplitude(self, amplitude: float) -> "CutoffSpec":
        return CutoffSpec(self.delta, self.epsilon, amplitude)


# --------------------------------------------------------------------------
# section maps

def theta_physical(r: RegState) -> np.ndarray:
    xi, eta = r.xi, r.eta
    om = 1.0 - xi[..., 0]
    return xi[..., 3] + 1j * (om * eta[..., 0] * xi[..., 3] + om**2 * eta[..., 3])


def theta_geodesic(r: RegState) -> np.ndarray:
    return r.eta[..., 3] + 1j * r.xi[..., 3]


def theta_value(r: RegState, cut: CutoffSpec) -> np.ndarray:
    """Interpolated map ``Theta_p + i rho(xi0) eta3``."""
    return theta_physical(r) + 1j * cut.rho(r.xi[..., 0]) * r.eta[..., 3]


def page_angle(theta) -> np.ndarray:
    """Page angle of the interpolated (or physical) map, increasing along the flow."""
    return np.mod(-np.angle(theta), TWO_PI)


def geodesic_angle(r: RegState) -> np.ndarray:
    return np.mod(np.angle(theta_geodesic(r)), TWO_PI)


def unreg_physical_angle(s: UnregState) -> np.ndarray:
    """Page angle of ``i (q3 + i p3)``, the physical open book without regularization."""
    return page_angle(1j * (s.q[..., 2] + 1j * s.p[..., 2]))


# --------------------------------------------------------------------------
# pairings

def _vertical_force(y, spec: SystemSpec) -> np.ndarray:
    """``dH/dq3`` at relative position ``y`` (the vertical restoring force)."""
    if spec.chart is Chart.SINGLE:
        fld = spec.sz_field
        r = np.linalg.norm(y, axis=-1)
        return fld.g * y[..., 2] / r**3 + fld.gradient_V1(y)[..., 2]
    r = np.linalg.norm(y, axis=-1)
    out = spec.coupling * y[..., 2] / r**3
    if spec.other_mass > 0.0:
        w = y + (spec.centre - spec.other)
        out = out + spec.other_mass * y[..., 2] / np.linalg.norm(w, axis=-1) ** 3
    return out


def omega_p_closed(xi, eta, spec: SystemSpec, f=None) -> np.ndarray:
    """``Omega_p(X_Q) = (1-xi0)^2 Omega_p^u(X_H) dt/ds`` in closed form.

    ``Omega_p^u(X_H) = p3^2 + q3 dH/dq3``, written through ``xi3 = -(1-xi0) p3``
    and ``y3 = q3``; the collision fibre contributes zero.
    """
    if f is None:
        f = f_and_grad(xi, eta, spec)[0]
    om = 1.0 - xi[..., 0]
    y = relative_position(xi, eta)
    h = physical_time_rate(xi, eta, f)
    with np.errstate(divide="ignore", invalid="ignore"):
        vert = om**2 * y[..., 2] * _vertical_force(y, spec)
    vert = np.where(om > 0.0, vert, 0.0)
    return h * (xi[..., 3] ** 2 + vert)


def omega_g_closed(xi, eta, f, f_xi, f_eta) -> np.ndarray:
    """``Omega_g(X_Q) = eta3 xi3' - xi3 eta3'`` assembled from ``f`` and its gradients."""
    N = _dot(eta, eta)
    x3, e3 = xi[..., 3], eta[..., 3]
    fe_xi = _dot(f_eta, xi)
    diag = f + _dot(f_eta, eta) - _dot(f_xi, xi)
    return f**2 * e3**2 + N * f * diag * x3**2 + N * f * (f_eta[..., 3] * e3 + f_xi[..., 3] * x3 - 2 * x3 * e3 * fe_xi)


def pairing_closed(r: RegState, spec: SystemSpec, cut: CutoffSpec) -> np.ndarray:
    """Closed-form ``Omega(X_Q)`` for the interpolated map."""
    xi, eta = r.xi, r.eta
    f, f_xi, f_eta = f_and_grad(xi, eta, spec)
    d_xi, _ = _xq_from_parts(xi, eta, f, f_xi, f_eta)
    rho = cut.rho(xi[..., 0])
    drho = cut.drho(xi[..., 0])
    return (
        omega_p_closed(xi, eta, spec, f)
        + rho * omega_g_closed(xi, eta, f, f_xi, f_eta)
        - xi[..., 3] * eta[..., 3] * drho * d_xi[..., 0]
    )


def pairing_direct(r: RegState, spec: SystemSpec, cut: CutoffSpec) -> np.ndarray:
    """``Omega(X_Q)`` from the chain rule ``dTheta(X_Q)`` without the split into forms."""
    xi, eta = r.xi, r.eta
    f, f_xi, f_eta = f_and_grad(xi, eta, spec)
    dx, de = _xq_from_parts(xi, eta, f, f_xi, f_eta)
    om = 1.0 - xi[..., 0]
    rho = cut.rho(xi[..., 0])
    a = xi[..., 3]
    b = om * eta[..., 0] * xi[..., 3] + om**2 * eta[..., 3] + rho * eta[..., 3]
    da = dx[..., 3]
    db = (
        -dx[..., 0] * eta[..., 0] * xi[..., 3]
        + om * (de[..., 0] * xi[..., 3] + eta[..., 0] * dx[..., 3])
        - 2 * om * dx[..., 0] * eta[..., 3]
        + om**2 * de[..., 3]
        + cut.drho(xi[..., 0]) * dx[..., 0] * eta[..., 3]
        + rho * de[..., 3]
    )
    return b * da - a * db


def pairing_geodesic(r: RegState, spec: SystemSpec) -> np.ndarray:
    f, f_xi, f_eta = f_and_grad(r.xi, r.eta, spec)
    return omega_g_closed(r.xi, r.eta, f, f_xi, f_eta)


def _binding_limit(xi, eta, spec: SystemSpec, cut: CutoffSpec, radius: float = BINDING_PROBE) -> float:
    """Min of the normalized pairing on a small circle around a binding point."""
    vals = []
    for phi in np.linspace(0.0, TWO_PI, 8, endpoint=False):
        x = xi.copy()
        e = eta.copy()
        x[3] = radius * np.cos(phi)
        e[3] = radius * np.sin(phi)
        st = project_to_TS3(x, e)
        p = pairing_closed(st, spec, cut)
        vals.append(p / (st.xi[3] ** 2 + st.eta[3] ** 2))
    return float(np.min(vals))


def theta_interpolated(r: RegState, cut: CutoffSpec, spec: SystemSpec) -> SectionValue:
    """Interpolated section value with its closed-form pairing.

    Binding points get the normalized pairing as a limit from nearby samples.
    """
    th = theta_value(r, cut)
    pairing = pairing_closed(r, spec, cut)
    rad2 = r.xi[..., 3] ** 2 + r.eta[..., 3] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        norm = pairing / rad2
    on_b = rad2 < 1e-24
    if np.any(on_b):
        xi2 = np.atleast_2d(r.xi)
        eta2 = np.atleast_2d(r.eta)
        norm = np.atleast_1d(np.array(norm, dtype=float))
        for k in np.flatnonzero(np.atleast_1d(on_b)):
            norm[k] = _binding_limit(xi2[k], eta2[k], spec, cut)
        if np.ndim(r.xi) == 1:
            norm = norm[0]
    return SectionValue(th, page_angle(th), pairing, norm)


def a4_value(spec: SystemSpec, eta=(0.0, 0.0, 0.0, 1.0)) -> float:
    """``f + <f_eta, eta> - <f_xi, xi>`` on the collision fibre ``xi = (1, 0, 0, 0)``.

    For the three-body problem this is ``g - c - 1/2`` with ``g`` the coupling
    of the regularized primary; positivity is the convexity assumption at
    collision.
    """
    xi = np.array([1.0, 0.0, 0.0, 0.0])
    eta = np.asarray(eta, dtype=float)
    f, f_xi, f_eta = f_and_grad(xi, eta, spec)
    return float(f + f_eta @ eta - f_xi @ xi)


# --------------------------------------------------------------------------
# scans

def _threads() -> int:
    try:
        return max(1, int(os.environ.get("CR3BP_THREADS", "1")))
    except ValueError:
        return 1


def _chunked(fn, states: RegState, chunk: int = 2048):
    n = states.xi.shape[0]
    parts = [(i, min(i + chunk, n)) for i in range(0, n, chunk)]

    def run(b):
        return fn(RegState(states.xi[b[0]:b[1]], states.eta[b[0]:b[1]]))

    workers = min(_threads(), len(parts))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            out = list(ex.map(run, parts))
    else:
        out = [run(b) for b in parts]
    return np.concatenate(out) if out else np.zeros(0)


def auto_amplitude(spec: SystemSpec, cut: CutoffSpec, n_samples: int = 20000, seed: int = 12345,
                   safety: float = 0.5, cap: float = 1.0) -> CutoffSpec:
    """Scale the cutoff so the ``rho`` terms cannot beat the physical term.

    With ``A`` the physical part and ``B`` the unit-amplitude cutoff part of
    the pairing, the amplitude is ``safety * min_{B < 0} A / |B|`` measured on
    a pre-scan, capped at ``cap``.
    """
    rng = np.random.default_rng(seed)
    st = sample_level_set(spec, n_samples, rng)
    unit = cut.with_amplitude(1.0)
    A = omega_p_closed(st.xi, st.eta, spec)
    B = pairing_closed(st, spec, unit) - A
    neg = B < 0
    if not np.any(neg):
        return cut.with_amplitude(cap)
    ratio = float(np.min(A[neg] / -B[neg]))
    return cut.with_amplitude(min(cap, safety * ratio))


@dataclass
class ScanReport:
    states: RegState
    pairing: np.ndarray
    normalized: np.ndarray
    cutoff: CutoffSpec
    spec: SystemSpec

    @property
    def min_normalized(self) -> float:
        return float(np.min(self.normalized))

    @property
    def max_normalized(self) -> float:
        return float(np.max(self.normalized))

    @property
    def passed(self) -> bool:
        return bool(np.all(np.isfinite(self.normalized)) and self.min_normalized > 0.0)

    def argmin_state(self) -> RegState:
        k = int(np.argmin(self.normalized))
        return RegState(self.states.xi[k], self.states.eta[k])

    def histogram(self, bins: int = 20):
        x = np.log10(np.clip(self.normalized, 1e-300, None)) if self.passed else self.normalized
        counts, edges = np.histogram(x, bins=bins)
        return counts, edges

    def summary(self) -> dict:
        counts, edges = self.histogram()
        k = int(np.argmin(self.normalized))
        return {
            "mu": self.spec.mu,
            "c": self.spec.c,
            "chart": self.spec.chart.value,
            "samples": int(self.normalized.size),
            "delta": self.cutoff.delta,
            "epsilon": self.cutoff.epsilon,
            "amplitude": self.cutoff.amplitude,
            "min_normalized_pairing": self.min_normalized,
            "max_normalized_pairing": self.max_normalized,
            "quadratic_bound_constant": self.min_normalized,
            "argmin_state": {"xi": self.states.xi[k].tolist(), "eta": self.states.eta[k].tolist()},
            "histogram_log10": {"counts": counts.tolist(), "edges": edges.tolist()},
            "passed": self.passed,
        }

    def rows(self):
        header = ["xi0", "xi1", "xi2", "xi3", "eta0", "eta1", "eta2", "eta3", "pairing", "normalized_pairing"]
        data = np.column_stack([self.states.xi, self.states.eta, self.pairing, self.normalized])
        return header, data


def transversality_scan(spec: SystemSpec, cut: Optional[CutoffSpec], n_samples: int, seed: int,
                        auto_scale: bool = True) -> ScanReport:
    """Sample the energy surface and evaluate the normalized pairing.

    When ``auto_scale`` is set the cutoff amplitude is first fitted by
    :func:`auto_amplitude` on an independent pre-scan.
    """
    cut = cut or CutoffSpec()
    if auto_scale:
        cut = auto_amplitude(spec, cut, seed=seed + 7919)
    rng = np.random.default_rng(seed)
    st = sample_level_set(spec, n_samples, rng)
    pairing = _chunked(lambda s: pairing_closed(s, spec, cut), st)
    rad2 = st.xi[:, 3] ** 2 + st.eta[:, 3] ** 2
    norm = pairing / rad2
    return ScanReport(st, pairing, norm, cut, spec)


# --------------------------------------------------------------------------
# two-centre (connected sum) section

class Region(enum.Enum):
    MOON = "moon"
    EARTH = "earth"
    PHYSICAL = "physical"


@dataclass(frozen=True)
class TaggedState:
    """A state with the region it claims to live in.

    ``MOON`` and ``EARTH`` carry a :class:`RegState` in that primary's chart,
    ``PHYSICAL`` an :class:`UnregState`.
    """

    region: Region
    state: Union[RegState, UnregState]


def _nearer_moon(q, spec: SystemSpec) -> bool:
    return float(np.linalg.norm(q - spec.moon)) <= float(np.linalg.norm(q - spec.earth))


def theta_connected_sum(x: TaggedState, spec: SystemSpec, cut: CutoffSpec) -> SectionValue:
    """Piecewise section map for the merged Hill component.

    Physical region: ``i (q3 + i p3)``; collision charts: the interpolated map
    of that chart.  The cutoff support must stay on the primary's side of the
    bisector, which is checked for the given state.

    Raises
    ------
    RegionMismatch
        If a chart-tagged state is nearer the other primary, or a physical
        state lies in the support of a chart cutoff.
    """
    if x.region is Region.PHYSICAL:
        s = x.state
        if not isinstance(s, UnregState):
            raise RegionMismatch("physical region expects an unregularized state")
        chart = Chart.MOON if _nearer_moon(s.q, spec) else Chart.EARTH
        r = unreg_to_reg(s, spec.with_chart(chart))
        if cut.rho(r.xi[0]) > 0.0:
            raise RegionMismatch("state lies in a collision chart's cutoff support")
        th = 1j * (s.q[2] + 1j * s.p[2])
        sv = theta_interpolated(r, cut, spec.with_chart(chart))
        return SectionValue(th, page_angle(th), sv.pairing, sv.normalized_pairing)
    chart = Chart.MOON if x.region is Region.MOON else Chart.EARTH
    r = x.state
    if not isinstance(r, RegState):
        raise RegionMismatch("chart regions expect a regularized state")
    cspec = spec.with_chart(chart)
    if r.xi[0] < 1.0 - 1e-9:
        q = reg_to_unreg(r, cspec).q
        if _nearer_moon(q, spec) != (chart is Chart.MOON):
            raise RegionMismatch("chart-tagged state is nearer the other primary")
    return theta_interpolated(r, cut, cspec)


def region_of(r: RegState, spec: SystemSpec, cut: CutoffSpec) -> TaggedState:
    """Tag a chart state by the region that covers it."""
    cspec = spec
    if r.xi[0] < 1.0 - 1e-9:
        q = reg_to_unreg(r, cspec).q
        if _nearer_moon(q, spec) != (spec.chart is Chart.MOON):
            other = Chart.EARTH if spec.chart is Chart.MOON else Chart.MOON
            cspec = spec.with_chart(other)
            r = unreg_to_reg(reg_to_unreg(r, spec), cspec)
    if cut.rho(r.xi[0]) > 0.0 or r.xi[0] >= 1.0 - 1e-9:
        return TaggedState(Region.MOON if cspec.chart is Chart.MOON else Region.EARTH, r)
    return TaggedState(Region.PHYSICAL, reg_to_unreg(r, cspec))


def overlap_discrepancy(s: UnregState, spec: SystemSpec, cut: CutoffSpec) -> float:
    """Largest page-angle disagreement between the three branches at a physical state."""
    th = [1j * (s.q[2] + 1j * s.p[2])]
    for chart in (Chart.MOON, Chart.EARTH):
        r = unreg_to_reg(s, spec.with_chart(chart))
        if cut.rho(r.xi[0]) == 0.0:
            th.append(theta_value(r, cut))
    ang = [float(np.angle(t)) for t in th]
    out = 0.0
    for a in ang:
        for b in ang:
            d = abs((a - b + np.pi) % TWO_PI - np.pi)
            out = max(out, d)
    return out


def cutoff_clears_bisector(spec: SystemSpec, cut: CutoffSpec) -> bool:
    """True if no state of the energy surface near the bisector is in a cutoff support.

    ``xi0 > 1 - delta`` means ``|p|^2 > (2 - delta)/delta``; on the bisector the
    admissible momenta satisfy ``|p + J q| <= sqrt(2 (c - U))``, which is
    bounded by a grid search over the neck where the bisector meets the
    merged component.
    """
    from .dynamics import effective_potential

    mid = 0.5 * (spec.moon + spec.earth)
    ys = np.linspace(-2.0, 2.0, 401)
    Y, Z = np.meshgrid(ys, ys, indexing="ij")
    pts = np.stack([np.full_like(Y, mid[0]), Y, Z], axis=-1)
    U = effective_potential(pts, spec.mu)
    lab, _ = ndimage.label(U <= spec.c)
    # only the neck of the merged component matters, not the unbounded region
    centre_label = lab[200, 200]
    if centre_label == 0:
        return True
    ok = lab == centre_label
    pmax = np.sqrt(pts[ok][:, 0] ** 2 + pts[ok][:, 1] ** 2) + np.sqrt(2.0 * (spec.c - U[ok]))
    threshold = np.sqrt((2.0 - cut.delta) / cut.delta)
    return bool(np.max(pmax) < threshold)


@dataclass
class ConnectedScanReport:
    scan: ScanReport
    regions: list
    overlap_max: float

    @property
    def passed(self) -> bool:
        return self.scan.passed and self.overlap_max < 1e-10


def connected_sum_scan(spec: SystemSpec, cut: Optional[CutoffSpec], n_samples: int, seed: int,
                       auto_scale: bool = True) -> ConnectedScanReport:
    """Transversality scan of the piecewise section on the merged component.

    Half of the samples are drawn from each collision chart (first level
    crossing along random rays); each state is then evaluated in the chart of
    its nearer primary, where the physical branch coincides with the chart
    map because the cutoff vanishes.
    """
    cut = cut or CutoffSpec()
    mspec = spec.with_chart(Chart.MOON)
    espec = spec.with_chart(Chart.EARTH)
    if auto_scale:
        am = auto_amplitude(mspec, cut, seed=seed + 7919)
        ae = auto_amplitude(espec, cut, seed=seed + 7927)
        cut = cut.with_amplitude(min(am.amplitude, ae.amplitude))
    rng = np.random.default_rng(seed)
    n_m = n_samples // 2
    pools = [(mspec, sample_level_set(mspec, n_m, rng)), (espec, sample_level_set(espec, n_samples - n_m, rng))]
    xi_all, eta_all, pair_all, norm_all, regions = [], [], [], [], []
    overlap = 0.0
    for cspec, st in pools:
        for k in range(st.xi.shape[0]):
            tagged = region_of(RegState(st.xi[k], st.eta[k]), cspec, cut)
            sv = theta_connected_sum(tagged, spec, cut)
            if tagged.region is Region.PHYSICAL:
                overlap = max(overlap, overlap_discrepancy(tagged.state, spec, cut))
                r = unreg_to_reg(tagged.state, spec.with_chart(Chart.MOON if _nearer_moon(tagged.state.q, spec) else Chart.EARTH))
            else:
                r = tagged.state
            xi_all.append(r.xi)
            eta_all.append(r.eta)
            pair_all.append(float(sv.pairing))
            norm_all.append(float(sv.normalized_pairing))
            regions.append(tagged.region.value)
    states = RegState(np.array(xi_all), np.array(eta_all))
    rep = ScanReport(states, np.array(pair_all), np.array(norm_all), cut, spec)
    return ConnectedScanReport(rep, regions, overlap)


# --------------------------------------------------------------------------
# Lefschetz map xi3 + i eta3

def _normal_frame(v):
    xi, eta = v[:4], v[4:]
    n1 = np.concatenate([xi, np.zeros(4)])
    n2 = np.concatenate([eta, xi])
    q, _ = np.linalg.qr(np.column_stack([n1, n2]))
    return q


def _lefschetz_residual(z):
    """Lagrange conditions for ``d xi3`` and ``d eta3`` to be normal to ``T*S^3``.

    ``z = (xi, eta, a, b, a', b')``: both gradients must equal combinations of
    the constraint gradients ``(2 xi, 0)`` and ``(eta, xi)``.
    """
    xi, eta = z[:4], z[4:8]
    a, b, a2, b2 = z[8:]
    n1 = np.concatenate([2.0 * xi, np.zeros(4)])
    n2 = np.concatenate([eta, xi])
    e_re = np.zeros(8)
    e_re[3] = 1.0
    e_im = np.zeros(8)
    e_im[7] = 1.0
    return np.concatenate([e_re - a * n1 - b * n2, e_im - a2 * n1 - b2 * n2, [xi @ xi - 1.0, xi @ eta]])


def _intrinsic_hessian(fn, x0: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Hessian of ``fn`` pulled back by the retraction ``u -> project(x0 + B u)``."""
    Q = _normal_frame(x0)
    full, _ = np.linalg.qr(np.column_stack([Q, np.eye(8)]))
    B = full[:, 2:8]

    def g(u):
        y = x0 + B @ u
        st = project_to_TS3(y[:4], y[4:])
        return fn(np.concatenate([st.xi, st.eta]))

    H = np.zeros((6, 6))
    g0 = g(np.zeros(6))
    for i in range(6):
        for j in range(i, 6):
            ei = np.zeros(6)
            ej = np.zeros(6)
            ei[i] = h
            ej[j] = h
            val = (g(ei + ej) - g(ei - ej) - g(-ei + ej) + g(-ei - ej)) / (4 * h * h)
            H[i, j] = H[j, i] = val
    return H


@dataclass(frozen=True)
class CriticalPoint:
    state: RegState
    value: complex
    hessian_rank: int
    residual: float


def lefschetz_critical_points(spec: Optional[SystemSpec] = None, n_starts: int = 50, seed: int = 0,
                              tol: float = 1e-8) -> list[CriticalPoint]:
    """Critical points of ``Theta_0 = xi3 + i eta3`` on the unit disk bundle.

    A point is critical when the complex differential ``dTheta_0`` vanishes on
    the tangent space of ``T*S^3``.  (The real rank drops to one on the whole
    set ``xi = (0, 0, 0, +-1)``, but the full differential vanishes only at
    ``eta = 0``.)  Multi-start Levenberg-Marquardt on the Lagrange
    conditions ``grad xi3 = normal combination``, ``grad eta3 = normal
    combination`` together with the constraints; converged points are
    de-duplicated at ``1e-6``.  Non-degeneracy is the rank of the complex
    Hessian ``Hess Re + i Hess Im``.  ``spec`` is accepted for interface
    symmetry; the map does not depend on the dynamics.
    """
    rng = np.random.default_rng(seed)
    found: list[CriticalPoint] = []
    for _ in range(n_starts):
        xi = rng.normal(size=4)
        xi /= np.linalg.norm(xi)
        eta = rng.normal(size=4)
        eta -= (eta @ xi) * xi
        eta *= rng.uniform(0.0, 1.0) / max(np.linalg.norm(eta), 1e-12)
        v0 = np.concatenate([xi, eta])
        frame = np.column_stack([np.concatenate([2.0 * xi, np.zeros(4)]), np.concatenate([eta, xi])])
        lam = np.linalg.lstsq(frame, np.eye(8)[:, [3, 7]], rcond=None)[0]
        z0 = np.concatenate([v0, lam[:, 0], lam[:, 1]])
        sol = optimize.least_squares(_lefschetz_residual, z0, method="lm",
                                     xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=4000)
        res = float(np.linalg.norm(_lefschetz_residual(sol.x)))
        st = project_to_TS3(sol.x[:4], sol.x[4:8])
        v = np.concatenate([st.xi, st.eta])
        if res > tol or np.linalg.norm(st.eta) > 1.0:
            continue
        if any(np.linalg.norm(v - np.concatenate([c.state.xi, c.state.eta])) < 1e-6 for c in found):
            continue
        H = _intrinsic_hessian(lambda w: w[3], v) + 1j * _intrinsic_hessian(lambda w: w[7], v)
        s = np.linalg.svd(H, compute_uv=False)
        rank = int(np.sum(s > 1e-6 * max(s[0], 1.0)))
        found.append(CriticalPoint(st, complex(st.xi[3] + 1j * st.eta[3]), rank, res))
    found.sort(key=lambda c: c.value.real)
    return found
