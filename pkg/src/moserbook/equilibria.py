"""Lagrange points, critical energies and Hill-region components."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, optimize

from .dynamics import effective_potential, grad_effective_potential
from .errors import OutOfRange
from .phase import SystemSpec

BRACKET_GAP = 1e-6


class HillLabel(enum.Enum):
    MOON = "MoonComponent"
    EARTH = "EarthComponent"
    MERGED = "MergedComponent"
    UNBOUNDED = "Unbounded"
    FORBIDDEN = "Forbidden"


@dataclass(frozen=True)
class LagrangeSet:
    """The five critical points of the effective potential, sorted by value.

    ``points[0]`` is L1 (lowest value), ``points[3]`` and ``points[4]`` the
    equilateral points.  ``names`` records the classical label of each entry
    (collinear points as ``"L1"``..``"L3"``, equilateral ones as ``"L4"``,
    ``"L5"``); ties between L4 and L5 keep L4 (upper half plane) first.
    """

    mu: float
    points: np.ndarray
    values: np.ndarray
    names: tuple

    def residuals(self) -> np.ndarray:
        return np.linalg.norm(grad_effective_potential(self.points, self.mu), axis=-1)


def _collinear_slope(x: float, mu: float) -> float:
    return float(grad_effective_potential(np.array([x, 0.0, 0.0]), mu)[0])


def _collinear_root(a: float, b: float, mu: float) -> float:
    x = optimize.brentq(_collinear_slope, a, b, args=(mu,), xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    m1, e1 = mu - 1.0, mu
    # Newton polish on the analytic second derivative
    for _ in range(5):
        d1, d2 = x - m1, x - e1
        second = -1.0 - 2 * mu / abs(d1) ** 3 - 2 * (1 - mu) / abs(d2) ** 3
        step = _collinear_slope(x, mu) / second
        x -= step
        if abs(step) < 1e-15:
            break
    return x


def lagrange_points(mu: float) -> LagrangeSet:
    """Locate L1..L5 for mass ratio ``mu`` in (0, 1).

    Collinear points come from bracketed root-finding of the x-derivative of
    the effective potential on the three intervals cut by the primaries, the
    equilateral points from ``(mu - 1/2, +-sqrt(3)/2, 0)``.

    Raises
    ------
    OutOfRange
        If ``mu`` is not in (0, 1).
    """
    if not (0.0 < mu < 1.0):
        raise OutOfRange(f"mu must lie in (0, 1), got {mu}")
    m1, e1 = mu - 1.0, mu
    d = BRACKET_GAP
    xs = {
        "outer_moon": _collinear_root(-2.0, m1 - d, mu),
        "between": _collinear_root(m1 + d, e1 - d, mu),
        "outer_earth": _collinear_root(e1 + d, 2.0, mu),
    }
    col = np.array([[x, 0.0, 0.0] for x in xs.values()])
    h = np.sqrt(3.0) / 2.0
    tri = np.array([[mu - 0.5, h, 0.0], [mu - 0.5, -h, 0.0]])
    pts = np.vstack([col, tri])
    vals = effective_potential(pts, mu)
    order = np.argsort(vals[:3], kind="stable")
    pts = np.vstack([col[order], tri])
    vals = np.concatenate([vals[:3][order], vals[3:]])
    return LagrangeSet(mu, pts, vals, ("L1", "L2", "L3", "L4", "L5"))


def critical_values(mu: float) -> tuple[float, float]:
    """``(H(L1), H(L2))``."""
    ls = lagrange_points(mu)
    return float(ls.values[0]), float(ls.values[1])


def _segment_admissible(q: np.ndarray, target: np.ndarray, c: float, mu: float, n: int = 400) -> bool:
    t = np.linspace(0.0, 1.0, n)[:-1]
    pts = q[None, :] + t[:, None] * (target - q)[None, :]
    with np.errstate(divide="ignore"):
        return bool(np.all(effective_potential(pts, mu) <= c))


def _grid_component(q, c, mu, half_width=3.0, n=401):
    """Flood fill of the admissible region in the plane ``q3 = 0``.

    ``U`` increases with ``|q3|``, so every admissible point is joined to its
    projection onto this plane by an admissible vertical segment and the
    planar components are the spatial ones.
    """
    xs = np.linspace(-half_width, half_width, n)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    pts = np.stack([X, Y, np.zeros_like(X)], axis=-1)
    with np.errstate(divide="ignore"):
        ok = effective_potential(pts, mu) <= c
    lab, _ = ndimage.label(ok)

    def idx(p):
        i = int(np.clip(np.rint((p[0] + half_width) / (2 * half_width) * (n - 1)), 0, n - 1))
        j = int(np.clip(np.rint((p[1] + half_width) / (2 * half_width) * (n - 1)), 0, n - 1))
        return i, j

    border = set(np.unique(np.concatenate([lab[0], lab[-1], lab[:, 0], lab[:, -1]]))) - {0}
    return lab, idx, border


def hill_label(q, c: float, spec: SystemSpec) -> HillLabel:
    """Component of the Hill region at energy ``c`` containing ``q``.

    Admissible points with a straight admissible segment to a primary get that
    primary's label directly; otherwise the connectivity is decided on a grid
    in the plane through ``q``'s projection.  The Moon and Earth components
    are reported as merged when ``H(L1) < c < H(L2)``.
    """
    q = np.asarray(q, dtype=float)
    mu = spec.mu
    with np.errstate(divide="ignore"):
        if effective_potential(q, mu) > c:
            return HillLabel.FORBIDDEN
    m, e = spec.moon, spec.earth
    if mu >= 1.0:
        if _segment_admissible(q, m, c, mu):
            return HillLabel.MOON
        return HillLabel.UNBOUNDED
    l1, l2 = critical_values(mu)
    merged = l1 < c < l2
    if c >= l2:
        return HillLabel.UNBOUNDED
    near_m = _segment_admissible(q, m, c, mu)
    near_e = _segment_admissible(q, e, c, mu)
    if near_m or near_e:
        if merged:
            return HillLabel.MERGED
        return HillLabel.MOON if near_m else HillLabel.EARTH
    far = max(3.0, 1.5 * float(np.linalg.norm(q[:2])) + 1.5)
    if np.linalg.norm(q[:2]) >= far - 0.5:
        return HillLabel.UNBOUNDED
    lab, idx, border = _grid_component(q, c, mu, half_width=far)
    k = lab[idx(q)]
    if k == 0 or k in border:
        return HillLabel.UNBOUNDED
    if k == lab[idx(m)] or k == lab[idx(e)]:
        if merged:
            return HillLabel.MERGED
        return HillLabel.MOON if k == lab[idx(m)] else HillLabel.EARTH
    return HillLabel.UNBOUNDED


def resolve_energy(token, mu: float) -> float:
    """Numeric energy, or the shorthands ``auto-below-L1`` / ``auto-above-L1``."""
    if isinstance(token, (int, float)):
        return float(token)
    text = str(token).strip()
    if text in ("auto-below-L1", "auto-above-L1"):
        l1, l2 = critical_values(mu)
        if text == "auto-below-L1":
            return l1 - 0.2
        return l1 + min(0.05, (l2 - l1) / 4.0)
    return float(text)
