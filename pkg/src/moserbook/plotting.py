"""Static SVG figures for the command-line reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .sections import page_angle, theta_value  # noqa: E402

# fixed ids and no timestamp so that repeated runs write identical files
matplotlib.rcParams["svg.hashsalt"] = "moserbook"
_META = {"Date": None, "Creator": "moserbook"}


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)
    return path


def section_scatter(report, path) -> Path:
    """Scan samples in the ``(xi0, page angle)`` plane coloured by normalized pairing."""
    st = report.states
    ang = page_angle(theta_value(st, report.cutoff))
    val = np.log10(np.clip(report.normalized, 1e-12, None))
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    sc = ax.scatter(st.xi[:, 0], ang, c=val, s=3, cmap="viridis", linewidths=0)
    fig.colorbar(sc, ax=ax, label="log10 normalized pairing")
    ax.set_xlabel(r"$\xi_0$")
    ax.set_ylabel("page angle")
    ax.set_title(f"mu={report.spec.mu:g}, c={report.spec.c:.6g}, min={report.min_normalized:.3e}")
    fig.tight_layout()
    return _save(fig, path)


def return_displacement(starts: np.ndarray, ends: np.ndarray, path, title: str = "") -> Path:
    """Displacement field of a return map drawn in the ``(xi1, xi2)`` plane."""
    fig, ax = plt.subplots(figsize=(5.2, 5.2))
    d = ends - starts
    ax.quiver(starts[:, 1], starts[:, 2], d[:, 1], d[:, 2], angles="xy", scale_units="xy", scale=1.0,
              width=0.003, color="tab:blue")
    ax.set_aspect("equal")
    ax.set_xlabel(r"$\xi_1$")
    ax.set_ylabel(r"$\xi_2$")
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def deviation_histogram(dev: np.ndarray, path, title: str = "") -> Path:
    """Histogram of ``log10`` deviations, used by the oracle comparison."""
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    ax.hist(np.log10(np.clip(dev, 1e-17, None)), bins=30, color="tab:gray")
    ax.set_xlabel("log10 deviation")
    ax.set_ylabel("count")
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def orbit_projection(traj_y: np.ndarray, q: np.ndarray, path, title: str = "") -> Path:
    """Physical-position projection of an orbit (collision points are skipped)."""
    fig, ax = plt.subplots(figsize=(5.2, 5.2))
    ax.plot(q[:, 0], q[:, 1], lw=0.8)
    ax.set_aspect("equal")
    ax.set_xlabel(r"$q_1$")
    ax.set_ylabel(r"$q_2$")
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)
