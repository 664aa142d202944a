import numpy as np
import pytest
from numpy.testing import assert_allclose

from moserbook.dynamics import effective_potential, jacobi_H
from moserbook.equilibria import HillLabel, critical_values, hill_label, lagrange_points, resolve_energy
from moserbook.errors import OutOfRange
from moserbook.phase import Chart, SystemSpec, UnregState

MU_GRID = (0.1, 0.3, 0.5, 0.7, 0.9, 0.999)


def test_equal_masses():
    ls = lagrange_points(0.5)
    assert_allclose(ls.points[0], 0.0, atol=1e-13)
    i4 = ls.names.index("L4")
    assert_allclose(ls.points[i4], [0.0, np.sqrt(3) / 2, 0.0], atol=1e-15)
    assert ls.residuals().max() < 1e-10
    assert ls.values[0] == pytest.approx(-2.0, abs=1e-14)


@pytest.mark.parametrize("mu", MU_GRID)
def test_first_critical_value_bound(mu):
    ls = lagrange_points(mu)
    assert ls.values[0] <= -1.5
    assert ls.residuals().max() < 1e-10


@pytest.mark.parametrize("mu", [0.1, 0.3, 0.45])
def test_ordering_below_half(mu):
    v = lagrange_points(mu).values
    assert v[0] < v[1] < v[2] <= v[3] + 1e-14
    assert v[3] == pytest.approx(v[4], abs=1e-14)


@pytest.mark.parametrize("mu", [0.2, 0.8])
def test_values_are_jacobi_energy_at_rest(mu):
    ls = lagrange_points(mu)
    spec = SystemSpec(mu, -2.0)
    q = ls.points
    p = np.stack([-q[:, 1], q[:, 0], 0 * q[:, 0]], axis=1)
    assert_allclose(jacobi_H(UnregState(q, p), spec), ls.values, atol=1e-12)
    assert_allclose(effective_potential(q, mu), ls.values, atol=1e-12)


def test_out_of_range():
    for mu in (0.0, 1.0, -0.1):
        with pytest.raises(OutOfRange):
            lagrange_points(mu)


def test_hill_labels():
    mu = 0.3
    spec = SystemSpec(mu, -2.0)
    l1, l2 = critical_values(mu)
    below = l1 - 0.1
    assert hill_label(spec.moon + [1e-3, 0, 0], below, spec) is HillLabel.MOON
    assert hill_label(spec.earth + [1e-3, 0, 0], below, spec) is HillLabel.EARTH
    assert hill_label([10.0, 0, 0], below, spec) is HillLabel.UNBOUNDED
    assert hill_label([0.0, 10.0, 0.0], below, spec) is HillLabel.UNBOUNDED
    L1 = lagrange_points(mu).points[0]
    assert hill_label(L1, l1 + 0.05, spec) is HillLabel.MERGED
    assert hill_label(L1, l1 - 0.05, spec) is HillLabel.FORBIDDEN
    assert hill_label([0.0, 1.0, 0.0], below, spec) is HillLabel.FORBIDDEN


def test_hill_label_off_plane():
    spec = SystemSpec(0.5, -2.0)
    c = critical_values(0.5)[0] - 0.2
    assert hill_label(spec.moon + [0.05, 0.05, 0.1], c, spec) is HillLabel.MOON


def test_resolve_energy():
    l1, l2 = critical_values(0.5)
    assert resolve_energy("auto-below-L1", 0.5) == pytest.approx(l1 - 0.2)
    assert resolve_energy("auto-above-L1", 0.5) == pytest.approx(l1 + min(0.05, (l2 - l1) / 4))
    assert resolve_energy("-1.7", 0.5) == -1.7
    assert resolve_energy(-3, 0.5) == -3.0
