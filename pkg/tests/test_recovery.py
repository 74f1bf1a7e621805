from __future__ import annotations

import numpy as np
import pytest

from thinfrac.core import Cell, CrackedMembrane, det3, traces_from_cells
from thinfrac.densities import make_bulk, make_surface
from thinfrac.recovery import (RecoveryError, assemble_recovery, optimal_third_column, optimal_tilt,
                               partition_jump)
from thinfrac.scene import split_square, standard_fixture, uncracked_square

from .conftest import Q_TEST


def interior_segment():
    """Unit crack segment (0.5, 0)-(0.5, 1) whose ends lie inside the domain."""
    E = np.eye(3)[:, :2]
    left = Cell([[0, -0.5], [0.5, -0.5], [0.5, 1.5], [0, 1.5]], E, np.zeros(3))
    right = Cell([[0.5, -0.5], [1, -0.5], [1, 1.5], [0.5, 1.5]], E, [1.0, 0.0, 0.0])
    seg = traces_from_cells([left, right], [0.5, 0.0], [0.5, 1.0], [1.0, 0.0])
    return CrackedMembrane((0.0, 1.0, -0.5, 1.5), (left, right), (seg,))


def corner_crack():
    """L-shaped crack: up from the bottom edge, then right to the side edge."""
    E = np.eye(3)[:, :2]
    outer = Cell([[0, 0], [0.5, 0], [0.5, 0.5], [1, 0.5], [1, 1], [0, 1]], E, np.zeros(3))
    inner = Cell([[0.5, 0], [1, 0], [1, 0.5], [0.5, 0.5]], E, [0.3, 0.3, 0.0])
    a = traces_from_cells([outer, inner], [0.5, 0.0], [0.5, 0.5], [1.0, 0.0])
    b = traces_from_cells([outer, inner], [0.5, 0.5], [1.0, 0.5], [0.0, -1.0])
    return CrackedMembrane((0.0, 1.0, 0.0, 1.0), (outer, inner), (a, b))


def test_third_column_incompressible():
    t = optimal_third_column(make_bulk("INCOMP_POWER"), standard_fixture())
    assert np.allclose(t.b, [[0, 0, 1], [0, 0, 1]], atol=1e-6)
    assert np.allclose(t.dets, 1.0, atol=1e-10)
    assert np.allclose(t.coeffs[:, 2], 1.0)


def test_third_column_orientation_preserving():
    t = optimal_third_column(make_bulk("ORIENT_POWER"), standard_fixture())
    assert np.allclose(t.b[:, 2], 2 ** (-1 / 3), rtol=1e-5)
    assert t.beta == pytest.approx(2 ** (1 / 3), rel=1e-5)
    assert np.all(t.dets >= 1 / t.beta - 1e-12)


def test_third_column_rejects_rank_one_cells():
    m = uncracked_square(np.array([[1.0, 1.0], [0.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(ValueError, match="rank"):
        optimal_third_column(make_bulk("INCOMP_POWER"), m)


def test_optimal_tilt():
    z = np.array([1.0, 0.0, 0.0])
    assert optimal_tilt(make_surface(), z, [1.0, 0.0]).zeta == 0.0
    c = optimal_tilt(make_surface(Q=Q_TEST), z, [1.0, 0.0])
    assert c.zeta == pytest.approx(-1.0, abs=1e-8)
    assert abs(c.zeta) <= c.bound
    assert c.psi0 == pytest.approx(1.5, abs=1e-8) and c.psi_flat == pytest.approx(1.5 * np.sqrt(2))


@pytest.mark.parametrize("n,expected", [(4, 0.24), (1, 0.96)])
def test_partition_of_a_unit_interior_segment(n, expected):
    p = partition_jump(interior_segment(), n=n, eps=0.04)
    assert [pc.length for pc in p.pieces] == pytest.approx([expected] * n, abs=1e-14)
    gaps = [b - a for a, b in p.discarded[0]]
    assert gaps == pytest.approx([0.04 / n / 2] * (2 * n), abs=1e-14)
    assert p.discarded_length == pytest.approx(0.04)
    assert p.strips == ((),)
    if n == 1:
        assert np.allclose(p.pieces[0].center, [0.5, 0.5])


def test_partition_trims_boundary_strips_and_corner_balls():
    p = partition_jump(corner_crack(), n=2, eps=0.04, strip=0.02)
    assert p.strips[0] == ((0.0, 0.02),)
    assert p.strips[1][0] == pytest.approx((0.48, 0.5))
    assert (0.46, 0.5) == pytest.approx(max(p.discarded[0]))
    assert (0.0, 0.04) == pytest.approx(min(p.discarded[1]))
    assert len(p.pieces) == 4


def test_partition_reports_the_feasible_count():
    with pytest.raises(ValueError, match="largest feasible n is 40"):
        partition_jump(standard_fixture(), n=100, eps=0.04)


def _away_points():
    rng = np.random.default_rng(7)
    x = np.column_stack([rng.uniform(0.03, 0.3, 60), rng.uniform(0.03, 0.97, 60), rng.uniform(-0.5, 0.5, 60)])
    x[30:, 0] += 0.65
    return x


def test_orientation_recovery_is_affine_away_from_the_crack():
    W, psi = make_bulk("ORIENT_POWER"), make_surface(Q=Q_TEST)
    m = standard_fixture()
    rec = assemble_recovery(m, W, psi, 0.05, partition_jump(m))
    x = _away_points()
    ev = rec.evaluate(x)
    assert np.all(ev.owner == -1)
    b = 2 ** (-1 / 3)
    expect = m.value(x[:, :2]) + 0.05 * x[:, 2:3] * np.array([0, 0, b])
    assert np.allclose(ev.value, expect, atol=1e-12)
    assert np.allclose(ev.grad, np.diag([1, 1, b]), atol=1e-5)


def test_recovery_tilts_the_jump_and_preserves_orientation():
    W, psi = make_bulk("ORIENT_POWER"), make_surface(Q=Q_TEST)
    m = standard_fixture()
    rec = assemble_recovery(m, W, psi, 0.05, partition_jump(m))
    assert len(rec.tilts.maps) == 1
    g = np.linspace(0.4, 0.6, 21)
    X = np.stack(np.meshgrid(g, np.linspace(0.1, 0.9, 9), np.linspace(-0.5, 0.5, 5), indexing="ij"), axis=-1)
    X = X.reshape(-1, 3)
    X = X[np.abs(X[:, 0] - 0.5) > 1e-6]
    ev = rec.evaluate(X)
    assert det3(ev.grad).min() > 0


def test_incompressible_recovery_has_unit_determinant():
    W, psi = make_bulk("INCOMP_POWER"), make_surface(Q=Q_TEST)
    m = standard_fixture()
    rec = assemble_recovery(m, W, psi, 0.025, partition_jump(m))
    rng = np.random.default_rng(1)
    X = np.column_stack([rng.uniform(0.3, 0.7, 400), rng.uniform(0.0, 1.0, 400), rng.uniform(-0.5, 0.5, 400)])
    X = X[np.abs(X[:, 0] - 0.5) > 1e-3]
    ev = rec.evaluate(X)
    assert np.abs(det3(ev.grad) - 1.0).max() <= 1e-6


def test_too_large_rho_is_rejected():
    W, psi = make_bulk("INCOMP_POWER"), make_surface(Q=Q_TEST)
    m = standard_fixture()
    with pytest.raises(RecoveryError, match="smaller rho"):
        assemble_recovery(m, W, psi, 0.6, partition_jump(m))


def test_mode_must_match_density():
    W, psi = make_bulk("INCOMP_POWER"), make_surface(Q=Q_TEST)
    m = split_square()
    with pytest.raises(ValueError):
        assemble_recovery(m, W, psi, 0.05, partition_jump(m), mode="orientation_preserving")
