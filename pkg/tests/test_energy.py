from __future__ import annotations

import math

import numpy as np
import pytest

from thinfrac.core import PrismGrid
from thinfrac.densities import make_bulk, make_surface
from thinfrac.energy import (SweepReport, SweepRow, bulk_energy, excess_budget, limit_energy, recovery_grid,
                             rescaled_energy, surface_energy, tilted_surface_closed_form)
from thinfrac.maps.tilt import GluedTilt
from thinfrac.recovery import (RecoveryDeformation, RecoveryError, ThirdColumn, assemble_recovery,
                               optimal_third_column, partition_jump)
from thinfrac.scene import standard_fixture, uncracked_square

from .conftest import Q_TEST

ORIENT_W0_E12 = 3.889881574842309


def _flat(membrane, W, rho=0.05, third=None):
    third = optimal_third_column(W, membrane) if third is None else third
    return RecoveryDeformation(membrane, third, GluedTilt([]), rho, W.mode, (), ())


@pytest.mark.parametrize("name,value", [("INCOMP_POWER", 3.0), ("ORIENT_POWER", ORIENT_W0_E12)])
def test_affine_membrane_without_jump(name, value):
    W = make_bulk(name)
    m = uncracked_square()
    rec = _flat(m, W)
    res = bulk_energy(rec, W, PrismGrid(m.domain, 8, 4))
    assert res.finite
    assert res.value == pytest.approx(value * m.area, abs=1e-6)


def test_wrong_third_column_is_flagged_infinite():
    W = make_bulk("INCOMP_POWER")
    m = uncracked_square()
    wrong = ThirdColumn(np.array([[0.0, 0.0, 2.0]]), np.array([0.0]), np.array([2.0]), 0.5,
                        np.array([[0.0, 0.0, 2.0]]), W.mode)
    res = bulk_energy(_flat(m, W, third=wrong), W, PrismGrid(m.domain, 4, 2))
    assert math.isinf(res.value) and not res.finite
    assert res.offending is not None and "det 2" in res.message


def test_flat_surface_measure_equals_crack_length():
    W = make_bulk("ORIENT_POWER")
    psi = make_surface()  # isotropic: no tilt
    m = standard_fixture()
    part = partition_jump(m)
    rec = assemble_recovery(m, W, psi, 0.05, part)
    assert len(rec.tilts.maps) == 0
    s = surface_energy(rec, psi, part)
    assert s.area == pytest.approx(m.jumps[0].length, abs=1e-8)
    assert s.value == pytest.approx(1.5, abs=1e-8)


@pytest.mark.parametrize("rho", [0.05, 0.0125])
def test_kept_surface_matches_tilted_closed_form(rho):
    W, psi = make_bulk("ORIENT_POWER"), make_surface(Q=Q_TEST)
    m = standard_fixture()
    part = partition_jump(m)
    rec = assemble_recovery(m, W, psi, rho, part)
    s = surface_energy(rec, psi, part)
    closed = tilted_surface_closed_form(rec, psi)
    assert s.regions["kept"] == pytest.approx(closed, rel=1e-8)
    # closed form tends to |alpha'| psi0 = 0.92 * 1.5
    assert abs(closed - 0.92 * 1.5) <= 1.5 * 0.92 * (rho ** 2)


def test_bulk_is_stable_under_grid_doubling():
    W, psi = make_bulk("ORIENT_POWER"), make_surface(Q=Q_TEST)
    m = standard_fixture()
    rec = assemble_recovery(m, W, psi, 0.05, partition_jump(m))
    coarse = bulk_energy(rec, W, recovery_grid(rec, 16, 4)).value
    fine = bulk_energy(rec, W, recovery_grid(rec, 32, 8)).value
    assert abs(fine - coarse) <= 1e-3 * fine


def test_limit_energy_and_budgets():
    psi = make_surface(Q=Q_TEST)
    m = standard_fixture()
    lim = limit_energy(m, make_bulk("INCOMP_POWER"), psi)
    assert lim.bulk == pytest.approx(3.0, rel=1e-6) and lim.surface == pytest.approx(1.5, rel=1e-8)
    lo = limit_energy(m, make_bulk("ORIENT_POWER"), psi)
    assert lo.total == pytest.approx(ORIENT_W0_E12 + 1.5, rel=1e-6)
    pb, sb = excess_budget(m, psi, partition_jump(m))
    # (psi(z, nu, 0) - psi0) = 1.5 (sqrt 2 - 1) per unit length, over 0.04 and 0.04
    assert pb == pytest.approx(0.04 * 1.5 * (math.sqrt(2) - 1), rel=1e-10)
    assert sb == pytest.approx(pb, rel=1e-10)


def test_rescaled_energy_raises_on_infinite_bulk():
    W = make_bulk("INCOMP_POWER")
    m = uncracked_square()
    wrong = ThirdColumn(np.array([[0.0, 0.0, 2.0]]), np.array([0.0]), np.array([2.0]), 0.5,
                        np.array([[0.0, 0.0, 2.0]]), W.mode)
    with pytest.raises(RecoveryError):
        rescaled_energy(_flat(m, W, third=wrong), W, make_surface(), None, PrismGrid(m.domain, 4, 2))


def test_sweep_report_logic():
    rows = [SweepRow(0.1, 5.0, 0, 0, 4.5), SweepRow(0.05, 4.7, 0, 0, 4.5), SweepRow(0.025, 4.6, 0, 0, 4.5)]
    rep = SweepReport(rows, 4.5, 4.5, 0.02, 0.03)
    assert rep.monotone and rep.budget == pytest.approx(0.05)
    assert rep.lower_bound_ok() == [True, True, True]
    rep.rows.append(SweepRow(0.0125, 4.8, 0, 0, 4.5))
    assert rep.monotone is False
    assert SweepReport(rows[:1], 4.5, 4.5, 0, 0).monotone is None
