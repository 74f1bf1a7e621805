from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thinfrac.densities import make_bulk, make_surface
from thinfrac.envelopes import (EnvelopeMemo, SplitSearch, bv_ellipticity_test, kohn_strang_step,
                                quadratic_density, quasiconvex_upper_estimate, rank_one_envelope,
                                reduced_density, two_well_density)
from thinfrac.reduction import reduced_surface_density

from .conftest import E12, Q_TEST, random_rank_two

WELL_A = np.zeros((3, 2))
WELL_B = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]])


def test_level_zero_is_the_density():
    f = reduced_density(make_bulk("ORIENT_POWER"))
    assert float(rank_one_envelope(f, E12, 0)) == pytest.approx(3.889881574842309, rel=1e-12)


@settings(max_examples=6)
@given(st.integers(0, 2**31))
def test_levels_are_nonincreasing(seed):
    f = reduced_density(make_bulk("INCOMP_POWER"))
    F = random_rank_two(np.random.default_rng(seed), 1)[0]
    memo = EnvelopeMemo()
    vals = [float(rank_one_envelope(f, F, k, memo=memo)) for k in range(3)]
    assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))


def test_convex_density_is_a_fixed_point(rng):
    f = quadratic_density()
    for F in rng.normal(size=(5, 3, 2)):
        ref = float(np.sum(F * F))
        assert float(rank_one_envelope(f, F, 2)) == pytest.approx(ref, abs=1e-8)


def test_two_well_laminate_reaches_the_wells():
    f = two_well_density(WELL_A, WELL_B)
    mid = 0.5 * (WELL_A + WELL_B)
    assert float(rank_one_envelope(f, mid, 0)) == pytest.approx(0.25)
    assert float(rank_one_envelope(f, mid, 1)) <= 1e-8
    val, split = kohn_strang_step(f, mid)
    assert split is not None
    assert float(val) <= 1e-8


def test_quasiconvex_estimate_lies_between_bounds():
    f = two_well_density(WELL_A, WELL_B)
    mid = 0.5 * (WELL_A + WELL_B)
    est = quasiconvex_upper_estimate(f, mid, n=8, iters=40)
    assert -1e-12 <= est.value <= 0.25
    g = quadratic_density()
    F = np.array([[1.0, 2.0], [0.0, 1.0], [3.0, -1.0]])
    assert quasiconvex_upper_estimate(g, F, n=4, iters=10).value == pytest.approx(16.0, rel=1e-10)


def test_split_search_coarse_is_smaller():
    fine, coarse = SplitSearch(), SplitSearch().coarse()
    assert coarse.angles < fine.angles and coarse.refine == 0


def test_reduced_surface_passes_wedge_and_triangle_competitors():
    psi0 = reduced_surface_density(make_surface(Q=Q_TEST))
    i, j = np.array([1.0, 0.0, 0.0]), np.zeros(3)
    for kind in ("identity", "wedge", "triangle"):
        rep = bv_ellipticity_test(psi0, i, j, [1.0, 0.0], competitors=kind, samples=200, seed=1)
        assert rep.passed, rep.argmin
        assert rep.min_ratio >= 1.0 - 1e-12


def test_random_matrices_are_rank_two(rng):
    E = random_rank_two(rng, 10)
    assert np.all(np.linalg.norm(np.cross(E[:, :, 0], E[:, :, 1]), axis=1) >= 0.2)
