from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize

from thinfrac.core import append_column, cross_columns
from thinfrac.densities import make_bulk, make_surface
from thinfrac.reduction import (check_reduced_bounds, reduce_bulk, reduce_surface, reduced_bulk_closed_form,
                                reduced_surface_closed_form, zeta_bracket)

from .conftest import E12, Q_TEST, random_rank_two

# frozen from the scalar problem min_t 2 + t^2 + 1/t, t = 2^{-1/3}
ORIENT_W0_E12 = 3.889881574842309


def test_orient_oracle_constant_is_the_scalar_minimum():
    res = optimize.minimize_scalar(lambda t: 2 + t * t + 1 / t, bounds=(0.1, 3), method="bounded",
                                   options=dict(xatol=1e-12))
    assert res.fun == pytest.approx(ORIENT_W0_E12, rel=1e-12)
    assert ORIENT_W0_E12 == pytest.approx(2 + 2 ** (-2 / 3) + 2 ** (1 / 3), rel=1e-15)


def test_reduce_bulk_at_identity_columns():
    inc = reduce_bulk(make_bulk("INCOMP_POWER"), E12)
    assert float(inc.value) == pytest.approx(3.0, rel=1e-6)
    assert np.allclose(inc.xi, [0, 0, 1], atol=1e-6)
    ori = reduce_bulk(make_bulk("ORIENT_POWER"), E12)
    assert float(ori.value) == pytest.approx(ORIENT_W0_E12, rel=1e-6)
    assert ori.xi[2] == pytest.approx(2 ** (-1 / 3), rel=1e-5)


def test_rank_one_membrane_gradient_has_infinite_reduction():
    E = np.array([[1.0, 2.0], [0.0, 0.0], [0.0, 0.0]])
    assert not reduce_bulk(make_bulk("INCOMP_POWER"), E).value.finite
    assert not reduce_bulk(make_bulk("ORIENT_POWER"), E).value.finite


def _lagrange_oracle(E):
    # min |E|^2 + |xi|^2 subject to n . xi = 1, solved as a constrained program
    n = cross_columns(E)
    res = optimize.minimize(lambda x: x @ x, np.zeros(3), method="SLSQP",
                            constraints=[dict(type="eq", fun=lambda x: n @ x - 1.0)],
                            options=dict(ftol=1e-14, maxiter=200))
    return float(np.sum(E * E) + res.fun)


def test_incompressible_reduction_matches_constrained_oracle(rng):
    W = make_bulk("INCOMP_POWER")
    for E in random_rank_two(rng, 15):
        assert float(reduce_bulk(W, E).value) == pytest.approx(_lagrange_oracle(E), rel=1e-6)


@settings(max_examples=12)
@given(st.integers(0, 2**31))
def test_reduction_is_below_every_admissible_third_column(seed):
    rng = np.random.default_rng(seed)
    E = random_rank_two(rng, 1)[0]
    W = make_bulk("ORIENT_POWER")
    W0 = float(reduce_bulk(W, E).value)
    n = cross_columns(E)
    for _ in range(20):
        xi = rng.normal(size=3)
        if n @ xi <= 0:
            xi = -xi
        assert W0 <= float(W(append_column(E, xi))) + 1e-9


@settings(max_examples=12)
@given(st.integers(0, 2**31))
def test_numeric_reduction_agrees_with_closed_form(seed):
    rng = np.random.default_rng(seed)
    E = random_rank_two(rng, 1)[0]
    for name in ("INCOMP_POWER", "ORIENT_POWER"):
        W = make_bulk(name, p=3.0)
        v, fin, _ = reduced_bulk_closed_form(W, E)
        assert fin
        assert float(reduce_bulk(W, E).value) == pytest.approx(float(v), rel=1e-6)


def test_two_sided_bounds_on_random_matrices(rng):
    W = make_bulk("INCOMP_POWER")
    for E in random_rank_two(rng, 50, floor=0.05):
        assert check_reduced_bounds(W, E).holds


def test_reduce_surface_oracle():
    psi = make_surface(Q=Q_TEST)
    r = reduce_surface(psi, [1.0, 0.0, 0.0], [1.0, 0.0])
    assert r.zeta == pytest.approx(-1.0, abs=1e-8)
    assert r.value == pytest.approx(1.5, abs=1e-8)


@given(st.floats(0, 2 * np.pi), st.floats(0.05, 3.0))
def test_reduce_surface_matches_schur_complement(theta, zlen):
    psi = make_surface(Q=Q_TEST)
    nu = np.array([np.cos(theta), np.sin(theta)])
    z = np.array([zlen, 0.0, 0.0])
    r = reduce_surface(psi, z, nu)
    val, zeta = reduced_surface_closed_form(psi, z, nu)
    assert r.value == pytest.approx(float(val), rel=1e-9, abs=1e-12)
    assert abs(r.zeta) <= zeta_bracket(psi) + 1e-9
    assert r.value <= float(psi(z, np.append(nu, 0.0))) + 1e-12
