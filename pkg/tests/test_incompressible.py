from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thinfrac.core import det3
from thinfrac.maps.incompressible import (CellField, PreconditionError, gamma_cubic, incompressible_correct,
                                          incompressible_extend, solve_gamma)
from thinfrac.maps.tilt import TiltMap
from thinfrac.scene import split_square

TWO_CELL_FIELDS = (
    CellField([0.0, 0.0, 1.0], [[0.3, 0.1], [-0.2, 0.4], [0.0, 0.0]]),
    CellField([0.1, -0.2, 1.0], [[-0.25, 0.05], [0.15, 0.2], [0.0, 0.0]]),
)


@settings(max_examples=25)
# D(G) = D0 + P G + Q G^2 stays above 0.3 for |G| <= 1
@given(st.floats(-0.5, 0.5), st.floats(0.8, 2.0), st.floats(-0.3, 0.3), st.floats(-0.2, 0.2))
def test_ode_solution_satisfies_the_cubic_identity(x3, D0, P, Q):
    g = solve_gamma(np.array([x3]), np.array([D0]), np.array([P]), np.array([Q]), atol=1e-12)
    resid = D0 * g + P * g**2 / 2 + Q * g**3 / 3 - x3
    assert abs(resid[0]) <= 1e-10
    assert g[0] == pytest.approx(gamma_cubic(np.array([x3]), D0, P, Q)[0], abs=1e-10)


def _grid(tm, n=21, m=7):
    x0, x1, y0, y1 = tm.cutoff.bounds()
    return np.stack(np.meshgrid(np.linspace(x0, x1, n), np.linspace(y0, y1, n), np.linspace(-0.5, 0.5, m),
                                indexing="ij"), axis=-1).reshape(-1, 3)


@pytest.mark.parametrize("zeta", [1.0, -2.5])
def test_corrected_tilt_has_unit_determinant(zeta):
    tm = TiltMap.disc([0.5, 0.5], [0.6, 0.8], zeta, 0.02, 0.1, 0.25)
    ct = incompressible_correct(tm, 1e-10)
    X = _grid(tm)
    _, J = ct.evaluate(X)
    assert np.abs(det3(J) - 1.0).max() <= 1e-6


def test_corrected_tilt_inverse_and_fiber_evaluation_agree():
    tm = TiltMap.disc([0.5, 0.5], [1.0, 0.0], 2.0, 0.02, 0.1, 0.25)
    ct = incompressible_correct(tm, 1e-11)
    X = _grid(tm, 9, 5)
    val, J = ct.evaluate(X)
    y, Jy, res = ct.pullback(val)
    assert np.abs(y - X).max() <= 1e-8
    assert np.abs(Jy - J).max() <= 1e-7
    assert res.max() <= 1e-12


def test_corrected_tilt_jacobian_matches_finite_differences():
    tm = TiltMap.disc([0.5, 0.5], [1.0, 0.0], 1.0, 0.05, 0.1, 0.2)
    ct = incompressible_correct(tm, 1e-12)
    x = np.array([[0.62, 0.55, 0.2]])
    _, J = ct.evaluate(x)
    h = 1e-5
    fd = np.stack([(ct.evaluate(x + h * e)[0] - ct.evaluate(x - h * e)[0])[0] / (2 * h) for e in np.eye(3)], axis=1)
    assert np.abs(fd - J[0]).max() <= 1e-6


def test_strong_tilt_violates_the_precondition():
    tm = TiltMap.disc([0.5, 0.5], [1.0, 0.0], 5.0, 0.9, 0.02, 0.05)
    with pytest.raises(PreconditionError) as info:
        incompressible_correct(tm)
    assert info.value.point is not None


def test_thick_extension_is_incompressible_and_matches_finite_differences():
    m = split_square()
    ext = incompressible_extend(m, TWO_CELL_FIELDS, rho=0.1)
    rng = np.random.default_rng(0)
    X = np.column_stack([rng.uniform(0.02, 0.48, 300), rng.uniform(0.02, 0.98, 300), rng.uniform(-0.5, 0.5, 300)])
    X[150:, 0] += 0.5
    _, J = ext.evaluate(X)
    assert np.abs(det3(J) - 1.0).max() <= 1e-8
    x = X[:1]
    h = 1e-5
    fd = np.stack([(ext.evaluate(x + h * e)[0] - ext.evaluate(x - h * e)[0])[0] / (2 * h) for e in np.eye(3)], axis=1)
    assert np.abs(fd - J[0]).max() <= 1e-6


def test_thick_extension_error_is_linear_in_height():
    m = split_square()
    ext = incompressible_extend(m, TWO_CELL_FIELDS, rho=0.1)
    xa = np.column_stack([np.linspace(0.05, 0.95, 19), np.full(19, 0.4)])
    xa = xa[np.abs(xa[:, 0] - 0.5) > 1e-3]
    errs = []
    hs = 2.0 ** -np.arange(3, 9)
    for h in hs:
        X = np.column_stack([xa, np.full(len(xa), h)])
        _, J = ext.evaluate(X)
        errs.append(np.abs(J - ext.base_frame(X)).max())
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert slope >= 0.95


def test_extension_precondition_names_the_cell():
    m = split_square()
    bad = (TWO_CELL_FIELDS[0], CellField([0.0, 0.0, 2.0]))
    with pytest.raises(PreconditionError, match="cell 1"):
        incompressible_extend(m, bad, rho=0.1)
    bad = (CellField([0.0, 0.0, 1.0], [[0, 0], [0, 0], [0.1, 0]]), TWO_CELL_FIELDS[1])
    with pytest.raises(PreconditionError, match="cell 0"):
        incompressible_extend(m, bad, rho=0.1)
