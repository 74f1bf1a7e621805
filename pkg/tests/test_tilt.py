from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from thinfrac.maps.cutoff import BoxCutoff, DiscCutoff
from thinfrac.maps.tilt import GluedTilt, TiltMap, build_O_rho, eval_tilt, jump_plane_normals, tilt_inverse

angles = st.floats(0, 2 * np.pi)
zetas = st.floats(-5, 5)
rhos = st.floats(1e-3, 0.999)


def _box(rho, zeta):
    return np.stack(np.meshgrid(np.linspace(0.25, 0.75, 21), np.linspace(0.25, 0.75, 21),
                                np.linspace(-0.5, 0.5, 5), indexing="ij"), axis=-1).reshape(-1, 3)


@given(angles, zetas, rhos)
def test_rotation_is_orthogonal_with_unit_determinant(th, zeta, rho):
    O = build_O_rho([np.cos(th), np.sin(th)], zeta, rho)
    assert np.abs(O.T @ O - np.eye(3)).max() <= 1e-12
    assert np.linalg.det(O) == pytest.approx(1.0, abs=1e-12)


@given(angles, zetas, rhos)
def test_rotation_tilts_the_normal(th, zeta, rho):
    k = np.array([np.cos(th), np.sin(th)])
    O = build_O_rho(k, zeta, rho)
    s = np.sqrt(1 + (rho * zeta) ** 2)
    assert np.allclose(O @ np.append(k, 0.0), np.append(k, rho * zeta) / s, atol=1e-14)


def test_rotation_rejects_bad_input():
    with pytest.raises(ValueError):
        build_O_rho([1.0, 1.0], 1.0, 0.1)
    with pytest.raises(ValueError):
        build_O_rho([1.0, 0.0], 1.0, 0.0)


@given(angles, zetas.filter(lambda z: abs(z) > 1e-3), st.floats(1e-3, 0.5))
def test_tilt_map_column_bound_and_identity_outside(th, zeta, rho):
    tm = TiltMap.disc([0.5, 0.5], [np.cos(th), np.sin(th)], zeta, rho, 0.1, 0.2)
    X = _box(rho, zeta)
    val, J = eval_tilt(tm, X)
    assert np.abs(J[:, :2, 2]).max() <= rho * abs(zeta) + 1e-12
    out = ~tm.in_support(X)
    assert np.array_equal(val[out], X[out])
    assert np.array_equal(J[out], np.broadcast_to(np.eye(3), J[out].shape))


def test_tilt_map_is_rigid_on_the_inner_disc():
    tm = TiltMap.disc([0.5, 0.5], [1.0, 0.0], 2.0, 0.1, 0.1, 0.2)
    X = np.array([[0.5, 0.5, 0.3], [0.55, 0.47, -0.2]])
    val, J = eval_tilt(tm, X)
    assert np.allclose(J, tm.O, atol=1e-15)
    assert np.allclose(val, tm.x0_3 + (X - tm.x0_3) @ tm.O.T, atol=1e-15)


def test_jacobian_matches_finite_differences():
    tm = TiltMap.disc([0.5, 0.5], [0.6, 0.8], -1.5, 0.2, 0.05, 0.2)
    x = np.array([[0.58, 0.44, 0.31]])
    _, J = eval_tilt(tm, x)
    h = 1e-6
    fd = np.stack([(eval_tilt(tm, x + h * e)[0] - eval_tilt(tm, x - h * e)[0])[0] / (2 * h)
                   for e in np.eye(3)], axis=1)
    assert np.abs(fd - J[0]).max() <= 1e-7


def test_inverse_round_trip():
    tm = TiltMap.disc([0.5, 0.5], [1.0, 0.0], 3.0, 0.05, 0.05, 0.25)
    X = _box(0.05, 3.0)
    val, _ = eval_tilt(tm, X)
    y, res = tilt_inverse(tm, val)
    assert np.abs(y - X).max() <= 1e-11
    assert res.max() <= 1e-12


@pytest.mark.parametrize("zeta", [1.0, 3.0])
def test_pushed_normal_tilt_is_of_order_rho_zeta(zeta):
    rho = 1e-2
    tm = TiltMap.disc([0.5, 0.5], [1.0, 0.0], zeta, rho, 0.1, 0.3)
    _, n, nn = jump_plane_normals(tm, [0.5, 0.5], [0.0, -1.0], np.linspace(-0.3, 0.3, 121),
                                  np.linspace(-0.5, 0.5, 11))
    assert np.abs(n[:, 2] / nn).max() / rho <= 2.0 * abs(zeta)


def test_box_cutoff_profile():
    c = BoxCutoff([0.5, 0.5], [1.0, 0.0], half_length=0.3, r_U=0.02, lateral_blend=0.05, tangential_blend=0.04)
    jet = c.jet(np.array([[0.5, 0.5], [0.51, 0.75], [0.58, 0.5], [0.5, 0.85]]))
    assert jet.v[:2].tolist() == [1.0, 1.0]
    assert jet.v[2] == 0.0 and jet.v[3] == 0.0
    assert c.in_inner(np.array([0.5, 0.79])) and not c.in_support(np.array([0.5, 0.85]))
    with pytest.raises(ValueError):
        DiscCutoff([0, 0], 0.2, 0.1)


def test_glued_maps_with_disjoint_supports():
    a = TiltMap.disc([0.25, 0.5], [1.0, 0.0], 1.0, 0.1, 0.05, 0.1)
    b = TiltMap.disc([0.75, 0.5], [0.0, 1.0], -2.0, 0.1, 0.05, 0.1)
    g = GluedTilt([a, b])
    X = np.array([[0.26, 0.52, 0.1], [0.74, 0.49, -0.3], [0.5, 0.5, 0.0]])
    val, J = g.evaluate(X)
    assert np.allclose(val[0], eval_tilt(a, X[:1])[0][0])
    assert np.allclose(val[1], eval_tilt(b, X[1:2])[0][0])
    assert np.array_equal(val[2], X[2])
    y, Jy, res = g.pullback(val)
    assert np.abs(y - X).max() <= 1e-11
    assert np.allclose(Jy, J, atol=1e-10)
    assert g.det_min(X) > 0.5
