"""Tilt diffeomorphisms ``f_rho``: isometric near a jump segment, identity away from it.

``O_rho`` rotates the in-plane normal ``(kappa, 0)`` to ``(kappa, rho zeta)/s``
with ``s = sqrt(1 + rho^2 zeta^2)``. The map

    f(x) = phi(x_a) (x0 + O (x - x0)) + (1 - phi(x_a)) x

blends that rotation into the identity through a cutoff ``phi``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from ..core import det3
from .cutoff import BoxCutoff, DiscCutoff

Cutoff = Union[DiscCutoff, BoxCutoff]


def build_O_rho(kappa, zeta: float, rho: float) -> np.ndarray:
    """Rotation taking ``(kappa, 0)`` to ``(kappa/s, rho zeta/s)``; rows as in the explicit construction."""
    k1, k2 = (float(v) for v in np.asarray(kappa, dtype=float).reshape(2))
    if abs(math.hypot(k1, k2) - 1.0) > 1e-12:
        raise ValueError("kappa must be a unit vector")
    if not rho > 0:
        raise ValueError("rho must be positive")
    s = math.sqrt(1.0 + (rho * zeta) ** 2)
    lam = 1.0 / s - 1.0
    rz = rho * zeta / s
    return np.array([
        [1.0 + k1 * k1 * lam, k1 * k2 * lam, -k1 * rz],
        [k1 * k2 * lam, 1.0 + k2 * k2 * lam, -k2 * rz],
        [k1 * rz, k2 * rz, 1.0 / s],
    ])


@dataclass(frozen=True)
class TiltMap:
    """One tilt map. ``cutoff`` fixes ``U`` (where ``phi = 1``) and ``V`` (support)."""

    x0: np.ndarray
    kappa: np.ndarray
    zeta: float
    rho: float
    cutoff: Cutoff
    incompressible: bool = False

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).reshape(2))
        object.__setattr__(self, "kappa", np.asarray(self.kappa, dtype=float).reshape(2))
        if not self.rho > 0:
            raise ValueError("rho must be positive")

    @classmethod
    def disc(cls, x0, kappa, zeta, rho, r_U, r_V, incompressible=False) -> "TiltMap":
        return cls(x0, kappa, zeta, rho, DiscCutoff(x0, r_U, r_V), incompressible)

    @property
    def s(self) -> float:
        return math.sqrt(1.0 + (self.rho * self.zeta) ** 2)

    @property
    def O(self) -> np.ndarray:
        return build_O_rho(self.kappa, self.zeta, self.rho)

    @property
    def x0_3(self) -> np.ndarray:
        return np.array([self.x0[0], self.x0[1], 0.0])

    def in_support(self, x) -> np.ndarray:
        return self.cutoff.in_support(np.asarray(x)[..., :2])


def eval_tilt(tmap: TiltMap, x) -> tuple[np.ndarray, np.ndarray]:
    """Value and Jacobian ``I + (O - I)(x - x0) (x) grad phi + phi (O - I)``.

    Points outside ``V`` take an exact identity path.
    """
    if tmap.incompressible:
        raise ValueError("use the corrected map's evaluator for incompressible tilt maps")
    x = np.asarray(x, dtype=float)
    flat = x.reshape(-1, 3)
    val = flat.copy()
    jac = np.broadcast_to(np.eye(3), (len(flat), 3, 3)).copy()
    sup = tmap.in_support(flat)
    if sup.any():
        xs = flat[sup]
        jet = tmap.cutoff.jet(xs[:, :2])
        C = tmap.O - np.eye(3)
        a = xs - tmap.x0_3
        Ca = a @ C.T
        phi = jet.v
        val[sup] = xs + phi[:, None] * Ca
        gphi = np.zeros((len(xs), 3))
        gphi[:, :2] = jet.g
        jac[sup] = np.eye(3) + Ca[:, :, None] * gphi[:, None, :] + phi[:, None, None] * C
    return val.reshape(x.shape), jac.reshape(x.shape[:-1] + (3, 3))


def _newton_inverse(forward, x, y0=None, tol=1e-13, max_iter=60):
    """Damped Newton for ``forward(y) = x``; ``forward`` returns (value, jacobian)."""
    x = np.asarray(x, dtype=float)
    y = x.copy() if y0 is None else np.array(y0, dtype=float)
    active = np.ones(len(x), dtype=bool)
    res_norm = np.full(len(x), np.inf)
    for _ in range(max_iter):
        if not active.any():
            break
        ya = y[active]
        v, J = forward(ya)
        r = v - x[active]
        nr = np.linalg.norm(r, axis=1)
        step = np.linalg.solve(J, r[:, :, None])[:, :, 0]
        # backtracking on the residual norm
        t = np.ones(len(ya))
        cand = ya - step
        vc, _ = forward(cand)
        nc = np.linalg.norm(vc - x[active], axis=1)
        for _ in range(30):
            bad = nc > nr * (1 - 1e-4 * t) + 1e-300
            bad &= nr > tol
            if not bad.any():
                break
            t[bad] *= 0.5
            cand[bad] = ya[bad] - t[bad, None] * step[bad]
            vb, _ = forward(cand[bad])
            nc[bad] = np.linalg.norm(vb - x[active][bad], axis=1)
        idx = np.flatnonzero(active)
        y[idx] = np.where((nr > tol)[:, None], cand, ya)
        res_norm[idx] = np.minimum(nc, nr)
        done = (nr <= tol) | (nc <= tol)
        active[idx[done]] = False
    return y, res_norm


@dataclass
class GluedTilt:
    """Several tilt maps with pairwise disjoint supports glued into one map.

    ``maps`` may hold plain :class:`TiltMap` objects or corrected maps (any
    object with ``evaluate`` and ``inverse``).
    """

    maps: Sequence = field(default_factory=list)

    def _owner(self, x) -> np.ndarray:
        own = np.full(len(x), -1, dtype=int)
        for i, m in enumerate(self.maps):
            inside = m.in_support(x) if hasattr(m, "in_support") else m.tilt.in_support(x)
            own[inside & (own == -1)] = i
        return own

    def evaluate(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, 3)
        val = flat.copy()
        jac = np.broadcast_to(np.eye(3), (len(flat), 3, 3)).copy()
        own = self._owner(flat)
        for i, m in enumerate(self.maps):
            sel = own == i
            if sel.any():
                v, J = _evaluate_one(m, flat[sel])
                val[sel] = v
                jac[sel] = J
        return val.reshape(x.shape), jac.reshape(x.shape[:-1] + (3, 3))

    def inverse(self, x, tol: float = 1e-13) -> tuple[np.ndarray, np.ndarray]:
        """Preimage of ``x`` and the residual ``|f(g(x)) - x|``.

        Each map sends its support cylinder onto itself, so the owner of ``x``
        is also the owner of the preimage.
        """
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, 3)
        y = flat.copy()
        res = np.zeros(len(flat))
        own = self._owner(flat)
        for i, m in enumerate(self.maps):
            sel = own == i
            if sel.any():
                if hasattr(m, "inverse"):
                    yi, ri = m.inverse(flat[sel], tol=tol)
                else:
                    yi, ri = _newton_inverse(lambda z, m=m: eval_tilt(m, z), flat[sel], tol=tol)
                y[sel] = yi
                res[sel] = ri
        return y.reshape(x.shape), res.reshape(x.shape[:-1])

    def pullback(self, x, tol: float = 1e-13) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Preimage ``y`` of each point, the Jacobian of the glued map at ``y``, and residuals."""
        flat = np.asarray(x, dtype=float).reshape(-1, 3)
        y = flat.copy()
        jac = np.broadcast_to(np.eye(3), (len(flat), 3, 3)).copy()
        res = np.zeros(len(flat))
        own = self._owner(flat)
        for i, m in enumerate(self.maps):
            sel = own == i
            if not sel.any():
                continue
            if isinstance(m, TiltMap):
                yi, ri = _newton_inverse(lambda z, m=m: eval_tilt(m, z), flat[sel], tol=tol)
                _, Ji = eval_tilt(m, yi)
            else:
                yi, Ji, ri = m.pullback(flat[sel], tol=tol)
            y[sel], jac[sel], res[sel] = yi, Ji, ri
        return y, jac, res

    def det_min(self, x) -> float:
        _, J = self.evaluate(x)
        return float(det3(J).min())


def _evaluate_one(m, x):
    if isinstance(m, TiltMap):
        return eval_tilt(m, x)
    return m.evaluate(x)


def tilt_inverse(tmap: TiltMap, x, tol: float = 1e-13):
    """Newton inverse of a single uncorrected tilt map."""
    x = np.asarray(x, dtype=float)
    flat = x.reshape(-1, 3)
    y = flat.copy()
    res = np.zeros(len(flat))
    sup = tmap.in_support(flat)
    if sup.any():
        y[sup], res[sup] = _newton_inverse(lambda z: eval_tilt(tmap, z), flat[sup], tol=tol)
    return y.reshape(x.shape), res.reshape(x.shape[:-1])


def jump_plane_normals(fmap, p, direction, s, t):
    """Pushed normals ``r_s ^ r_t`` of the plane ``r(s, t) = p + s tau + t e3``.

    ``fmap`` is a tilt map or any object with ``evaluate``. Returns the image
    points, the unnormalized normals and their norms.
    """
    p = np.asarray(p, dtype=float).reshape(2)
    tau = np.asarray(direction, dtype=float).reshape(2)
    S, T = np.meshgrid(np.asarray(s, dtype=float), np.asarray(t, dtype=float), indexing="ij")
    pts = np.stack([p[0] + S * tau[0], p[1] + S * tau[1], T], axis=-1).reshape(-1, 3)
    val, J = eval_tilt(fmap, pts) if isinstance(fmap, TiltMap) else fmap.evaluate(pts)
    rs = J @ np.array([tau[0], tau[1], 0.0])
    rt = J[:, :, 2]
    n = np.cross(rs, rt)
    return val, n, np.linalg.norm(n, axis=1)
