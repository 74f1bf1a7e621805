"""Volume-preserving corrections along normal fibers.

Given a midplane map ``u`` and a transversal field ``b`` with
``det(grad u | b) = 1``, the extension ``v = u + Gamma b`` has unit Jacobian
determinant when ``Gamma`` solves

    d Gamma / d x3 = 1 / D(Gamma),   Gamma(x_a, 0) = 0,

with ``D(t) = det(grad u + t grad b | b) = D0 + t P + t^2 Q``. Integrating
gives ``D0 Gamma + P Gamma^2/2 + Q Gamma^3/3 = x3``, which is also used to
differentiate ``Gamma`` in ``x_a`` and to invert the map without an ODE solve.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..core import BoundaryHit, CrackedMembrane, cross_columns, det3, det_columns as dc
from .ode import dopri45
from .tilt import TiltMap, _newton_inverse, eval_tilt


class PreconditionError(ValueError):
    """Raised when a map violates the determinant precondition at a point."""

    def __init__(self, message, point=None):
        self.point = None if point is None else np.asarray(point, dtype=float)
        super().__init__(message if point is None else f"{message} at {self.point.tolist()}")


def solve_gamma(x3, D0, P, Q, atol: float = 1e-10):
    """Integrate ``Gamma' = 1/D(Gamma)`` up to each ``x3`` with one shared step sequence.

    Substituting ``x3 -> s x3`` with ``s`` in ``[0, 1]`` lets all points share
    the same time interval.
    """
    x3 = np.asarray(x3, dtype=float)
    if x3.size == 0:
        return x3.copy()

    def rhs(_, g):
        return x3 / (D0 + g * (P + g * Q))

    res = dopri45(rhs, 0.0, 1.0, np.zeros_like(x3), atol=atol)
    return res.y[-1]


def gamma_cubic(x3, D0, P, Q, iters: int = 60):
    """Root of ``D0 G + P G^2/2 + Q G^3/3 = x3`` near ``G = x3 / D0`` (reference solver)."""
    x3 = np.asarray(x3, dtype=float)
    g = x3 / D0
    for _ in range(iters):
        F = D0 * g + P * g * g / 2 + Q * g**3 / 3 - x3
        g = g - F / (D0 + P * g + Q * g * g)
    return g


def _gamma_partials(gamma, D, dD0, dP, dQ):
    """``(d_1 Gamma, d_2 Gamma)`` from differentiating the integral identity."""
    g = gamma[..., None]
    return -(dD0 * g + dP * g * g / 2 + dQ * g**3 / 3) / D[..., None]


# --------------------------------------------------------------------------- #
# corrected tilt maps
# --------------------------------------------------------------------------- #

@dataclass
class _FiberFields:
    u: np.ndarray  # (N, 3)
    U: np.ndarray  # (N, 3, 2)
    b: np.ndarray  # (N, 3)
    B: np.ndarray  # (N, 3, 2)
    D0: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    dD0: np.ndarray  # (N, 2)
    dP: np.ndarray
    dQ: np.ndarray
    J: np.ndarray  # det grad g at x3 = 0


def _fiber_fields(tmap: TiltMap, xa: np.ndarray) -> _FiberFields:
    jet = tmap.cutoff.jet(xa)
    phi, g1, H, T = jet.v, jet.g, jet.H, jet.T
    n = len(xa)
    C = tmap.O - np.eye(3)
    c = C[:, 2]
    a = np.zeros((n, 3))
    a[:, :2] = xa - tmap.x0
    Ca = a @ C.T
    E = np.eye(3)

    U = np.empty((n, 3, 2))
    dU = np.empty((n, 3, 2, 2))  # [.., comp, i, j] = d_j U_i
    ddU = np.empty((n, 3, 2, 2, 2))  # [.., comp, i, j, k] = d_k d_j U_i
    for i in range(2):
        U[:, :, i] = E[:, i] + g1[:, i, None] * Ca + phi[:, None] * C[:, i]
        for j in range(2):
            dU[:, :, i, j] = H[:, i, j, None] * Ca + g1[:, i, None] * C[:, j] + g1[:, j, None] * C[:, i]
            for k in range(2):
                ddU[:, :, i, j, k] = (T[:, i, j, k, None] * Ca + H[:, i, j, None] * C[:, k]
                                      + H[:, i, k, None] * C[:, j] + H[:, j, k, None] * C[:, i])
    m = E[:, 2] + phi[:, None] * c
    dm = g1[:, None, :] * c[None, :, None]  # (n, 3, 2)
    ddm = H[:, None, :, :] * c[None, :, None, None]  # (n, 3, 2, 2)

    X, Y = U[:, :, 0], U[:, :, 1]
    J = dc(X, Y, m)
    dJ = np.empty((n, 2))
    for j in range(2):
        dJ[:, j] = dc(dU[:, :, 0, j], Y, m) + dc(X, dU[:, :, 1, j], m) + dc(X, Y, dm[:, :, j])
    ddJ = np.empty((n, 2, 2))
    for j in range(2):
        Xj, Yj, Zj = dU[:, :, 0, j], dU[:, :, 1, j], dm[:, :, j]
        for k in range(2):
            Xk, Yk, Zk = dU[:, :, 0, k], dU[:, :, 1, k], dm[:, :, k]
            Xjk, Yjk, Zjk = ddU[:, :, 0, j, k], ddU[:, :, 1, j, k], ddm[:, :, j, k]
            ddJ[:, j, k] = (dc(Xjk, Y, m) + dc(Xj, Yk, m) + dc(Xj, Y, Zk)
                            + dc(Xk, Yj, m) + dc(X, Yjk, m) + dc(X, Yj, Zk)
                            + dc(Xk, Y, Zj) + dc(X, Yk, Zj) + dc(X, Y, Zjk))
    Jc = J[:, None]
    b = m / Jc
    B = np.empty((n, 3, 2))
    dB = np.empty((n, 3, 2, 2))  # [.., comp, j, k] = d_k B_j
    for j in range(2):
        B[:, :, j] = dm[:, :, j] / Jc - m * dJ[:, j, None] / Jc**2
        for k in range(2):
            dB[:, :, j, k] = (ddm[:, :, j, k] / Jc
                              - dm[:, :, j] * dJ[:, k, None] / Jc**2
                              - dm[:, :, k] * dJ[:, j, None] / Jc**2
                              - m * ddJ[:, j, k, None] / Jc**2
                              + 2.0 * m * dJ[:, j, None] * dJ[:, k, None] / Jc**3)
    B1, B2 = B[:, :, 0], B[:, :, 1]
    D0 = dc(X, Y, b)
    P = dc(B1, Y, b) + dc(X, B2, b)
    Q = dc(B1, B2, b)
    dD0 = np.empty((n, 2))
    dP = np.empty((n, 2))
    dQ = np.empty((n, 2))
    for k in range(2):
        Xk, Yk, Bk = dU[:, :, 0, k], dU[:, :, 1, k], B[:, :, k]
        B1k, B2k = dB[:, :, 0, k], dB[:, :, 1, k]
        dD0[:, k] = dc(Xk, Y, b) + dc(X, Yk, b) + dc(X, Y, Bk)
        dP[:, k] = (dc(B1k, Y, b) + dc(B1, Yk, b) + dc(B1, Y, Bk)
                    + dc(Xk, B2, b) + dc(X, B2k, b) + dc(X, B2, Bk))
        dQ[:, k] = dc(B1k, B2, b) + dc(B1, B2k, b) + dc(B1, B2, Bk)
    u = np.zeros((n, 3))
    u[:, :2] = xa
    u = u + phi[:, None] * Ca
    return _FiberFields(u, U, b, B, D0, P, Q, dD0, dP, dQ, J)


@dataclass
class CorrectedTilt:
    """Tilt map corrected to unit Jacobian determinant.

    ``evaluate`` integrates the fiber ODE for ``Gamma``; ``evaluate_on_fiber``
    and ``inverse`` use the integral identity instead.
    """

    tilt: TiltMap
    atol: float = 1e-10

    def in_support(self, x) -> np.ndarray:
        return self.tilt.in_support(x)

    def fields(self, xa) -> _FiberFields:
        return _fiber_fields(self.tilt, np.asarray(xa, dtype=float).reshape(-1, 2))

    def gamma(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, 3)
        F = self.fields(x[:, :2])
        return solve_gamma(x[:, 2], F.D0, F.P, F.Q, self.atol)

    def _assemble(self, F: _FiberFields, gamma):
        D = F.D0 + gamma * (F.P + gamma * F.Q)
        dG = _gamma_partials(gamma, D, F.dD0, F.dP, F.dQ)
        val = F.u + gamma[:, None] * F.b
        jac = np.empty((len(gamma), 3, 3))
        for i in range(2):
            jac[:, :, i] = F.U[:, :, i] + dG[:, i, None] * F.b + gamma[:, None] * F.B[:, :, i]
        jac[:, :, 2] = F.b / D[:, None]
        return val, jac

    def evaluate(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, 3)
        val = flat.copy()
        jac = np.broadcast_to(np.eye(3), (len(flat), 3, 3)).copy()
        sup = self.in_support(flat)
        if sup.any():
            xs = flat[sup]
            F = self.fields(xs[:, :2])
            gamma = solve_gamma(xs[:, 2], F.D0, F.P, F.Q, self.atol)
            val[sup], jac[sup] = self._assemble(F, gamma)
        return val.reshape(x.shape), jac.reshape(x.shape[:-1] + (3, 3))

    def evaluate_on_fiber(self, xa, gamma) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Value, Jacobian and height ``x3`` of the point with fiber parameter ``gamma``."""
        xa = np.asarray(xa, dtype=float).reshape(-1, 2)
        gamma = np.asarray(gamma, dtype=float).reshape(-1)
        F = self.fields(xa)
        val, jac = self._assemble(F, gamma)
        x3 = F.D0 * gamma + F.P * gamma**2 / 2 + F.Q * gamma**3 / 3
        return val, jac, x3

    def _invert(self, X, tol, max_iter):
        def forward(zz):
            F = self.fields(zz[:, :2])
            v = F.u + zz[:, 2, None] * F.b
            Jm = np.empty((len(zz), 3, 3))
            Jm[:, :, 0] = F.U[:, :, 0] + zz[:, 2, None] * F.B[:, :, 0]
            Jm[:, :, 1] = F.U[:, :, 1] + zz[:, 2, None] * F.B[:, :, 1]
            Jm[:, :, 2] = F.b
            return v, Jm

        return _newton_inverse(forward, X, X.copy(), tol=tol, max_iter=max_iter)

    def inverse(self, x, tol: float = 1e-13, max_iter: int = 60) -> tuple[np.ndarray, np.ndarray]:
        """Solve ``u(y_a) + gamma b(y_a) = x`` by damped Newton, then recover ``y3``."""
        y, _, res = self.pullback(x, tol, max_iter)
        return y, res

    def pullback(self, x, tol: float = 1e-13, max_iter: int = 60):
        """Preimage ``y``, the Jacobian at ``y`` and the inversion residual."""
        x = np.asarray(x, dtype=float).reshape(-1, 3)
        y = x.copy()
        jac = np.broadcast_to(np.eye(3), (len(x), 3, 3)).copy()
        res = np.zeros(len(x))
        sup = self.in_support(x)
        if sup.any():
            z, r = self._invert(x[sup], tol, max_iter)
            _, J, y3 = self.evaluate_on_fiber(z[:, :2], z[:, 2])
            y[sup, :2] = z[:, :2]
            y[sup, 2] = y3
            jac[sup] = J
            res[sup] = r
        return y, jac, res


def incompressible_correct(tmap: TiltMap, ode_tol: float = 1e-10, check_points=None,
                           det_floor: float = 0.5) -> CorrectedTilt:
    """Return the unit-determinant correction of ``tmap``.

    The uncorrected Jacobian determinant must stay above ``det_floor`` on
    ``check_points`` (default: a grid over the support box times ``|x3| <= 1/2``).
    """
    if check_points is None:
        x0, x1, y0, y1 = tmap.cutoff.bounds()
        xs = np.linspace(x0, x1, 41)
        ys = np.linspace(y0, y1, 41)
        zs = np.linspace(-0.5, 0.5, 9)
        G = np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1).reshape(-1, 3)
        check_points = G
    pts = np.asarray(check_points, dtype=float).reshape(-1, 3)
    plain = TiltMap(tmap.x0, tmap.kappa, tmap.zeta, tmap.rho, tmap.cutoff, False)
    _, J = eval_tilt(plain, pts)
    d = det3(J)
    k = int(np.argmin(d))
    if d[k] < det_floor:
        raise PreconditionError(f"det of the tilt map is {d[k]:.4g} < {det_floor}", pts[k])
    return CorrectedTilt(plain, atol=ode_tol)


# --------------------------------------------------------------------------- #
# extension of a piecewise-affine membrane
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class CellField:
    """Affine transversal field ``b(x) = b0 + B x_a`` on one cell."""

    b0: np.ndarray
    B: np.ndarray = field(default_factory=lambda: np.zeros((3, 2)))

    def __post_init__(self):
        object.__setattr__(self, "b0", np.asarray(self.b0, dtype=float).reshape(3))
        object.__setattr__(self, "B", np.asarray(self.B, dtype=float).reshape(3, 2))

    def at(self, xa):
        return self.b0 + np.asarray(xa, dtype=float) @ self.B.T


@dataclass
class ThickExtension:
    """``v(x_a, x3) = u(x_a) + Gamma(x_a, x3) b(x_a)`` for a piecewise-affine ``u``."""

    membrane: CrackedMembrane
    fields: tuple[CellField, ...]
    rho: float
    atol: float = 1e-10

    def _cell_data(self, xa, idx=None):
        if idx is None:
            idx = self.membrane.locate(xa)
        if np.any(idx < 0):
            k = int(np.flatnonzero(idx < 0)[0])
            raise BoundaryHit(xa[k])
        A = np.stack([c.A for c in self.membrane.cells])[idx]
        B = np.stack([f.B for f in self.fields])[idx]
        b = np.stack([f.b0 for f in self.fields])[idx] + np.einsum("nij,nj->ni", B, xa)
        A1, A2, B1, B2 = A[:, :, 0], A[:, :, 1], B[:, :, 0], B[:, :, 1]
        D0 = dc(A1, A2, b)
        P = dc(B1, A2, b) + dc(A1, B2, b)
        Q = dc(B1, B2, b)
        dD0 = np.stack([dc(A1, A2, B[:, :, k]) for k in range(2)], axis=1)
        dP = np.stack([dc(B1, A2, B[:, :, k]) + dc(A1, B2, B[:, :, k]) for k in range(2)], axis=1)
        dQ = np.stack([dc(B1, B2, B[:, :, k]) for k in range(2)], axis=1)
        return idx, A, B, b, D0, P, Q, dD0, dP, dQ

    def evaluate(self, x, gamma: Optional[np.ndarray] = None, idx=None) -> tuple[np.ndarray, np.ndarray]:
        """Value and gradient at points ``x = (x_a, x3)`` with ``|x3| <= rho/2``."""
        x = np.asarray(x, dtype=float).reshape(-1, 3)
        xa = x[:, :2]
        idx, A, B, b, D0, P, Q, dD0, dP, dQ = self._cell_data(xa, idx)
        if gamma is None:
            gamma = solve_gamma(x[:, 2], D0, P, Q, self.atol)
        D = D0 + gamma * (P + gamma * Q)
        dG = _gamma_partials(gamma, D, dD0, dP, dQ)
        u = self.membrane.value(xa, idx)
        val = u + gamma[:, None] * b
        jac = np.empty((len(x), 3, 3))
        for i in range(2):
            jac[:, :, i] = A[:, :, i] + dG[:, i, None] * b + gamma[:, None] * B[:, :, i]
        jac[:, :, 2] = b / D[:, None]
        return val, jac

    def base_frame(self, x) -> np.ndarray:
        """``(grad u | b)`` at the planar position of ``x``."""
        x = np.asarray(x, dtype=float).reshape(-1, 3)
        idx, A, B, b, *_ = self._cell_data(x[:, :2])
        out = np.empty((len(x), 3, 3))
        out[:, :, :2] = A
        out[:, :, 2] = b
        return out


def incompressible_extend(membrane: CrackedMembrane, fields, rho: float, atol: float = 1e-10,
                          tol: float = 1e-10) -> ThickExtension:
    """Build ``v = u + Gamma b``; requires ``det(A | b(x)) = 1`` on every cell."""
    fields = tuple(f if isinstance(f, CellField) else CellField(f) for f in fields)
    if len(fields) != len(membrane.cells):
        raise ValueError("one transversal field per cell is required")
    if not rho > 0:
        raise ValueError("rho must be positive")
    for k, (cell, f) in enumerate(zip(membrane.cells, fields)):
        n = cross_columns(cell.A)
        # det(A | b0 + B x) = n . b0 + (n . B) x must be identically 1
        if abs(float(n @ f.b0) - 1.0) > tol or np.max(np.abs(n @ f.B)) > tol:
            raise PreconditionError(f"det(grad u | b) != 1 on cell {k}")
    return ThickExtension(membrane, fields, rho, atol)
