"""Reduced membrane densities: minimize over the third column or the out-of-plane normal slot.

``reduce_bulk`` and ``reduce_surface`` are generic numerical minimizers. The
``*_closed_form`` helpers give exact values for the catalog families; they are
used as fast batch evaluators elsewhere and as oracles in the tests.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import optimize

from .core import ExtReal, INF, RANK_TOL, append_column, cross_columns, frob
from .densities import (
    INCOMPRESSIBLE,
    ORIENTATION,
    BulkDensity,
    SurfaceDensity,
)


@dataclass(frozen=True)
class BulkOptions:
    grid: int = 33
    starts: int = 4
    xatol: float = 1e-11
    fatol: float = 1e-15
    maxiter: int = 20_000


@dataclass(frozen=True)
class SurfaceOptions:
    grid: int = 1025
    xatol: float = 1e-10


@dataclass
class ReducedBulkResult:
    value: ExtReal
    xi: Optional[np.ndarray]
    iterations: int
    residual: float
    converged: bool = True


@dataclass
class ReducedSurfaceResult:
    value: float
    zeta: float
    bracket: tuple[float, float]


# --------------------------------------------------------------------------- #
# bulk
# --------------------------------------------------------------------------- #

def _unconstrained_density(W: BulkDensity) -> BulkDensity:
    # the incompressible evaluator is only ever fed points of the constraint set
    return W.with_det_tol(1e-9) if W.mode == INCOMPRESSIBLE and W.family else W


def _param_to_xi(E, n, params, mode):
    m2 = float(n @ n)
    params = np.atleast_2d(params)
    lam, Lam = params[:, 0], params[:, 1]
    if mode == INCOMPRESSIBLE:
        t = np.ones_like(lam)
    else:
        t = np.exp(params[:, 2])
    return lam[:, None] * E[:, 0] + Lam[:, None] * E[:, 1] + (t / m2)[:, None] * n


def reduce_bulk(W: BulkDensity, E, opts: BulkOptions = BulkOptions()) -> ReducedBulkResult:
    """Minimize ``W(E | xi)`` over the third column ``xi``.

    Constrained modes parameterize ``xi = lam E^1 + Lam E^2 + t n/|n|^2`` with
    ``n = E^1 ^ E^2``: ``t = 1`` for incompressibility, ``t = exp(s) > 0`` for
    orientation preservation. A coarse grid over a box derived from the
    coercivity bound seeds a Nelder-Mead descent from the best grid points.
    """
    E = np.asarray(E, dtype=float).reshape(3, 2)
    n = cross_columns(E)
    m = float(np.linalg.norm(n))
    mode = W.mode
    if m < RANK_TOL and mode in (INCOMPRESSIBLE, ORIENTATION):
        return ReducedBulkResult(INF, None, 0, 0.0)
    Wn = _unconstrained_density(W)

    if mode not in (INCOMPRESSIBLE, ORIENTATION):
        return _reduce_free(Wn, E, opts)

    def objective(params):
        xi = _param_to_xi(E, n, params, mode)
        vals, fin = Wn.evaluate(append_column(E, xi))
        return vals, fin

    # upper value at the scaled normal and a radius for the minimizer
    v0, f0 = objective(np.zeros((1, 3)))
    if not f0[0]:
        raise ValueError("density infinite at the scaled normal; cannot bracket the minimum")
    U = float(v0[0])
    R_xi = _coercive_radius(W, U)
    smin = float(np.linalg.svd(E, compute_uv=False)[-1])
    R_tan = R_xi / max(smin, 1e-12)
    axis = np.linspace(-R_tan, R_tan, opts.grid)
    if mode == INCOMPRESSIBLE:
        L1, L2 = np.meshgrid(axis, axis, indexing="ij")
        grid = np.stack([L1.ravel(), L2.ravel(), np.zeros(L1.size)], axis=1)
    else:
        t_hi = max(R_xi * m, 1e-6)
        s_axis = np.linspace(math.log(t_hi) - 12.0, math.log(t_hi), opts.grid)
        L1, L2, S = np.meshgrid(axis, axis, s_axis, indexing="ij")
        grid = np.stack([L1.ravel(), L2.ravel(), S.ravel()], axis=1)
    grid = np.vstack([np.zeros((1, 3)), grid])
    vals, fin = objective(grid)
    order = np.flatnonzero(fin)[np.argsort(vals[fin], kind="stable")]
    dim = 2 if mode == INCOMPRESSIBLE else 3

    def scalar(x):
        full = np.zeros(3)
        full[:dim] = x
        v, f = objective(full[None])
        # descent is confined to finite points by the parameterization
        return float(v[0]) if f[0] else 1e300

    best = None
    iters = 0
    for k in order[: opts.starts]:
        res = optimize.minimize(
            scalar, grid[k, :dim], method="Nelder-Mead",
            options=dict(xatol=opts.xatol, fatol=opts.fatol, maxiter=opts.maxiter, maxfev=opts.maxiter),
        )
        iters += int(res.nit)
        if best is None or res.fun < best.fun:
            best = res
    xbest = np.zeros(3)
    xbest[:dim] = best.x
    xi = _param_to_xi(E, n, xbest[None], mode)[0]
    residual = _fd_gradient_norm(scalar, best.x)
    return ReducedBulkResult(ExtReal(float(best.fun)), xi, iters, residual, bool(best.success))


def _reduce_free(W, E, opts):
    def scalar(xi):
        v, f = W.evaluate(append_column(E, xi)[None])
        return float(v[0]) if f[0] else 1e300

    v0 = scalar(np.zeros(3))
    R = _coercive_radius(W, v0) if v0 < 1e300 else 10.0
    axis = np.linspace(-R, R, opts.grid)
    G = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    vals, fin = W.evaluate(append_column(E, G))
    order = np.flatnonzero(fin)[np.argsort(vals[fin], kind="stable")]
    if len(order) == 0:
        return ReducedBulkResult(INF, None, 0, 0.0, False)
    best = None
    iters = 0
    for k in order[: opts.starts]:
        res = optimize.minimize(scalar, G[k], method="Nelder-Mead",
                                options=dict(xatol=opts.xatol, fatol=opts.fatol, maxiter=opts.maxiter))
        iters += int(res.nit)
        if best is None or res.fun < best.fun:
            best = res
    return ReducedBulkResult(ExtReal(float(best.fun)), best.x, iters,
                             _fd_gradient_norm(scalar, best.x), bool(best.success))


def _coercive_radius(W: BulkDensity, U: float) -> float:
    """Radius bounding ``|xi|`` for any ``xi`` with ``W(E|xi) <= U``."""
    p = W.p
    if W.mode == INCOMPRESSIBLE and W.c is not None:
        return (W.c * (U + W.c)) ** (1.0 / p)
    if W.C1 is not None:
        return ((U + 1.0 / W.C1) / W.C1) ** (1.0 / p)
    return 10.0


def _fd_gradient_norm(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return float(np.linalg.norm(g))


def reduced_bulk_closed_form(W: BulkDensity, E) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact ``W_0`` and minimizer for the catalog families, batched.

    Returns ``(values, finite, xi)``. For ``INCOMP_POWER`` the minimizer is
    ``n/|n|^2``; for ``ORIENT_POWER`` it is ``t n/|n|^2`` with ``t`` the root of
    a monotone scalar equation (closed form at ``p = 2``).
    """
    E = np.asarray(E, dtype=float)
    n = cross_columns(E)
    m = np.linalg.norm(n, axis=-1)
    fin = m >= RANK_TOL
    ms = np.where(fin, m, 1.0)
    a = np.einsum("...ij,...ij->...", E, E)
    p = W.p
    if W.family == "INCOMP_POWER":
        vals = (a + 1.0 / ms**2) ** (p / 2.0)
        xi = n / (ms**2)[..., None]
    elif W.family == "ORIENT_POWER":
        if p == 2.0:
            t = np.cbrt(ms**2 / 2.0)
        else:
            t = _orient_root(a, ms, p)
        vals = (a + (t / ms) ** 2) ** (p / 2.0) + 1.0 / t
        xi = (t / ms**2)[..., None] * n
    else:
        raise ValueError(f"no closed form for density {W.name!r}")
    vals = np.where(fin, vals, 0.0)
    xi = np.where(fin[..., None], xi, 0.0)
    return vals, fin, xi


def _orient_root(a, m, p, iters=200):
    # d/dt [(a + t^2/m^2)^{p/2} + 1/t] is increasing in t; bisect in log t
    lo = np.full(np.shape(a), -40.0)
    hi = np.full(np.shape(a), 40.0)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        t = np.exp(mid)
        d = p * (a + (t / m) ** 2) ** (p / 2.0 - 1.0) * t / m**2 - 1.0 / t**2
        pos = d > 0
        hi = np.where(pos, mid, hi)
        lo = np.where(pos, lo, mid)
    return np.exp(0.5 * (lo + hi))


@dataclass
class BoundReport:
    value: ExtReal
    lower: float
    upper: float
    holds: bool
    note: str = ""


def check_reduced_bounds(W: BulkDensity, E, W0: Optional[ExtReal] = None) -> BoundReport:
    """Two-sided bound ``c^{-1}(|E|^p + |n|^{-p}) - c <= W_0(E) <= c(|E|^p + |n|^{-p}) + c``."""
    if W.mode != INCOMPRESSIBLE:
        raise ValueError("the reduced two-sided bound concerns incompressible densities")
    E = np.asarray(E, dtype=float).reshape(3, 2)
    n = cross_columns(E)
    m = float(np.linalg.norm(n))
    if m < RANK_TOL:
        return BoundReport(INF, math.nan, math.nan, True, "infinite, bound vacuous")
    if W0 is None:
        W0 = reduce_bulk(W, E).value
    c = W.c
    p = W.p
    base = float(frob(E)) ** p + m ** (-p)
    lo = base / c - c
    hi = c * base + c
    val = float(W0.value)
    holds = W0.finite and lo - 1e-9 * abs(lo) <= val <= hi + 1e-9 * abs(hi)
    return BoundReport(W0, lo, hi, bool(holds))


# --------------------------------------------------------------------------- #
# surface
# --------------------------------------------------------------------------- #

def zeta_bracket(psi: SurfaceDensity) -> float:
    """Half-width of an interval containing every minimizing ``zeta``.

    ``psi(z, nu_a, zeta) >= C3 phi sqrt(1 + zeta^2)`` while the value at
    ``zeta = 0`` is at most ``C4 phi``.
    """
    r = psi.C4 / psi.C3
    return math.sqrt(max(r * r - 1.0, 0.0))


def reduce_surface(psi: SurfaceDensity, z, nu_alpha, opts: SurfaceOptions = SurfaceOptions()) -> ReducedSurfaceResult:
    """Minimize ``psi(z, nu_1, nu_2, zeta)`` over ``zeta``: dense grid, then bounded Brent."""
    z = np.asarray(z, dtype=float).reshape(3)
    if not np.linalg.norm(z) > 0:
        raise ValueError("reduced surface density is undefined at z = 0")
    nu_alpha = np.asarray(nu_alpha, dtype=float).reshape(2)
    Z = zeta_bracket(psi)
    Z = Z * (1.0 + 1e-9) + 1e-12
    grid = np.linspace(-Z, Z, opts.grid)
    nus = np.column_stack([np.broadcast_to(nu_alpha, (len(grid), 2)), grid])
    vals = psi(np.broadcast_to(z, (len(grid), 3)), nus)
    k = int(np.argmin(vals))

    def f(zeta):
        return float(psi(z, np.array([nu_alpha[0], nu_alpha[1], zeta])))

    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(f, bounds=(lo, hi), method="bounded",
                                   options=dict(xatol=opts.xatol * 1e-2))
    zeta, val = (float(res.x), float(res.fun)) if res.fun <= vals[k] else (float(grid[k]), float(vals[k]))
    return ReducedSurfaceResult(val, zeta, (-Z, Z))


def reduced_surface_closed_form(psi: SurfaceDensity, z, nu_alpha) -> tuple[np.ndarray, np.ndarray]:
    """Exact ``(psi_0, zeta*)`` for ``SURF_QUAD`` via the Schur complement of ``Q``."""
    if psi.Q is None:
        raise ValueError(f"no closed form for density {psi.name!r}")
    Q = psi.Q
    z = np.asarray(z, dtype=float)
    na = np.asarray(nu_alpha, dtype=float)
    zeta = -(na @ Q[:2, 2]) / Q[2, 2]
    S = Q[:2, :2] - np.outer(Q[:2, 2], Q[2, :2]) / Q[2, 2]
    amp = np.sqrt(np.maximum(np.einsum("...i,ij,...j->...", na, S, na), 0.0))
    nz = np.linalg.norm(z, axis=-1)
    return (1.0 + np.minimum(nz, psi.cap)) * amp, zeta


def reduced_surface_density(psi: SurfaceDensity) -> SurfaceDensity:
    """``psi_0`` wrapped as a surface density on planar normals.

    Constants carry over: ``psi_0 <= psi(., ., 0) <= C4 phi`` and
    ``psi_0 >= C3 phi`` since ``|(nu_a, zeta)| >= 1``.
    """
    if psi.Q is not None:
        def unit_eval(z, nu):
            return reduced_surface_closed_form(psi, z, nu[..., :2])[0]
    else:
        def unit_eval(z, nu):
            z2 = np.reshape(z, (-1, 3))
            n2 = np.reshape(nu, (-1, 3))
            out = np.array([reduce_surface(psi, zz, nn[:2] / np.linalg.norm(nn[:2])).value
                            * np.linalg.norm(nn[:2]) for zz, nn in zip(z2, n2)])
            return out.reshape(np.shape(z)[:-1])

    return SurfaceDensity(
        name=f"{psi.name}_0",
        unit_evaluator=unit_eval,
        phi=psi.phi,
        C2=psi.C2,
        C3=psi.C3,
        C4=psi.C4,
        sigma=psi.sigma,
        cap=psi.cap,
    )
