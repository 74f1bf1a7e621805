"""Quadrature of the rescaled three-dimensional energy and of its membrane limit.

The rescaled energy of a deformation ``u`` on ``Sigma x (-1/2, 1/2)`` is

    int W(grad_a u | rho^{-1} d3 u) dx + int_{J_u} psi(z, nu_a, nu_3 / rho) dH^2,

and the membrane limit is ``int W_0(grad u) + int_{J_u} psi_0([u], nu)``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import CrackedMembrane, PrismGrid
from .densities import INCOMPRESSIBLE, BulkDensity, SurfaceDensity
from .envelopes import quasiconvex_upper_estimate, reduced_density
from .recovery import (JumpPartition, RecoveryDeformation, RecoveryError, assemble_recovery,
                       optimal_third_column, partition_jump)
from .reduction import reduce_bulk, reduce_surface

DET_TOL = 1e-8  # incompressibility tolerance when integrating numerically built maps


# --------------------------------------------------------------------------- #
# results
# --------------------------------------------------------------------------- #

@dataclass
class BulkResult:
    value: float  # may be +inf
    regions: dict
    points: int
    offending: Optional[np.ndarray] = None
    message: str = ""

    @property
    def finite(self) -> bool:
        return math.isfinite(self.value)


@dataclass
class SurfaceResult:
    value: float
    regions: dict
    area: float


@dataclass
class EnergyBreakdown:
    bulk: float
    surface: float
    regions: dict = field(default_factory=dict)
    quadrature_error: float = float("nan")

    @property
    def total(self) -> float:
        return self.bulk + self.surface


@dataclass
class LimitEnergy:
    bulk: float
    surface: float
    cell_values: np.ndarray
    label: str = "exact reduced densities"

    @property
    def total(self) -> float:
        return self.bulk + self.surface


@dataclass
class SweepRow:
    rho: float
    energy: float
    bulk: float
    surface: float
    target: float
    runtime: float = 0.0
    surface_closed_form: float = float("nan")
    surface_kept: float = float("nan")

    @property
    def gap(self) -> float:
        return abs(self.energy - self.target)


@dataclass
class SweepReport:
    rows: list
    target: float
    estimate: float
    partition_budget: float
    strip_budget: float
    slack: float = 1e-6

    @property
    def budget(self) -> float:
        return self.partition_budget + self.strip_budget

    @property
    def monotone(self) -> Optional[bool]:
        if len(self.rows) < 2:
            return None
        gaps = [r.gap for r in self.rows]
        return all(b <= a + self.slack for a, b in zip(gaps, gaps[1:]))

    def lower_bound_ok(self) -> list[bool]:
        return [r.energy >= self.estimate - self.budget for r in self.rows]


# --------------------------------------------------------------------------- #
# bulk
# --------------------------------------------------------------------------- #

def recovery_grid(deformation: RecoveryDeformation, n: int = 64, m: int = 16, order: int = 2,
                  band_pieces: int = 16) -> PrismGrid:
    """Prism grid with extra breakpoints resolving each tilt neighborhood."""
    bx, by = [], []
    for tm in deformation.tilt_maps:
        x0, x1, y0, y1 = tm.cutoff.bounds()
        pad = 0.5 * tm.rho * abs(tm.zeta)
        bx.extend(np.linspace(x0 - pad, x1 + pad, band_pieces + 1))
        by.extend(np.linspace(y0 - pad, y1 + pad, band_pieces + 1))
    for seg in deformation.membrane.jumps:
        bx.extend([seg.p[0], seg.q[0]])
        by.extend([seg.p[1], seg.q[1]])
    return PrismGrid(deformation.membrane.domain, n, m, order, tuple(bx), tuple(by))


def _pairwise_sum(v: np.ndarray) -> float:
    # numpy's contiguous float64 reduction is a fixed pairwise tree
    return float(np.add.reduce(np.ascontiguousarray(v, dtype=np.float64)))


def bulk_energy(deformation: RecoveryDeformation, W: BulkDensity, grid: Optional[PrismGrid] = None,
                det_tol: float = DET_TOL, chunk: int = 65536) -> BulkResult:
    """Gauss quadrature of ``W`` on the rescaled gradient over the prism."""
    grid = recovery_grid(deformation) if grid is None else grid
    if W.mode == INCOMPRESSIBLE and det_tol > 0 and W.family is not None:
        W = W.with_det_tol(det_tol)
    pts, wts = grid.points
    sums = {"identity": [], "tilt": []}
    for start in range(0, len(pts), chunk):
        x = pts[start:start + chunk]
        ev = deformation.evaluate(x)
        vals, fin = W.evaluate(ev.grad)
        if not fin.all():
            k = int(np.flatnonzero(~fin)[0])
            det = float(np.linalg.det(ev.grad[k]))
            return BulkResult(math.inf, {}, len(pts), x[k],
                              f"infinite energy density at {x[k].tolist()} (det {det:.6g})")
        w = wts[start:start + chunk]
        tilt = ev.owner >= 0
        sums["identity"].append(_pairwise_sum(vals[~tilt] * w[~tilt]))
        sums["tilt"].append(_pairwise_sum(vals[tilt] * w[tilt]))
    regions = {k: float(math.fsum(v)) for k, v in sums.items()}
    return BulkResult(regions["identity"] + regions["tilt"], regions, len(pts))


# --------------------------------------------------------------------------- #
# surface
# --------------------------------------------------------------------------- #

def _gauss_on(edges, per: int):
    g, w = np.polynomial.legendre.leggauss(per)
    edges = np.asarray(edges, dtype=float)
    h = np.diff(edges)
    keep = h > 0
    a, h = edges[:-1][keep], h[keep]
    pts = (a[:, None] + 0.5 * h[:, None] * (g[None, :] + 1.0)).ravel()
    wts = (0.5 * h[:, None] * w[None, :]).ravel()
    return pts, wts


def _segment_breaks(deformation: RecoveryDeformation, partition: Optional[JumpPartition], k: int) -> list:
    seg = deformation.membrane.jumps[k]
    br = {0.0, seg.length}
    if partition is not None:
        for a, b in partition.discarded[k] + partition.strips[k]:
            br.update((a, b))
    for piece in deformation.pieces:
        if piece.segment == k:
            for d in (piece.half_length, piece.half_length + piece.blend):
                br.update((piece.s_center - d, piece.s_center + d))
    return sorted(b for b in br if 0.0 <= b <= seg.length)


def _classify(s, partition: Optional[JumpPartition], k: int) -> np.ndarray:
    lab = np.zeros(len(s), dtype=int)  # 0 kept, 1 discarded, 2 strip
    if partition is not None:
        for a, b in partition.discarded[k]:
            lab[(s > a) & (s < b)] = 1
        for a, b in partition.strips[k]:
            lab[(s > a) & (s < b)] = 2
    return lab


def surface_energy(deformation: RecoveryDeformation, psi: SurfaceDensity,
                   partition: Optional[JumpPartition] = None, per_interval: int = 16,
                   thickness_points: int = 16, subdivide: int = 4) -> SurfaceResult:
    """Integrate ``psi_rho`` over the pushed jump surface ``f(J x (-1/2, 1/2))``.

    The surface is parameterized by ``r(s, t) = p + s tau + t e3``; area
    element and normal come from ``f_* r_s`` and ``f_* r_t``.
    """
    rho = deformation.rho
    totals = {"kept": 0.0, "discarded": 0.0, "strip": 0.0}
    area = 0.0
    t, wt = _gauss_on(np.linspace(-0.5, 0.5, 3), thickness_points // 2)
    for k, seg in enumerate(deformation.membrane.jumps):
        br = _segment_breaks(deformation, partition, k)
        edges = np.unique(np.concatenate([np.linspace(a, b, subdivide + 1) for a, b in zip(br[:-1], br[1:])]))
        s, ws = _gauss_on(edges, per_interval)
        S, T = np.meshgrid(s, t, indexing="ij")
        Wt = np.outer(ws, wt).ravel()
        tau3 = np.array([seg.tangent[0], seg.tangent[1], 0.0])
        base = seg.point(S.ravel())
        r = np.column_stack([base, T.ravel()])
        _, J = deformation.tilts.evaluate(r)
        rs = J @ tau3
        rt = J[:, :, 2]
        N = np.cross(rs, rt)
        if float(np.cross(tau3, [0.0, 0.0, 1.0]) @ seg.normal3) < 0:
            N = -N
        nn = np.linalg.norm(N, axis=1)
        if np.any(nn < 1e-10):
            i = int(np.argmin(nn))
            raise RecoveryError(f"degenerate surface element at {r[i].tolist()}")
        z = deformation.jump_amplitude(k, S.ravel(), T.ravel())
        nu_r = np.column_stack([N[:, :2], N[:, 2] / rho])
        dens = psi(z, nu_r)
        lab = _classify(S.ravel(), partition, k)
        for code, name in enumerate(("kept", "discarded", "strip")):
            sel = lab == code
            totals[name] += _pairwise_sum(dens[sel] * Wt[sel])
        area += _pairwise_sum(nn * Wt)
    return SurfaceResult(sum(totals.values()), totals, area)


# --------------------------------------------------------------------------- #
# limit functional
# --------------------------------------------------------------------------- #

def _segment_quadrature(seg, per: int = 32):
    return _gauss_on(np.linspace(0.0, seg.length, 5), per // 4)


def _psi0_along(psi: SurfaceDensity, seg, s) -> np.ndarray:
    zs = seg.jump(s)
    cache: dict = {}
    out = np.empty(len(s))
    for i, z in enumerate(zs):
        key = tuple(np.round(z, 14))
        if key not in cache:
            cache[key] = reduce_surface(psi, z, seg.normal).value
        out[i] = cache[key]
    return out


def limit_energy(membrane: CrackedMembrane, W: BulkDensity, psi: SurfaceDensity,
                 estimate: bool = False, qc_mesh: int = 8, qc_iters: int = 40) -> LimitEnergy:
    """Membrane limit energy with exact reduced densities.

    With ``estimate=True`` the bulk uses a finite-element upper estimate of the
    quasiconvex envelope of ``W_0`` (the surface part keeps ``psi_0``, an upper
    bound for its BV-elliptic envelope).
    """
    cell_vals = []
    for cell in membrane.cells:
        if estimate:
            est = quasiconvex_upper_estimate(reduced_density(W), cell.A, n=qc_mesh, iters=qc_iters)
            cell_vals.append(est.value)
        else:
            cell_vals.append(float(reduce_bulk(W, cell.A).value))
    cell_vals = np.array(cell_vals)
    bulk = float(math.fsum(a * v for a, v in zip((c.area for c in membrane.cells), cell_vals)))
    surface = 0.0
    for seg in membrane.jumps:
        s, ws = _segment_quadrature(seg)
        surface += _pairwise_sum(_psi0_along(psi, seg, s) * ws)
    label = "quasiconvex upper estimate" if estimate else "exact reduced densities"
    return LimitEnergy(bulk, surface, cell_vals, label)


def excess_budget(membrane: CrackedMembrane, psi: SurfaceDensity, partition: JumpPartition) -> tuple[float, float]:
    """``int (psi(z, nu, 0) - psi_0(z, nu))`` over discarded parts and over boundary strips."""
    out = [0.0, 0.0]
    for k, seg in enumerate(membrane.jumps):
        for slot, intervals in enumerate((partition.discarded[k], partition.strips[k])):
            for a, b in intervals:
                s, ws = _gauss_on(np.array([a, b]), 8)
                z = seg.jump(s)
                flat = psi(z, np.broadcast_to(seg.normal3, z.shape))
                out[slot] += _pairwise_sum((flat - _psi0_along(psi, seg, s)) * ws)
    return out[0], out[1]


def tilted_surface_closed_form(deformation: RecoveryDeformation, psi: SurfaceDensity) -> float:
    """``sum_i |alpha'_i| psi(z_i, nu, zeta_i) / s_i`` for constant jumps on the kept pieces."""
    total = 0.0
    for piece, choice in zip(deformation.pieces, deformation.choices):
        seg = deformation.membrane.jumps[piece.segment]
        z = seg.jump(piece.s_center)
        s = math.sqrt(1.0 + (deformation.rho * choice.zeta) ** 2)
        total += piece.length * float(psi(z, np.array([seg.normal[0], seg.normal[1], choice.zeta]))) / s
    return total


# --------------------------------------------------------------------------- #
# sweep
# --------------------------------------------------------------------------- #

def rescaled_energy(deformation: RecoveryDeformation, W: BulkDensity, psi: SurfaceDensity,
                    partition: Optional[JumpPartition] = None, grid: Optional[PrismGrid] = None,
                    error_estimate: bool = False) -> EnergyBreakdown:
    """Bulk plus surface energy of a recovery deformation, with region parts."""
    bulk = bulk_energy(deformation, W, grid)
    if not bulk.finite:
        raise RecoveryError(bulk.message)
    surf = surface_energy(deformation, psi, partition)
    regions = {f"bulk_{k}": v for k, v in bulk.regions.items()}
    regions.update({f"surface_{k}": v for k, v in surf.regions.items()})
    err = float("nan")
    if error_estimate:
        g = recovery_grid(deformation) if grid is None else grid
        err = abs(bulk_energy(deformation, W, g.refined()).value - bulk.value)
    return EnergyBreakdown(bulk.value, surf.value, regions, err)


def convergence_sweep(membrane: CrackedMembrane, W: BulkDensity, psi: SurfaceDensity,
                      rhos: Sequence[float] = (0.1, 0.05, 0.025, 0.0125), n: int = 1,
                      eps: float = 0.04, strip: float = 0.02, grid_n: int = 64, grid_m: int = 16,
                      estimate: bool = True) -> SweepReport:
    """Energies of the recovery deformations along a decreasing thickness list."""
    rhos = [float(r) for r in rhos]
    if any(b >= a for a, b in zip(rhos, rhos[1:])):
        raise ValueError("thickness list must be strictly decreasing")
    partition = partition_jump(membrane, n, eps, strip)
    target = limit_energy(membrane, W, psi).total
    est = limit_energy(membrane, W, psi, estimate=True).total if estimate else target
    pb, sb = excess_budget(membrane, psi, partition)
    third = optimal_third_column(W, membrane)
    rows = []
    for rho in rhos:
        t0 = time.perf_counter()
        rec = assemble_recovery(membrane, W, psi, rho, partition, third=third)
        grid = recovery_grid(rec, grid_n, grid_m)
        e = rescaled_energy(rec, W, psi, partition, grid)
        rows.append(SweepRow(rho, e.total, e.bulk, e.surface, target, time.perf_counter() - t0,
                             tilted_surface_closed_form(rec, psi), e.regions["surface_kept"]))
    return SweepReport(rows, target, est, pb, sb)
