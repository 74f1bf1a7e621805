"""Relaxation estimates: Kohn-Strang lamination, FE quasiconvexification, BV-ellipticity competitors.

A *membrane density* here is any callable ``f(E) -> (values, finite)`` on
batches of ``3 x 2`` matrices, with the same conventions as bulk evaluators.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import optimize

from .core import ExtReal, INF
from .densities import BulkDensity
from .reduction import reduce_bulk, reduced_bulk_closed_form

MembraneDensity = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


# --------------------------------------------------------------------------- #
# density helpers
# --------------------------------------------------------------------------- #

def reduced_density(W: BulkDensity) -> MembraneDensity:
    """``W_0`` as a batch membrane density (closed form for catalog entries)."""
    if W.family is not None:
        def f(E):
            v, fin, _ = reduced_bulk_closed_form(W, E)
            return v, fin
        return f

    def f(E):
        E = np.asarray(E, dtype=float)
        flat = E.reshape(-1, 3, 2)
        res = [reduce_bulk(W, e).value for e in flat]
        vals = np.array([r.value if r.finite else 0.0 for r in res])
        fin = np.array([r.finite for r in res])
        return vals.reshape(E.shape[:-2]), fin.reshape(E.shape[:-2])
    return f


def quadratic_density(scale: float = 1.0) -> MembraneDensity:
    """The convex density ``scale |E|^2``."""
    def f(E):
        E = np.asarray(E, dtype=float)
        v = scale * np.einsum("...ij,...ij->...", E, E)
        return v, np.ones(v.shape, dtype=bool)
    return f


def two_well_density(A, B, offset: float = 0.0) -> MembraneDensity:
    """``min(|E - A|^2, |E - B|^2) + offset``."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)

    def f(E):
        E = np.asarray(E, dtype=float)
        da = np.einsum("...ij,...ij->...", E - A, E - A)
        db = np.einsum("...ij,...ij->...", E - B, E - B)
        v = np.minimum(da, db) + offset
        return v, np.ones(v.shape, dtype=bool)
    return f


def _eval_one(f, F) -> ExtReal:
    v, fin = f(np.asarray(F, dtype=float)[None])
    return ExtReal(float(v[0])) if fin[0] else INF


# --------------------------------------------------------------------------- #
# Kohn-Strang step
# --------------------------------------------------------------------------- #

def _sphere_directions(k: int) -> np.ndarray:
    # Fibonacci points plus the coordinate axes
    i = np.arange(k) + 0.5
    z = 1.0 - 2.0 * i / k
    r = np.sqrt(1.0 - z * z)
    th = math.pi * (1.0 + 5.0**0.5) * i
    pts = np.column_stack([r * np.cos(th), r * np.sin(th), z])
    axes = np.vstack([np.eye(3), -np.eye(3)])
    return np.vstack([axes, pts])


@dataclass(frozen=True)
class SplitSearch:
    """Grid for rank-one splits ``(lam, a, b)``.

    ``b_max`` defaults to ``4 (1 + |F|)``.
    """

    angles: int = 64
    lambdas: tuple[float, ...] = tuple(k / 8 for k in range(1, 8))
    directions: int = 48
    radii: int = 12
    b_max: Optional[float] = None
    refine: int = 3
    key: str = "fine"

    def coarse(self) -> "SplitSearch":
        return SplitSearch(angles=16, lambdas=(0.25, 0.5, 0.75), directions=20, radii=6,
                           b_max=self.b_max, refine=0, key="coarse")


@dataclass
class Split:
    lam: float
    a: np.ndarray
    b: np.ndarray

    def plus(self, F):
        return F + self.lam * np.outer(self.b, self.a)

    def minus(self, F):
        return F - (1.0 - self.lam) * np.outer(self.b, self.a)


def _split_candidates(F, search: SplitSearch):
    F = np.asarray(F, dtype=float)
    B = search.b_max if search.b_max is not None else 4.0 * (1.0 + float(np.linalg.norm(F)))
    th = np.arange(search.angles) * math.pi / search.angles
    a = np.column_stack([np.cos(th), np.sin(th)])
    dirs = _sphere_directions(search.directions)
    radii = B * np.geomspace(1e-3, 1.0, search.radii)
    b = (radii[:, None, None] * dirs[None]).reshape(-1, 3)
    lam = np.asarray(search.lambdas, dtype=float)
    # all combinations (lam, a, b)
    L, Ai, Bi = np.meshgrid(np.arange(len(lam)), np.arange(len(a)), np.arange(len(b)), indexing="ij")
    L, Ai, Bi = L.ravel(), Ai.ravel(), Bi.ravel()
    return lam[L], a[Ai], b[Bi]


def _split_points(F, lam, a, b):
    ba = b[:, :, None] * a[:, None, :]
    Fp = F + lam[:, None, None] * ba
    Fm = F - (1.0 - lam)[:, None, None] * ba
    return Fp, Fm


def _split_values(f, F, lam, a, b):
    Fp, Fm = _split_points(F, lam, a, b)
    vp, fp = f(Fp)
    vm, fm = f(Fm)
    fin = fp & fm
    return np.where(fin, (1.0 - lam) * vp + lam * vm, 0.0), fin


def kohn_strang_step(f: MembraneDensity, F, search: SplitSearch = SplitSearch()) -> tuple[ExtReal, Optional[Split]]:
    """One lamination step ``min(f(F), inf (1-lam) f(F+) + lam f(F-))``.

    Uses the barycentric pair ``F+ = F + lam b(x)a``, ``F- = F - (1-lam) b(x)a``.
    Returns the value and the improving split (``None`` when ``f(F)`` wins).
    """
    F = np.asarray(F, dtype=float).reshape(3, 2)
    base = _eval_one(f, F)
    lam, a, b = _split_candidates(F, search)
    vals, fin = _split_values(f, F, lam, a, b)
    if not fin.any():
        return base, None
    idx = np.flatnonzero(fin)
    order = idx[np.argsort(vals[idx], kind="stable")]
    best_val = float(vals[order[0]])
    best = Split(float(lam[order[0]]), a[order[0]].copy(), b[order[0]].copy())

    for k in order[: search.refine]:
        x0 = np.concatenate([[_logit(lam[k]), math.atan2(a[k, 1], a[k, 0])], b[k]])

        def obj(x):
            ll = _expit(x[0])
            aa = np.array([math.cos(x[1]), math.sin(x[1])])
            v, ok = _split_values(f, F, np.array([ll]), aa[None], x[None, 2:])
            return float(v[0]) if ok[0] else 1e300

        res = optimize.minimize(obj, x0, method="Nelder-Mead",
                                options=dict(xatol=1e-10, fatol=1e-14, maxiter=4000))
        if res.fun < best_val:
            best_val = float(res.fun)
            best = Split(float(_expit(res.x[0])), np.array([math.cos(res.x[1]), math.sin(res.x[1])]),
                         np.asarray(res.x[2:], dtype=float))
    if base.finite and base.value <= best_val:
        return base, None
    return ExtReal(best_val), best


def _logit(x):
    return math.log(x / (1.0 - x))


def _expit(y):
    return 1.0 / (1.0 + math.exp(-y))


# --------------------------------------------------------------------------- #
# iterated envelope
# --------------------------------------------------------------------------- #

@dataclass
class EnvelopeMemo:
    """Cache keyed by level, search grid and ``F`` rounded to a lattice."""

    quantum: float = 1e-3
    table: dict = field(default_factory=dict)

    def key(self, k, F, search):
        q = np.round(np.asarray(F) / self.quantum).astype(np.int64)
        return (k, search.key, q.tobytes())


def rank_one_envelope(f: MembraneDensity, F, k: int, search: SplitSearch = SplitSearch(),
                      memo: Optional[EnvelopeMemo] = None, screen: int = 4) -> ExtReal:
    """Depth-``k`` Kohn-Strang estimate ``R_k f(F)``.

    Level ``k`` takes the minimum of ``R_{k-1}(F)`` and the best split whose
    endpoints are evaluated at level ``k-1``. Splits are ranked by their level-0
    value; only the best ``screen`` candidates are recursed on, with a coarser
    search below the top level. The result therefore never exceeds ``R_{k-1}(F)``.
    """
    if k < 0:
        raise ValueError("depth must be nonnegative")
    F = np.asarray(F, dtype=float).reshape(3, 2)
    if k == 0:
        return _eval_one(f, F)
    memo = memo if memo is not None else EnvelopeMemo()
    key = memo.key(k, F, search)
    if key in memo.table:
        return memo.table[key]
    prev = rank_one_envelope(f, F, k - 1, search, memo, screen)
    if k == 1:
        val, _ = kohn_strang_step(f, F, search)
        out = val if val < prev else prev
    else:
        lam, a, b = _split_candidates(F, search)
        vals, fin = _split_values(f, F, lam, a, b)
        idx = np.flatnonzero(fin)
        order = idx[np.argsort(vals[idx], kind="stable")][:screen]
        _, split = kohn_strang_step(f, F, search)
        cands = [(lam[i], a[i], b[i]) for i in order]
        if split is not None:
            cands.insert(0, (split.lam, split.a, split.b))
        inner = search.coarse()
        out = prev
        for ll, aa, bb in cands:
            Fp, Fm = _split_points(F, np.array([ll]), aa[None], bb[None])
            rp = rank_one_envelope(f, Fp[0], k - 1, inner, memo, screen)
            rm = rank_one_envelope(f, Fm[0], k - 1, inner, memo, screen)
            if rp.finite and rm.finite:
                v = ExtReal((1.0 - ll) * rp.value + ll * rm.value)
                if v < out:
                    out = v
    memo.table[key] = out
    return out


def rank_one_density(f: MembraneDensity, k: int, search: SplitSearch = SplitSearch().coarse(),
                     memo: Optional[EnvelopeMemo] = None) -> MembraneDensity:
    """``R_k f`` wrapped as a batch membrane density (pointwise, memoized)."""
    memo = memo if memo is not None else EnvelopeMemo()

    def g(E):
        E = np.asarray(E, dtype=float)
        flat = E.reshape(-1, 3, 2)
        res = [rank_one_envelope(f, e, k, search, memo) for e in flat]
        vals = np.array([r.value if r.finite else 0.0 for r in res])
        fin = np.array([r.finite for r in res])
        return vals.reshape(E.shape[:-2]), fin.reshape(E.shape[:-2])
    return g


# --------------------------------------------------------------------------- #
# finite-element quasiconvexification (upper estimate)
# --------------------------------------------------------------------------- #

@dataclass
class QCEstimate:
    F: np.ndarray
    mesh: int
    value: float
    history: list[float]
    stalled: bool = False
    field: Optional[np.ndarray] = None


class _P1Mesh:
    """Unit square, ``n x n`` squares split along the diagonal, zero boundary values."""

    def __init__(self, n: int):
        self.n = n
        h = 1.0 / n
        self.h = h
        idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
        tris = []
        for i in range(n):
            for j in range(n):
                v00, v10, v01, v11 = idx[i, j], idx[i + 1, j], idx[i, j + 1], idx[i + 1, j + 1]
                tris.append((v00, v10, v11))
                tris.append((v00, v11, v01))
        self.tris = np.array(tris)
        xs = np.linspace(0, 1, n + 1)
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        self.nodes = np.column_stack([X.ravel(), Y.ravel()])
        P = self.nodes[self.tris]
        D = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=1)  # (T, 2, 2) rows are edges
        self.Dinv = np.linalg.inv(D)
        inner = np.zeros((n + 1, n + 1), dtype=bool)
        inner[1:-1, 1:-1] = True
        self.interior = np.flatnonzero(inner.ravel())
        self.node_tris = [np.flatnonzero((self.tris == v).any(axis=1)) for v in range(len(self.nodes))]

    def gradients(self, U, tris=None):
        """Per-triangle gradient ``(3, 2)`` of the nodal field ``U (N, 3)``."""
        t = self.tris if tris is None else self.tris[tris]
        Dinv = self.Dinv if tris is None else self.Dinv[tris]
        dU = np.stack([U[t[:, 1]] - U[t[:, 0]], U[t[:, 2]] - U[t[:, 0]]], axis=1)  # (T, 2, 3)
        # grad^T = D^{-1} dU
        return np.einsum("tij,tjk->tki", Dinv, dU)


def _laminate_field(mesh: _P1Mesh, split: Split, layers: int) -> np.ndarray:
    # sawtooth of slopes lam and -(1-lam) along a, tapered to zero at the boundary
    x = mesh.nodes
    s = x @ split.a
    s0 = s.min()
    period = (s.max() - s0) / layers
    u = ((s - s0) / period) % 1.0
    lam = split.lam
    # rises with slope lam over (1-lam) of a period, falls with slope -(1-lam)
    g = np.where(u < 1.0 - lam, lam * u, lam * (1.0 - lam) - (1.0 - lam) * (u - (1.0 - lam))) * period
    taper = np.ones(len(x))
    U = g[:, None] * split.b[None, :] * taper[:, None]
    boundary = np.ones(len(x), dtype=bool)
    boundary[mesh.interior] = False
    U[boundary] = 0.0
    return U


def quasiconvex_upper_estimate(f: MembraneDensity, F, n: int = 8, iters: int = 60,
                               split: Optional[Split] = None, warm: Optional[np.ndarray] = None,
                               step: float = 0.25, min_step: float = 1e-6) -> QCEstimate:
    """Upper estimate of ``Qf(F)`` by P1 test fields on the unit square.

    Starts from the zero field, from a laminate field when ``split`` is given,
    and from ``warm`` (nodal values) when given; each start is improved by
    coordinate descent on nodal values with a shrinking step. The zero field
    is admissible, so the estimate never exceeds ``f(F)``.
    """
    if n < 2:
        raise ValueError("mesh must have n >= 2")
    F = np.asarray(F, dtype=float).reshape(3, 2)
    mesh = _P1Mesh(n)
    T = len(mesh.tris)
    starts = [np.zeros((len(mesh.nodes), 3))]
    if split is not None:
        for layers in sorted({max(1, n // 2), max(1, n // 4)}):
            starts.append(_laminate_field(mesh, split, layers))
    if warm is not None:
        starts.append(np.array(warm, dtype=float))

    def tri_vals(U, tris=None):
        G = F + mesh.gradients(U, tris)
        return f(G)

    best = None
    history: list[float] = []
    stalled = False
    for U0 in starts:
        U = U0.copy()
        v, fin = tri_vals(U)
        if not fin.all():
            continue
        tv = v.copy()
        cur = float(tv.sum() / T)
        history.append(cur)
        h = step * (1.0 + float(np.linalg.norm(F)))
        sweeps = 0
        while sweeps < iters and h > min_step:
            improved = False
            for node in mesh.interior:
                nt = mesh.node_tris[node]
                old = tv[nt].sum()
                trials = []
                for comp in range(3):
                    for sgn in (1.0, -1.0):
                        trials.append((comp, sgn))
                stack = np.repeat(U[None], len(trials), axis=0)
                for t, (comp, sgn) in enumerate(trials):
                    stack[t, node, comp] += sgn * h
                G = np.stack([F + mesh.gradients(S, nt) for S in stack])
                vv, ff = f(G)
                tot = np.where(ff.all(axis=1), vv.sum(axis=1), np.inf)
                t = int(np.argmin(tot))
                if tot[t] < old - 1e-15:
                    comp, sgn = trials[t]
                    U[node, comp] += sgn * h
                    tv[nt] = vv[t]
                    improved = True
            cur = float(tv.sum() / T)
            history.append(cur)
            sweeps += 1
            if not improved:
                h *= 0.5
        if h > min_step and sweeps >= iters:
            stalled = True
        # recompute from scratch to avoid drift in the running sum
        v, fin = tri_vals(U)
        val = float(v.sum() / T)
        if best is None or val < best[0]:
            best = (val, U)
    if best is None:
        return QCEstimate(F, n, math.inf, history, True, None)
    return QCEstimate(F, n, best[0], history, stalled, best[1])


# --------------------------------------------------------------------------- #
# BV-ellipticity competitors
# --------------------------------------------------------------------------- #

@dataclass
class BVReport:
    min_ratio: float
    argmin: dict
    ratios: np.ndarray
    violations: list[dict]

    @property
    def passed(self) -> bool:
        return not self.violations


def _seg_energy(psi0, z, p, q):
    # psi0 is 1-homogeneous: length * psi0(z, unit normal) = psi0(z, rotated edge)
    d = np.asarray(q, dtype=float) - np.asarray(p, dtype=float)
    nrm = np.array([-d[1], d[0], 0.0])
    return float(psi0(np.asarray(z, dtype=float), nrm))


def bv_ellipticity_test(psi0, i, j, nu, competitors: str = "wedge", samples: int = 1000,
                        seed: int = 0, tol: float = 1e-12, third_values=None) -> BVReport:
    """Compare jump energies of piecewise-constant competitors with the flat interface.

    The unit square is aligned with ``nu``; competitors agree with the pure jump
    near the boundary. ``wedge``: a two-segment interface through an apex.
    ``triangle``: a triangular island with a third value sitting on the
    interface. ``identity``: the flat interface itself. The ratio is the
    competitor energy over ``psi0(i - j, nu)``.
    """
    i = np.asarray(i, dtype=float)
    j = np.asarray(j, dtype=float)
    nu = np.asarray(nu, dtype=float)[:2]
    nu = nu / np.linalg.norm(nu)
    tau = np.array([nu[1], -nu[0]])  # left normal of tau is nu
    z = i - j
    ref = _seg_energy(psi0, z, -tau / 2, tau / 2)
    rng = np.random.default_rng(seed)
    ratios = []
    params = []
    viol = []

    def pt(a, b):
        return a * tau + b * nu

    if competitors == "identity":
        e = _seg_energy(psi0, z, -tau / 2, tau / 2)
        ratios.append(e / ref)
        params.append(dict(kind="identity"))
    elif competitors == "wedge":
        for _ in range(samples):
            t, s = rng.uniform(-0.45, 0.45), rng.uniform(-0.45, 0.45)
            apex = pt(t, s)
            e = _seg_energy(psi0, z, -tau / 2, apex) + _seg_energy(psi0, z, apex, tau / 2)
            ratios.append(e / ref)
            params.append(dict(kind="wedge", t=t, s=s))
    elif competitors == "triangle":
        for _ in range(samples):
            t1, t2 = np.sort(rng.uniform(-0.45, 0.45, size=2))
            tm, s = rng.uniform(t1, t2), rng.uniform(0.01, 0.45)
            if third_values is not None:
                k = np.asarray(third_values[rng.integers(len(third_values))], dtype=float)
            else:
                w = rng.uniform()
                k = w * i + (1 - w) * j + rng.normal(scale=0.1, size=3)
            A, B, C = pt(t1, 0.0), pt(t2, 0.0), pt(tm, s)
            e = (_seg_energy(psi0, z, -tau / 2, A) + _seg_energy(psi0, z, B, tau / 2)
                 + (_seg_energy(psi0, k - j, A, B) if np.linalg.norm(k - j) > 0 else 0.0)
                 + (_seg_energy(psi0, i - k, A, C) + _seg_energy(psi0, i - k, C, B)
                    if np.linalg.norm(i - k) > 0 else 0.0))
            ratios.append(e / ref)
            params.append(dict(kind="triangle", t1=t1, t2=t2, tm=tm, s=s, k=k.tolist()))
    else:
        raise ValueError(f"unknown competitor family {competitors!r}")
    ratios = np.array(ratios)
    for r, prm in zip(ratios, params):
        if r < 1.0 - tol:
            viol.append(dict(prm, ratio=float(r)))
    m = int(np.argmin(ratios))
    return BVReport(float(ratios[m]), params[m], ratios, viol)
