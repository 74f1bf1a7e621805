"""Bulk and surface energy densities, the built-in catalog and sampled validators.

Bulk evaluators work on batches of ``3 x 3`` matrices and return a pair
``(values, finite)``. Entries where ``finite`` is False stand for ``+inf``;
their ``values`` slot holds 0 so that no IEEE infinity enters arithmetic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import ExtReal, INF, det3, frob

UNCONSTRAINED = "unconstrained"
ORIENTATION = "orientation_preserving"
INCOMPRESSIBLE = "incompressible"
MODES = (UNCONSTRAINED, ORIENTATION, INCOMPRESSIBLE)


@dataclass(frozen=True)
class BulkDensity:
    """Stored energy ``W`` on ``3 x 3`` matrices.

    Parameters
    ----------
    name : str
        Catalog name or a user label.
    evaluator : callable
        ``F (..., 3, 3) -> (values, finite)``.
    mode : str
        One of ``unconstrained``, ``orientation_preserving``, ``incompressible``.
    p : float
        Growth exponent, ``p > 1``.
    C1 : float, optional
        Coercivity constant, ``W >= C1 |F|^p - 1/C1``.
    c : float, optional
        Two-sided growth constant on ``SL(3)`` (incompressible mode).
    c_delta : callable, optional
        Growth witness ``delta -> c_delta`` (orientation-preserving mode).
    det_tol : float
        Tolerance on ``|det F - 1|`` used by the incompressible evaluator.
        The catalog default 0 means exact comparison.
    """

    name: str
    evaluator: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]
    mode: str
    p: float
    C1: Optional[float] = None
    c: Optional[float] = None
    c_delta: Optional[Callable[[float], float]] = None
    det_tol: float = 0.0
    family: Optional[str] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not self.p > 1:
            raise ValueError("growth exponent must exceed 1")

    def evaluate(self, F) -> tuple[np.ndarray, np.ndarray]:
        F = np.asarray(F, dtype=float)
        vals, fin = self.evaluator(F)
        vals = np.where(fin, vals, 0.0)
        return vals, fin

    def __call__(self, F) -> ExtReal:
        vals, fin = self.evaluate(np.asarray(F, dtype=float)[None])
        return ExtReal(float(vals[0])) if fin[0] else INF

    def with_det_tol(self, tol: float) -> "BulkDensity":
        if self.family is None:
            raise ValueError("only catalog densities can be re-toleranced")
        return make_bulk(self.family, p=self.p, det_tol=tol)


@dataclass(frozen=True)
class SurfaceDensity:
    """Jump energy ``psi(z, nu)`` with its positive 1-homogeneous extension.

    ``unit_evaluator`` is only ever called with unit normals; ``__call__``
    applies the extension ``|nu| psi(z, nu/|nu|)`` and returns 0 at ``nu = 0``.
    """

    name: str
    unit_evaluator: Callable[[np.ndarray, np.ndarray], np.ndarray]
    phi: Callable[[np.ndarray], np.ndarray]
    C2: float
    C3: float
    C4: float
    sigma: Callable[[np.ndarray], np.ndarray]
    Q: Optional[np.ndarray] = None
    cap: Optional[float] = None

    def __call__(self, z, nu) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        nu = np.asarray(nu, dtype=float)
        z, nu = np.broadcast_arrays(z, nu)
        if np.any(np.linalg.norm(z, axis=-1) == 0):
            raise ValueError("surface density is undefined at z = 0")
        r = np.linalg.norm(nu, axis=-1)
        safe = np.where(r > 0, r, 1.0)[..., None]
        out = r * self.unit_evaluator(z, nu / safe)
        return np.where(r > 0, out, 0.0)


# --------------------------------------------------------------------------- #
# catalog
# --------------------------------------------------------------------------- #

def _orient_power(p):
    def ev(F):
        d = det3(F)
        fin = d > 0
        safe = np.where(fin, d, 1.0)
        return frob(F) ** p + 1.0 / safe, fin

    return ev


def _incomp_power(p, det_tol):
    def ev(F):
        d = det3(F)
        fin = (d == 1.0) if det_tol == 0.0 else (np.abs(d - 1.0) <= det_tol)
        return frob(F) ** p, fin

    return ev


def make_bulk(name: str, p: float = 2.0, det_tol: float = 0.0) -> BulkDensity:
    """Catalog bulk densities ``ORIENT_POWER`` and ``INCOMP_POWER``."""
    key = name.upper()
    if key == "ORIENT_POWER":
        return BulkDensity(
            name=key,
            evaluator=_orient_power(p),
            mode=ORIENTATION,
            p=p,
            C1=0.5,
            c_delta=lambda delta: 2.0 + 1.0 / delta,
            family=key,
        )
    if key == "INCOMP_POWER":
        # 2^{|p/2-1|} also covers the two-sided bound on the reduced density
        return BulkDensity(
            name=key,
            evaluator=_incomp_power(p, det_tol),
            mode=INCOMPRESSIBLE,
            p=p,
            c=2.0 ** abs(p / 2.0 - 1.0),
            det_tol=det_tol,
            family=key,
        )
    raise KeyError(f"unknown bulk density {name!r}; catalog: {sorted(BULK_CATALOG)}")


def _phi_capped(cap):
    def phi(t):
        return 1.0 + np.minimum(t, cap)

    return phi


def make_surface(name: str = "SURF_QUAD", Q=None, cap: float = 0.5,
                 M_of_z: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> SurfaceDensity:
    """``SURF_QUAD``: ``psi(z, nu) = phi(|z|) |M nu|`` with ``M^T M = Q``.

    ``phi(t) = 1 + min(t, cap)``; the default cap 1/2 gives ``phi(1) = 1.5``.

    ``M_of_z`` is an optional even matrix field ``M(z) = M(-z)``; when given it
    replaces the constant ``M``.
    """
    key = name.upper()
    if key != "SURF_QUAD":
        raise KeyError(f"unknown surface density {name!r}; catalog: {sorted(SURFACE_CATALOG)}")
    Q = np.eye(3) if Q is None else np.asarray(Q, dtype=float)
    if Q.shape != (3, 3) or not np.allclose(Q, Q.T, atol=0):
        raise ValueError("Q must be a symmetric 3x3 matrix")
    lam = np.linalg.eigvalsh(Q)
    if lam[0] <= 0:
        raise ValueError("Q must be positive definite")
    if not cap > 0:
        raise ValueError("phi cap must be positive")
    phi_t = _phi_capped(cap)

    def unit_eval(z, nu):
        t = np.linalg.norm(z, axis=-1)
        if M_of_z is None:
            qn = np.einsum("...i,ij,...j->...", nu, Q, nu)
            return phi_t(t) * np.sqrt(np.maximum(qn, 0.0))
        Mz = M_of_z(z)
        return phi_t(t) * np.linalg.norm(np.einsum("...ij,...j->...i", Mz, nu), axis=-1)

    return SurfaceDensity(
        name=key,
        unit_evaluator=unit_eval,
        phi=lambda z: phi_t(np.linalg.norm(np.asarray(z, dtype=float), axis=-1)),
        C2=max(2.0, 1.0 + cap),
        C3=float(np.sqrt(lam[0])),
        C4=float(np.sqrt(lam[-1])),
        sigma=lambda t: np.minimum(t, cap) / 2.0,
        Q=Q,
        cap=cap,
    )


def barenblatt_surface() -> SurfaceDensity:
    """``psi = |z||nu|``: vanishes as ``z -> 0``, so no lower bound ``C3 phi``."""
    return SurfaceDensity(
        name="BARENBLATT",
        unit_evaluator=lambda z, nu: np.linalg.norm(z, axis=-1) + 0.0 * nu[..., 0],
        phi=lambda z: 1.0 + 0.0 * np.linalg.norm(np.asarray(z, dtype=float), axis=-1),
        C2=1.0,
        C3=1.0,
        C4=1.0,
        sigma=lambda t: np.minimum(t, 1.0),
    )


BULK_CATALOG = {"ORIENT_POWER": make_bulk, "INCOMP_POWER": make_bulk}
SURFACE_CATALOG = {"SURF_QUAD": make_surface}


def eval_psi_rho(psi: SurfaceDensity, z, nu, rho: float) -> np.ndarray:
    """Rescaled surface density ``psi(z, nu_1, nu_2, nu_3 / rho)``."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    nu = np.array(nu, dtype=float)
    nu[..., 2] = nu[..., 2] / rho
    return psi(z, nu)


# --------------------------------------------------------------------------- #
# validators
# --------------------------------------------------------------------------- #

@dataclass
class CheckResult:
    hypothesis: str
    passed: bool
    checked: int
    worst: float
    detail: str = ""


@dataclass
class ValidationReport:
    density: str
    samples: int
    seed: int
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def result(self, hypothesis: str) -> CheckResult:
        for c in self.checks:
            if c.hypothesis == hypothesis:
                return c
        raise KeyError(hypothesis)

    def lines(self) -> list[str]:
        return [
            f"{c.hypothesis},{'pass' if c.passed else 'FAIL'},{c.checked},{c.worst:.6e},{c.detail}"
            for c in self.checks
        ]


def _random_matrices(rng, n, scale=2.0):
    return rng.normal(scale=scale / 3.0, size=(n, 3, 3))


def _scale_to_det(F, target):
    # positive-det matrices rescaled so det F = target
    d = det3(F)
    sign_fix = np.where(d < 0, -1.0, 1.0)
    F = F.copy()
    F[:, :, 0] *= sign_fix[:, None]
    d = np.abs(d)
    return F * (target / d)[:, None, None] ** (1.0 / 3.0)


def random_sl3(rng, n, spread=1.0) -> np.ndarray:
    """Random matrices with determinant 1 up to rounding."""
    F = np.eye(3) + rng.normal(scale=spread / 2.0, size=(n, 3, 3))
    d = det3(F)
    F = F[np.abs(d) > 1e-3]
    return _scale_to_det(F, np.ones(len(F)))


def validate_bulk(W: BulkDensity, samples: int = 10_000, seed: int = 0) -> ValidationReport:
    """Randomized check of the bulk hypotheses against the declared constants."""
    if samples < 1:
        raise ValueError("samples must be at least 1")
    rng = np.random.default_rng(seed)
    rep = ValidationReport(W.name, samples, seed)
    p = W.p

    if W.mode == INCOMPRESSIBLE:
        F = random_sl3(rng, samples)
        # numeric SL(3) samples carry rounding in det, so compare with a tolerance
        Wd = W.with_det_tol(1e-10) if W.family and W.det_tol == 0 else W
        vals, fin = Wd.evaluate(F)
        _, fin_off = Wd.evaluate(F * 1.01)
        ok = bool(fin.all() and not fin_off.any())
        rep.checks.append(CheckResult("A~2 constraint", ok, 2 * len(F), float((~fin).sum() + fin_off.sum()),
                                      "finite iff det F = 1"))
        c = W.c if W.c is not None else math.nan
        nf = frob(F) ** p
        lo = vals - (nf / c - c)
        hi = (c * nf + c) - vals
        worst = float(min(lo[fin].min(initial=np.inf), hi[fin].min(initial=np.inf)))
        rep.checks.append(CheckResult("A~2 growth", bool(worst >= -1e-9 * (1 + nf.max())), int(fin.sum()),
                                      worst, f"c={c:g}"))
        rep.checks.append(_continuity(Wd, F, rng, project_sl3=True))
        rep.checks.append(_nonneg(vals, fin))
        return rep

    F = _random_matrices(rng, samples)
    vals, fin = W.evaluate(F)
    d = det3(F)
    rep.checks.append(_nonneg(vals, fin))
    if W.mode == ORIENTATION:
        expect = d > 0
        mism = int(np.sum(fin != expect))
        rep.checks.append(CheckResult("A2 constraint", mism == 0, samples, float(mism), "finite iff det F > 0"))
    rep.checks.append(_continuity(W, F[fin], rng))
    if W.C1 is None:
        rep.checks.append(CheckResult("A3 coercivity", False, 0, math.nan, "no C1 declared"))
    else:
        nf = frob(F) ** p
        slack = vals - (W.C1 * nf - 1.0 / W.C1)
        worst = float(slack[fin].min(initial=np.inf))
        rep.checks.append(CheckResult("A3 coercivity", bool(worst >= -1e-12), int(fin.sum()), worst, f"C1={W.C1:g}"))
    if W.mode == ORIENTATION:
        if W.c_delta is None:
            rep.checks.append(CheckResult("A4 growth", False, 0, math.nan, "no c_delta declared"))
        else:
            worst = math.inf
            count = 0
            for delta in (0.05, 0.2, 1.0, 3.0):
                G = _random_matrices(rng, max(1, samples // 4))
                target = delta * (1.0 + rng.exponential(size=len(G)))
                G = _scale_to_det(G, target)
                v, f = W.evaluate(G)
                bound = W.c_delta(delta) * (1.0 + frob(G) ** p)
                gap = np.where(f, bound - v, -np.inf)
                worst = min(worst, float(gap.min()))
                count += len(G)
            rep.checks.append(CheckResult("A4 growth", worst >= -1e-12, count, worst, "c_delta(delta)"))
    return rep


def _nonneg(vals, fin):
    worst = float(vals[fin].min(initial=0.0))
    return CheckResult("A1 nonnegative", worst >= 0.0, int(fin.sum()), worst, "W >= 0 where finite")


def _continuity(W, F, rng, project_sl3=False, h=1e-5):
    """Differences must shrink with the perturbation size (no jumps)."""
    if len(F) == 0:
        return CheckResult("A1 continuity", True, 0, 0.0, "no finite samples")
    H = rng.normal(size=F.shape)
    H /= frob(H)[:, None, None]
    v0, f0 = W.evaluate(F)
    diffs = []
    ok = f0.copy()
    for step in (h, h * 1e-2):
        G = F + step * H
        if project_sl3:
            G = _scale_to_det(G, np.ones(len(G)))
        v, f = W.evaluate(G)
        ok &= f
        diffs.append(np.abs(v - v0))
    ratio = diffs[1] - 0.1 * diffs[0] - 1e-9 * (1.0 + np.abs(v0))
    worst = float(ratio[ok].max(initial=-np.inf))
    return CheckResult("A1 continuity", worst <= 0.0, int(ok.sum()), worst, f"perturbations {h:g}, {h * 1e-2:g}")


def _random_z(rng, n):
    # mix of tiny, moderate and large jumps
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    mags = 10.0 ** rng.uniform(-4, 1.5, size=n)
    return dirs * mags[:, None]


def _random_unit(rng, n, planar=False):
    v = rng.normal(size=(n, 3))
    if planar:
        v[:, 2] = 0.0
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def validate_surface(psi, samples: int = 10_000, seed: int = 0, planar: bool = False) -> ValidationReport:
    """Randomized check of the surface hypotheses and of 1-homogeneity.

    ``psi`` is any object with the :class:`SurfaceDensity` interface. With
    ``planar=True`` normals are drawn with zero third component (used for the
    reduced density).
    """
    if samples < 1:
        raise ValueError("samples must be at least 1")
    rng = np.random.default_rng(seed)
    rep = ValidationReport(psi.name, samples, seed)
    z1 = _random_z(rng, samples)
    z2 = _random_z(rng, samples)
    nu = _random_unit(rng, samples, planar)
    v1 = psi(z1, nu)
    v2 = psi(z2, nu)

    # B1
    dz = np.linalg.norm(z1 - z2, axis=1)
    slack = psi.sigma(dz) * (v1 + v2) - np.abs(v1 - v2)
    worst = float(slack.min())
    rep.checks.append(CheckResult("B1 modulus", worst >= -1e-12, samples, worst, "sigma declared"))
    t = np.linspace(0, 10, 101)
    s = psi.sigma(t)
    sig_ok = bool(abs(s[0]) == 0 and np.all(np.diff(s) >= 0) and np.all(s >= 0))
    rep.checks.append(CheckResult("B1 sigma shape", sig_ok, len(t), float(s[0]), "sigma(0)=0, monotone"))

    # B2, both clauses independently
    n1 = np.linalg.norm(z1, axis=1)
    n2 = np.linalg.norm(z2, axis=1)
    small_first = n1 <= n2
    a = np.where(small_first, v1, v2)
    b = np.where(small_first, v2, v1)
    worst_a = float((psi.C2 * b - a).min())
    rep.checks.append(CheckResult("B2 comparability", worst_a >= -1e-12, samples, worst_a, f"C2={psi.C2:g}"))
    lo_n = np.minimum(n1, n2)
    hi_n = np.maximum(n1, n2)
    sep = psi.C2 * lo_n <= hi_n
    worst_b = float((b - a)[sep].min(initial=np.inf))
    rep.checks.append(CheckResult("B2 monotone", worst_b >= -1e-12, int(sep.sum()), worst_b, "C2|z1| <= |z2|"))

    # B3
    ph = psi.phi(z1)
    nz = n1
    env_ok = (ph >= 1.0 - 1e-15) & (ph <= 1.0 + nz + 1e-15)
    low = v1 - psi.C3 * ph
    high = psi.C4 * ph - v1
    worst = float(min(low.min(), high.min(), 0.0 if env_ok.all() else -1.0))
    rep.checks.append(CheckResult("B3 growth", worst >= -1e-12, samples, worst,
                                  f"C3={psi.C3:g}, C4={psi.C4:g}"))

    # B4
    asym = np.abs(psi(-z1, -nu) - v1)
    worst = float(asym.max())
    rep.checks.append(CheckResult("B4 symmetry", worst <= 1e-12 * (1 + v1.max()), samples, worst, ""))

    # B5 via small perturbations of both arguments
    hz = rng.normal(size=z1.shape) * 1e-8
    hn = rng.normal(size=nu.shape) * 1e-8
    if planar:
        hn[:, 2] = 0
    nu_p = (nu + hn) / np.linalg.norm(nu + hn, axis=1, keepdims=True)
    vp = psi(z1 + hz, nu_p)
    excess = float(((vp - v1) / (1 + v1)).max())
    rep.checks.append(CheckResult("B5 upper semicontinuity", excess <= 1e-5, samples, excess, "perturbation 1e-8"))

    # homogeneity of the extension
    worst = 0.0
    for tt in (0.0, 0.5, 1.0, 3.0):
        vt = psi(z1, tt * nu)
        err = np.abs(vt - tt * v1) / np.maximum(1e-300, np.abs(tt * v1))
        if tt == 0.0:
            err = np.abs(vt)
        worst = max(worst, float(err.max()))
    rep.checks.append(CheckResult("homogeneity", worst <= 1e-12, 4 * samples, worst, "t in {0,0.5,1,3}"))
    return rep
