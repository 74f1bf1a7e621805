"""Recovery deformations for piecewise-affine cracked membranes.

For a thickness ``rho`` the deformation is ``u_rho = w o g`` on the rescaled
prism ``Sigma x (-1/2, 1/2)``, where

* ``w(y) = u(y_a) + rho y3 b(y_a)`` is the membrane thickened along an optimal
  third column ``b`` (in the incompressible regime the fiber-corrected
  extension ``v(y_a, rho y3)``),
* ``g`` is the inverse of a glued family of tilt maps, one per sub-segment of
  the jump set, each rotating the crack plane out of plane by the optimal tilt
  ``zeta*`` of the surface density.

Tilt neighborhoods are boxes around each sub-segment whose lateral widths are
multiples of ``rho |zeta*|``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import BoundaryHit, CrackedMembrane, JumpSegment, cross_columns, det3, is_rank_two
from .densities import INCOMPRESSIBLE, ORIENTATION, BulkDensity, SurfaceDensity
from .maps.cutoff import BoxCutoff
from .maps.incompressible import CellField, PreconditionError, incompressible_correct, incompressible_extend
from .maps.tilt import GluedTilt, TiltMap, eval_tilt
from .reduction import BulkOptions, reduce_bulk, reduce_surface, zeta_bracket


class RecoveryError(RuntimeError):
    """Assembly or evaluation failed; usually the thickness is too large."""


# --------------------------------------------------------------------------- #
# third column
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class ThirdColumn:
    """Per-cell optimal third column with its certificate.

    ``dets`` holds ``det(A | b)``; ``beta`` is ``1 / min dets``. ``coeffs``
    holds ``(lambda, Lambda, t)`` with ``b = lambda A^1 + Lambda A^2 + t n/|n|^2``.
    """

    b: np.ndarray  # (cells, 3)
    values: np.ndarray  # W(A | b) per cell
    dets: np.ndarray
    beta: float
    coeffs: np.ndarray  # (cells, 3)
    mode: str


def optimal_third_column(W: BulkDensity, membrane: CrackedMembrane,
                         opts: BulkOptions = BulkOptions()) -> ThirdColumn:
    """Minimizing third column ``b = xi*`` of ``W(A | .)`` on every cell."""
    bs, vals, dets, coeffs = [], [], [], []
    for k, cell in enumerate(membrane.cells):
        A = cell.A
        if not is_rank_two(A):
            raise ValueError(f"cell {k} has a rank-deficient gradient")
        res = reduce_bulk(W, A, opts)
        if not res.value.finite or res.xi is None:
            raise RecoveryError(f"no finite reduced energy on cell {k}")
        xi = np.asarray(res.xi, dtype=float)
        n = cross_columns(A)
        d = float(n @ xi)
        if W.mode == INCOMPRESSIBLE and abs(d - 1.0) > 1e-10:
            raise RecoveryError(f"third column on cell {k} has det {d}, not 1")
        basis = np.column_stack([A[:, 0], A[:, 1], n / (n @ n)])
        coeffs.append(np.linalg.solve(basis, xi))
        bs.append(xi)
        vals.append(float(res.value))
        dets.append(d)
    dets = np.array(dets)
    return ThirdColumn(np.array(bs), np.array(vals), dets, float(1.0 / dets.min()), np.array(coeffs), W.mode)


# --------------------------------------------------------------------------- #
# optimal tilt
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class TiltChoice:
    zeta: float
    psi0: float
    psi_flat: float  # psi(z, nu, 0)
    bound: float  # every minimizer satisfies |zeta| <= bound


def optimal_tilt(psi: SurfaceDensity, z, nu) -> TiltChoice:
    """Minimizing out-of-plane slot ``zeta*`` of ``psi(z, nu, .)`` and its a-priori bound."""
    z = np.asarray(z, dtype=float).reshape(3)
    if not np.linalg.norm(z) > 0:
        raise ValueError("optimal tilt is undefined at z = 0")
    nu = np.asarray(nu, dtype=float).reshape(2)
    res = reduce_surface(psi, z, nu)
    flat = float(psi(z, np.array([nu[0], nu[1], 0.0])))
    zeta = res.zeta
    if abs(flat - res.value) <= 1e-14 * max(1.0, flat):
        zeta = 0.0  # no gain from tilting
    return TiltChoice(zeta, float(res.value), flat, zeta_bracket(psi))


# --------------------------------------------------------------------------- #
# partition of the jump set
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class SubSegment:
    segment: int
    center: np.ndarray  # midpoint x_i of alpha'_i
    s_center: float  # arclength of x_i on its segment
    half_length: float  # half of |alpha'_i|
    blend: float  # tangential cutoff width beyond alpha'_i

    @property
    def length(self) -> float:
        return 2.0 * self.half_length


@dataclass(frozen=True)
class JumpPartition:
    """Sub-segments ``alpha'_i`` and the discarded parts of every segment.

    ``discarded[k]`` and ``strips[k]`` are lists of arclength intervals on
    segment ``k``: gaps left by the partition (including corner balls) and
    boundary strips where segments meet the domain boundary.
    """

    n: int
    eps: float
    strip: float
    pieces: tuple[SubSegment, ...]
    discarded: tuple[tuple[tuple[float, float], ...], ...]
    strips: tuple[tuple[tuple[float, float], ...], ...]

    @property
    def discarded_length(self) -> float:
        return float(sum(b - a for seg in self.discarded for a, b in seg))

    @property
    def strip_length(self) -> float:
        return float(sum(b - a for seg in self.strips for a, b in seg))


def _on_boundary(p, domain, tol=1e-12) -> bool:
    x0, x1, y0, y1 = domain
    return min(abs(p[0] - x0), abs(p[0] - x1), abs(p[1] - y0), abs(p[1] - y1)) <= tol


def _corner_ends(jumps) -> list[tuple[bool, bool]]:
    ends = []
    for k, j in enumerate(jumps):
        flags = []
        for e in (j.p, j.q):
            shared = any(np.allclose(e, o.p, atol=1e-12) or np.allclose(e, o.q, atol=1e-12)
                         for m, o in enumerate(jumps) if m != k)
            flags.append(shared)
        ends.append(tuple(flags))
    return ends


def partition_jump(membrane: CrackedMembrane, n: int = 1, eps: float = 0.04, strip: float = 0.02,
                   min_gap: float = 1e-3) -> JumpPartition:
    """Split each jump segment into ``n`` equal parts and shrink each part by ``eps/n``.

    Ends on the domain boundary lose a strip of width ``strip``; ends shared
    with another segment lose a corner ball of radius ``eps``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if not 0 < eps:
        raise ValueError("eps must be positive")
    if eps / n < min_gap:
        raise ValueError(f"n = {n} leaves gaps below {min_gap}; the largest feasible n is {int(eps / min_gap)}")
    pieces, discarded, strips = [], [], []
    corners = _corner_ends(membrane.jumps)
    for k, seg in enumerate(membrane.jumps):
        L = seg.length
        lo, hi = 0.0, L
        disc, strp = [], []
        for end, (pt, at_corner) in enumerate(zip((seg.p, seg.q), corners[k])):
            if at_corner:
                cut = eps
                target = disc
            elif _on_boundary(pt, membrane.domain):
                cut = strip
                target = strp
            else:
                continue
            if end == 0:
                target.append((0.0, cut))
                lo = cut
            else:
                target.append((L - cut, L))
                hi = L - cut
        span = hi - lo
        if span <= eps:
            raise ValueError(f"jump segment {k} is too short for eps = {eps}")
        part = span / n
        keep = part - eps / n
        gap = eps / n
        for i in range(n):
            a = lo + i * part
            disc.append((a, a + gap / 2))
            disc.append((a + part - gap / 2, a + part))
            s_mid = a + part / 2
            pieces.append(SubSegment(k, seg.point(s_mid), s_mid, keep / 2, 0.45 * gap))
        discarded.append(tuple(sorted(disc)))
        strips.append(tuple(sorted(strp)))
    return JumpPartition(n, eps, strip, tuple(pieces), tuple(discarded), tuple(strips))


# --------------------------------------------------------------------------- #
# recovery deformation
# --------------------------------------------------------------------------- #

@dataclass
class RescaledEvaluation:
    value: np.ndarray  # u(x)
    grad: np.ndarray  # (grad_a u | rho^{-1} d3 u)
    preimage: np.ndarray  # g(x)
    cells: np.ndarray
    owner: np.ndarray  # tilt map index or -1


@dataclass
class RecoveryDeformation:
    """``u_rho = w o g`` for a fixed thickness ``rho``."""

    membrane: CrackedMembrane
    third: ThirdColumn
    tilts: GluedTilt
    rho: float
    mode: str
    choices: tuple[TiltChoice, ...]
    pieces: tuple[SubSegment, ...]
    extension: Optional[object] = None
    newton_tol: float = 1e-10

    def _cells(self, ya):
        idx = self.membrane.locate(ya)
        bad = idx < 0
        if bad.any():
            # points on a cell edge: nudge into a neighbouring cell
            for shift in (1e-9, -1e-9):
                retry = self.membrane.locate(ya[bad] + shift * np.array([1.0, 0.7]))
                fix = retry >= 0
                sub = np.flatnonzero(bad)[fix]
                idx[sub] = retry[fix]
                bad = idx < 0
                if not bad.any():
                    break
        if bad.any():
            raise BoundaryHit(ya[np.flatnonzero(bad)[0]])
        return idx

    def _thick(self, y, idx):
        x = np.column_stack([y[:, :2], self.rho * y[:, 2]])
        return self.extension.evaluate(x, idx=idx)

    def w_gradient(self, y, idx):
        """Rescaled gradient of ``w`` at ``y``."""
        if self.extension is not None:
            # w(y) = v(y_a, rho y3) has rescaled gradient (grad_a v | d3 v)
            return self._thick(y, idx)[1]
        A = np.stack([c.A for c in self.membrane.cells])[idx]
        out = np.empty((len(y), 3, 3))
        out[:, :, :2] = A
        out[:, :, 2] = self.third.b[idx]
        return out

    def w_value(self, y, idx):
        if self.extension is not None:
            return self._thick(y, idx)[0]
        u = self.membrane.value(y[:, :2], idx)
        return u + self.rho * y[:, 2, None] * self.third.b[idx]

    def evaluate(self, x) -> RescaledEvaluation:
        x = np.asarray(x, dtype=float).reshape(-1, 3)
        y, Jf, res = self.tilts.pullback(x, tol=1e-13)
        if np.any(res > self.newton_tol):
            k = int(np.argmax(res))
            raise RecoveryError(f"inverse tilt map did not converge at {x[k].tolist()} "
                                f"(residual {res[k]:.2e}); use a smaller rho")
        idx = self._cells(y[:, :2])
        Gw = self.w_gradient(y, idx)
        r = self.rho
        D = np.array([1.0, 1.0, 1.0 / r])
        # D^{-1} grad f D, then its inverse
        Js = Jf * D[None, None, :] / D[None, :, None]
        grad = Gw @ np.linalg.inv(Js)
        return RescaledEvaluation(self.w_value(y, idx), grad, y, idx, self.tilts._owner(x))

    def midplane(self, xa) -> np.ndarray:
        xa = np.asarray(xa, dtype=float).reshape(-1, 2)
        x = np.column_stack([xa, np.zeros(len(xa))])
        return self.evaluate(x).value

    def jump_amplitude(self, segment: int, s, t) -> np.ndarray:
        """``[w](s, t) = z(s) + rho t [b]`` on segment ``segment``."""
        seg = self.membrane.jumps[segment]
        z = seg.jump(s)
        bp, bm = self._side_b(seg)
        return z + self.rho * np.asarray(t, dtype=float)[..., None] * (bp - bm)

    def _side_b(self, seg: JumpSegment):
        mid = 0.5 * (seg.p + seg.q)
        h = 1e-7 * max(1.0, seg.length)
        ip = int(self._cells((mid + h * seg.normal)[None])[0])
        im = int(self._cells((mid - h * seg.normal)[None])[0])
        return self.third.b[ip], self.third.b[im]

    @property
    def tilt_maps(self) -> list[TiltMap]:
        return [m if isinstance(m, TiltMap) else m.tilt for m in self.tilts.maps]


def _check_boxes(cutoffs, domain):
    x0, x1, y0, y1 = domain
    boxes = [c.bounds() for c in cutoffs]
    for i, (a0, a1, b0, b1) in enumerate(boxes):
        if a0 < x0 - 1e-12 or a1 > x1 + 1e-12 or b0 < y0 - 1e-12 or b1 > y1 + 1e-12:
            raise RecoveryError(f"tilt neighborhood {i} leaves the domain; use a smaller rho")
    for i in range(len(cutoffs)):
        for j in range(i + 1, len(cutoffs)):
            ci, cj = cutoffs[i], cutoffs[j]
            # supports are open boxes; sample the boundary of one against the other
            t = np.linspace(-1, 1, 201)
            pts = [ci.center + a * ci.r_V * ci.kappa + b * (ci.half_length + ci.tangential_blend) * ci.tau
                   for a in t for b in (-1.0, 1.0)]
            pts += [ci.center + a * ci.r_V * ci.kappa + b * (ci.half_length + ci.tangential_blend) * ci.tau
                    for b in t for a in (-1.0, 1.0)]
            pts.append(ci.center)
            if np.any(cj.in_support(np.array(pts))):
                raise RecoveryError(f"tilt neighborhoods {i} and {j} overlap; use a smaller rho or fewer pieces")


def assemble_recovery(membrane: CrackedMembrane, W: BulkDensity, psi: SurfaceDensity, rho: float,
                      partition: JumpPartition, mode: Optional[str] = None,
                      inner_width: float = 0.5, blend_width: float = 2.5,
                      ode_tol: float = 1e-10, third: Optional[ThirdColumn] = None) -> RecoveryDeformation:
    """Build the recovery deformation at thickness ``rho``.

    ``inner_width`` and ``blend_width`` give the lateral half-width of the
    isometric core and of the blend zone of every tilt neighborhood, in units
    of ``rho |zeta*|``.
    """
    mode = W.mode if mode is None else mode
    if mode != W.mode:
        raise ValueError(f"mode {mode!r} does not match the bulk density ({W.mode!r})")
    if mode not in (ORIENTATION, INCOMPRESSIBLE):
        raise ValueError("recovery needs an orientation-preserving or incompressible density")
    if not rho > 0:
        raise ValueError("rho must be positive")
    third = optimal_third_column(W, membrane) if third is None else third

    choices, cutoffs, maps, used = [], [], [], []
    for piece in partition.pieces:
        seg = membrane.jumps[piece.segment]
        choice = optimal_tilt(psi, seg.jump(piece.s_center), seg.normal)
        choices.append(choice)
        if choice.zeta == 0.0:
            continue
        w = rho * abs(choice.zeta)
        cut = BoxCutoff(piece.center, seg.normal, piece.half_length, inner_width * w, blend_width * w,
                        piece.blend)
        cutoffs.append(cut)
        used.append(piece)
        maps.append(TiltMap(piece.center, seg.normal, choice.zeta, rho, cut))
    _check_boxes(cutoffs, membrane.domain)

    glued_maps = []
    for tm in maps:
        if mode == INCOMPRESSIBLE:
            try:
                glued_maps.append(incompressible_correct(tm, ode_tol))
            except PreconditionError as exc:
                raise RecoveryError(f"{exc}; use a smaller rho") from exc
        else:
            x0, x1, y0, y1 = tm.cutoff.bounds()
            G = np.stack(np.meshgrid(np.linspace(x0, x1, 41), np.linspace(y0, y1, 41),
                                     np.linspace(-0.5, 0.5, 9), indexing="ij"), axis=-1).reshape(-1, 3)
            _, J = eval_tilt(tm, G)
            d = det3(J)
            if d.min() < 0.5:
                raise RecoveryError(f"tilt map determinant {d.min():.3g} < 1/2; use a smaller rho")
            glued_maps.append(tm)

    extension = None
    if mode == INCOMPRESSIBLE:
        extension = incompressible_extend(membrane, [CellField(b) for b in third.b], rho)
    return RecoveryDeformation(membrane, third, GluedTilt(glued_maps), rho, mode, tuple(choices),
                               tuple(partition.pieces), extension)
