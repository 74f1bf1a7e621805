"""Small dense linear algebra, the cracked-membrane data model and prism quadrature.

Matrices are plain numpy arrays: a membrane gradient ``E`` has shape ``(3, 2)``
and a bulk gradient ``F`` has shape ``(3, 3)``. Every helper here also accepts a
leading batch shape.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

RANK_TOL = 1e-12


class BoundaryHit(ValueError):
    """Raised when a sample point lies on a cell boundary (gradient undefined)."""

    def __init__(self, point, cells=()):
        self.point = np.asarray(point, dtype=float)
        self.cells = tuple(cells)
        super().__init__(f"point {self.point.tolist()} lies on a cell boundary; re-sample")


# --------------------------------------------------------------------------- #
# extended reals
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class ExtReal:
    """Value in ``[0, +inf]`` with an explicit infinity tag.

    Arithmetic never routes through IEEE infinity: ``INF + x`` stays tagged.
    """

    value: float = 0.0
    infinite: bool = False

    @classmethod
    def of(cls, x: float) -> "ExtReal":
        if not math.isfinite(x):
            if x > 0:
                return INF
            raise ValueError(f"cannot represent {x} as an extended real")
        return cls(float(x), False)

    @property
    def finite(self) -> bool:
        return not self.infinite

    def __add__(self, other):
        other = other if isinstance(other, ExtReal) else ExtReal.of(other)
        if self.infinite or other.infinite:
            return INF
        return ExtReal(self.value + other.value)

    __radd__ = __add__

    def __mul__(self, k):
        if k < 0:
            raise ValueError("extended reals scale by nonnegative factors only")
        if self.infinite:
            return INF if k > 0 else ExtReal(0.0)
        return ExtReal(self.value * k)

    __rmul__ = __mul__

    def _key(self):
        return (1, 0.0) if self.infinite else (0, self.value)

    def _coerce(self, other):
        return other if isinstance(other, ExtReal) else ExtReal.of(other)

    def __lt__(self, other):
        return self._key() < self._coerce(other)._key()

    def __le__(self, other):
        return self._key() <= self._coerce(other)._key()

    def __gt__(self, other):
        return self._key() > self._coerce(other)._key()

    def __ge__(self, other):
        return self._key() >= self._coerce(other)._key()

    def __float__(self):
        # reporting only
        return math.inf if self.infinite else float(self.value)

    def __repr__(self):
        return "ExtReal(+inf)" if self.infinite else f"ExtReal({self.value!r})"


INF = ExtReal(0.0, True)


# --------------------------------------------------------------------------- #
# linear algebra
# --------------------------------------------------------------------------- #

def cross_columns(E: np.ndarray) -> np.ndarray:
    """Return ``E^1 ^ E^2`` for ``E`` of shape ``(..., 3, 2)``."""
    E = np.asarray(E, dtype=float)
    a, b = E[..., :, 0], E[..., :, 1]
    return np.stack(
        [
            a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
            a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
            a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0],
        ],
        axis=-1,
    )


def det3(F: np.ndarray) -> np.ndarray:
    """Cofactor expansion of the determinant along the first row."""
    F = np.asarray(F, dtype=float)
    return (
        F[..., 0, 0] * (F[..., 1, 1] * F[..., 2, 2] - F[..., 1, 2] * F[..., 2, 1])
        - F[..., 0, 1] * (F[..., 1, 0] * F[..., 2, 2] - F[..., 1, 2] * F[..., 2, 0])
        + F[..., 0, 2] * (F[..., 1, 0] * F[..., 2, 1] - F[..., 1, 1] * F[..., 2, 0])
    )


def det_columns(a, b, c) -> np.ndarray:
    """``det(a | b | c)`` for batches of column vectors."""
    return np.einsum("...i,...i->...", np.cross(a, b), c)


def append_column(E: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Build ``(E | xi)``; broadcasts over leading axes."""
    E = np.asarray(E, dtype=float)
    xi = np.asarray(xi, dtype=float)
    shape = np.broadcast_shapes(E.shape[:-2], xi.shape[:-1])
    out = np.empty(shape + (3, 3))
    out[..., :, :2] = E
    out[..., :, 2] = xi
    return out


def frob(F: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("...ij,...ij->...", F, F))


def is_rank_two(E: np.ndarray, tol: float = RANK_TOL) -> np.ndarray:
    return np.linalg.norm(cross_columns(E), axis=-1) >= tol


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


# --------------------------------------------------------------------------- #
# membrane data model
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class Cell:
    """Open polygon carrying the affine map ``x -> A x + c``."""

    vertices: np.ndarray  # (k, 2), counter-clockwise
    A: np.ndarray  # (3, 2)
    c: np.ndarray  # (3,)

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=float).reshape(-1, 2))
        object.__setattr__(self, "A", np.asarray(self.A, dtype=float).reshape(3, 2))
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float).reshape(3))
        if len(self.vertices) < 3:
            raise ValueError("a cell needs at least three vertices")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.c))):
            raise ValueError("affine map entries must be finite")

    @property
    def area(self) -> float:
        x, y = self.vertices.T
        return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))

    def value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x @ self.A.T + self.c


@dataclass(frozen=True)
class JumpSegment:
    """Straight crack segment with affine one-sided traces in arclength.

    ``trace_plus(s) = plus[0] + s * plus[1]`` is the trace on the side the
    normal points to.
    """

    p: np.ndarray
    q: np.ndarray
    normal: np.ndarray
    plus: np.ndarray  # (2, 3)
    minus: np.ndarray  # (2, 3)

    def __post_init__(self):
        for name in ("p", "q", "normal"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(2))
        object.__setattr__(self, "plus", np.asarray(self.plus, dtype=float).reshape(2, 3))
        object.__setattr__(self, "minus", np.asarray(self.minus, dtype=float).reshape(2, 3))
        if abs(np.linalg.norm(self.normal) - 1.0) > 1e-12:
            raise ValueError("jump normal must be a unit vector")
        if self.length <= 0:
            raise ValueError("degenerate jump segment")
        if abs(float(np.dot(self.normal, self.tangent))) > 1e-12:
            raise ValueError("jump normal must be orthogonal to the segment")

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.q - self.p))

    @property
    def tangent(self) -> np.ndarray:
        return (self.q - self.p) / np.linalg.norm(self.q - self.p)

    @property
    def normal3(self) -> np.ndarray:
        return np.array([self.normal[0], self.normal[1], 0.0])

    def point(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return self.p + s[..., None] * self.tangent

    def jump(self, s) -> np.ndarray:
        """``[u](s) = u^+(s) - u^-(s)``."""
        s = np.asarray(s, dtype=float)[..., None]
        return (self.plus[0] - self.minus[0]) + s * (self.plus[1] - self.minus[1])

    def trace(self, s, side: int) -> np.ndarray:
        t = self.plus if side > 0 else self.minus
        s = np.asarray(s, dtype=float)[..., None]
        return t[0] + s * t[1]


def _point_segment_distance(x, a, b):
    ab = b - a
    t = np.clip(((x - a) @ ab) / float(ab @ ab), 0.0, 1.0)
    proj = a + t[..., None] * ab
    return np.linalg.norm(x - proj, axis=-1)


def _inside_polygon(x, verts):
    # even-odd ray casting; boundary points are resolved separately
    xs, ys = x[..., 0], x[..., 1]
    inside = np.zeros(xs.shape, dtype=bool)
    n = len(verts)
    for i in range(n):
        x1, y1 = verts[i]
        x2, y2 = verts[(i + 1) % n]
        crosses = (y1 > ys) != (y2 > ys)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (ys - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (xs < xint)
    return inside


@dataclass(frozen=True)
class CrackedMembrane:
    """Piecewise-affine membrane deformation on an axis-aligned rectangle."""

    domain: tuple[float, float, float, float]  # (x0, x1, y0, y1)
    cells: tuple[Cell, ...]
    jumps: tuple[JumpSegment, ...] = field(default_factory=tuple)
    boundary_tol: float = 1e-12

    def __post_init__(self):
        object.__setattr__(self, "domain", tuple(float(v) for v in self.domain))
        object.__setattr__(self, "cells", tuple(self.cells))
        object.__setattr__(self, "jumps", tuple(self.jumps))
        x0, x1, y0, y1 = self.domain
        if not (x1 > x0 and y1 > y0):
            raise ValueError("domain must be a nondegenerate rectangle")
        total = sum(c.area for c in self.cells)
        if abs(total - self.area) > 1e-9 * self.area:
            raise ValueError(f"cells cover area {total}, domain has {self.area}")

    @property
    def area(self) -> float:
        x0, x1, y0, y1 = self.domain
        return (x1 - x0) * (y1 - y0)

    @cached_property
    def _edges(self):
        return [
            [(c.vertices[i], c.vertices[(i + 1) % len(c.vertices)]) for i in range(len(c.vertices))]
            for c in self.cells
        ]

    def locate(self, x) -> np.ndarray:
        """Cell index per point; ``-1`` on a cell boundary, ``-2`` outside the domain."""
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, 2)
        idx = np.full(len(flat), -2, dtype=int)
        on_edge = np.zeros(len(flat), dtype=bool)
        for k, cell in enumerate(self.cells):
            for a, b in self._edges[k]:
                on_edge |= _point_segment_distance(flat, a, b) <= self.boundary_tol
            inside = _inside_polygon(flat, cell.vertices)
            idx[inside & (idx == -2)] = k
        x0, x1, y0, y1 = self.domain
        outside = (flat[:, 0] < x0) | (flat[:, 0] > x1) | (flat[:, 1] < y0) | (flat[:, 1] > y1)
        idx[on_edge & ~outside] = -1
        return idx.reshape(x.shape[:-1])

    def gradient_of(self, x) -> np.ndarray:
        """Gradient ``A`` of the cell containing the single point ``x``."""
        k = int(self.locate(np.asarray(x, dtype=float)))
        if k == -1:
            raise BoundaryHit(x)
        if k == -2:
            raise ValueError(f"point {list(x)} is outside the domain")
        return self.cells[k].A

    def gradients(self, x) -> np.ndarray:
        idx = self.locate(x)
        if np.any(idx < 0):
            bad = np.asarray(x).reshape(-1, 2)[np.flatnonzero(idx.reshape(-1) < 0)[0]]
            raise BoundaryHit(bad)
        As = np.stack([c.A for c in self.cells])
        return As[idx]

    def value(self, x, idx=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if idx is None:
            idx = self.locate(x)
        As = np.stack([c.A for c in self.cells])
        cs = np.stack([c.c for c in self.cells])
        safe = np.where(idx >= 0, idx, 0)
        return np.einsum("...ij,...j->...i", As[safe], x) + cs[safe]

    def min_cross(self) -> float:
        """``min_cells |A^1 ^ A^2|`` (the ``eta`` of the rank-two class)."""
        return float(min(np.linalg.norm(cross_columns(c.A)) for c in self.cells))


def traces_from_cells(membrane_cells: Sequence[Cell], p, q, normal) -> JumpSegment:
    """Build a jump segment whose traces come from the cells on either side."""
    p, q, normal = (np.asarray(v, dtype=float) for v in (p, q, normal))
    mid = 0.5 * (p + q)
    probe = 1e-7 * max(1.0, float(np.linalg.norm(q - p)))
    tangent = (q - p) / np.linalg.norm(q - p)

    def side_cell(sign):
        pt = mid + sign * probe * normal
        for c in membrane_cells:
            if _inside_polygon(pt[None], c.vertices)[0]:
                return c
        raise ValueError("no cell found next to the jump segment")

    def trace(c):
        return np.stack([c.A @ p + c.c, c.A @ tangent])

    return JumpSegment(p, q, normal, trace(side_cell(+1)), trace(side_cell(-1)))


# --------------------------------------------------------------------------- #
# quadrature on the reference prism  Sigma x (-1/2, 1/2)
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class PrismGrid:
    """Tensor Gauss quadrature on ``Sigma x (-1/2, 1/2)``.

    The planar axes use ``n`` uniform cells merged with the optional
    breakpoints ``breaks_x`` / ``breaks_y``; each resulting interval is split
    into ``2**level`` equal pieces.
    """

    domain: tuple[float, float, float, float]
    n: int = 64
    m: int = 16
    order: int = 2
    breaks_x: tuple = ()
    breaks_y: tuple = ()
    level: int = 0

    def __post_init__(self):
        if self.n < 2 or self.m < 2:
            raise ValueError("PrismGrid needs n, m >= 2")
        if self.order < 1:
            raise ValueError("Gauss order must be positive")
        object.__setattr__(self, "domain", tuple(float(v) for v in self.domain))
        object.__setattr__(self, "breaks_x", tuple(float(v) for v in self.breaks_x))
        object.__setattr__(self, "breaks_y", tuple(float(v) for v in self.breaks_y))

    def _edges(self, lo, hi, cells, breaks, level):
        e = np.concatenate([np.linspace(lo, hi, cells + 1), [b for b in breaks if lo < b < hi]])
        e = np.unique(e)
        e = e[np.concatenate([[True], np.diff(e) > 1e-14 * (hi - lo)])]
        if level:
            k = 2**level
            frac = np.arange(k) / k
            e = np.concatenate([(e[:-1, None] + frac[None, :] * np.diff(e)[:, None]).ravel(), [e[-1]]])
        return e

    def _axis(self, lo, hi, cells, breaks=(), level=0):
        g, w = np.polynomial.legendre.leggauss(self.order)
        edges = self._edges(lo, hi, cells, breaks, level)
        h = np.diff(edges)
        pts = (edges[:-1, None] + 0.5 * h[:, None] * (g[None, :] + 1.0)).ravel()
        wts = (0.5 * h[:, None] * w[None, :]).ravel()
        return pts, wts

    @cached_property
    def planar(self) -> tuple[np.ndarray, np.ndarray]:
        x0, x1, y0, y1 = self.domain
        px, wx = self._axis(x0, x1, self.n, self.breaks_x, self.level)
        py, wy = self._axis(y0, y1, self.n, self.breaks_y, self.level)
        X, Y = np.meshgrid(px, py, indexing="ij")
        W = np.outer(wx, wy)
        return np.stack([X.ravel(), Y.ravel()], axis=-1), W.ravel()

    @cached_property
    def thickness(self) -> tuple[np.ndarray, np.ndarray]:
        return self._axis(-0.5, 0.5, self.m, (), self.level)

    @cached_property
    def points(self) -> tuple[np.ndarray, np.ndarray]:
        """All quadrature points ``(N, 3)`` and weights ``(N,)``."""
        xa, wa = self.planar
        x3, w3 = self.thickness
        pts = np.empty((len(xa), len(x3), 3))
        pts[..., :2] = xa[:, None, :]
        pts[..., 2] = x3[None, :]
        return pts.reshape(-1, 3), (wa[:, None] * w3[None, :]).ravel()

    @property
    def measure(self) -> float:
        x0, x1, y0, y1 = self.domain
        return (x1 - x0) * (y1 - y0)

    @property
    def cell_measure(self) -> float:
        """Measure of one cell of the underlying uniform grid."""
        return self.measure / self.n**2 / self.m

    def with_breaks(self, bx=(), by=()) -> "PrismGrid":
        return PrismGrid(self.domain, self.n, self.m, self.order,
                         self.breaks_x + tuple(bx), self.breaks_y + tuple(by), self.level)

    def refined(self) -> "PrismGrid":
        """Every interval halved (planar and thickness)."""
        return PrismGrid(self.domain, self.n, self.m, self.order, self.breaks_x, self.breaks_y, self.level + 1)
