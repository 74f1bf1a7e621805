"""Variable-kernel convolution that avoids averaging across a crack set.

The smoothed field is

    u_sigma(x) = sum_w u(x - sigma h(d(x)) y_w) rho_w,

a polar Gauss rule for the unit-mass bump ``rho`` on the unit disc. The
kernel radius ``sigma h(d(x))`` shrinks to zero on the crack, where ``d`` is a
regularized distance to the crack segments.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import integrate
from scipy.interpolate import RectBivariateSpline


# --------------------------------------------------------------------------- #
# ramp and bump
# --------------------------------------------------------------------------- #

def _psi(x):
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)


def smooth_transition(x):
    """``e^{-1/x} / (e^{-1/x} + e^{-1/(1-x)})``: 0 for ``x <= 0``, 1 for ``x >= 1``."""
    x = np.asarray(x, dtype=float)
    a = _psi(x)
    b = _psi(1.0 - x)
    return a / (a + b)


def _transition_derivative(x):
    x = np.asarray(x, dtype=float)
    inside = (x > 0) & (x < 1)
    xs = np.where(inside, x, 0.5)
    a = np.exp(-1.0 / xs)
    b = np.exp(-1.0 / (1.0 - xs))
    da = a / xs**2
    db = -b / (1.0 - xs) ** 2
    der = (da * b - a * db) / (a + b) ** 2
    return np.where(inside, der, 0.0)


def ramp(t):
    """``h(t) = S(t / 2)``: ``h(0) = 0``, ``h = 1`` for ``t >= 2``, ``0 <= h' <= 1``."""
    return smooth_transition(np.asarray(t, dtype=float) / 2.0)


def ramp_derivative(t):
    return 0.5 * _transition_derivative(np.asarray(t, dtype=float) / 2.0)


def _bump_profile(r):
    r = np.asarray(r, dtype=float)
    inside = r < 1.0
    rs = np.where(inside, r, 0.0)
    return np.where(inside, np.exp(-1.0 / (1.0 - rs * rs)), 0.0)


def bump_mass_constant() -> float:
    """``1 / int_{B_1} exp(-1/(1-|y|^2)) dy`` by adaptive quadrature."""
    val, _ = integrate.quad(lambda r: 2.0 * np.pi * r * float(_bump_profile(r)), 0.0, 1.0,
                            epsabs=1e-14, epsrel=1e-14, limit=200)
    return 1.0 / val


# --------------------------------------------------------------------------- #
# distance to the crack
# --------------------------------------------------------------------------- #

def _segment_distance(x, p, q):
    """Distance to the segment ``[p, q]`` and its gradient."""
    d = q - p
    L2 = float(d @ d)
    s = np.clip(((x - p) @ d) / L2, 0.0, 1.0)
    foot = p + s[:, None] * d
    r = x - foot
    dist = np.linalg.norm(r, axis=1)
    grad = r / np.where(dist > 0, dist, 1.0)[:, None]
    return dist, grad


def softmin_distance(x, segments, q: float):
    """``(sum_i d_i^{-q})^{-1/q}`` and its gradient.

    With ``m`` segments and ``q = log2 m`` the result lies between
    ``dist / 2`` and ``dist``.
    """
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    ds, gs = zip(*(_segment_distance(x, np.asarray(p, float), np.asarray(r, float)) for p, r in segments))
    D = np.stack(ds)  # (m, n)
    G = np.stack(gs)  # (m, n, 2)
    dmin = D.min(axis=0)
    on = dmin <= 0
    Ds = np.where(on[None], 1.0, D)
    # factor out the minimum for stability
    ratio = np.where(on[None], 1.0, dmin[None] / Ds)
    S = np.sum(ratio**q, axis=0)
    d = np.where(on, 0.0, dmin * S ** (-1.0 / q))
    w = np.where(on[None], 0.0, (d[None] / Ds) ** (q + 1))
    grad = np.einsum("mn,mnk->nk", w, G)
    return d, grad


# --------------------------------------------------------------------------- #
# grid fields
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class GridField:
    """Interpolant of nodal values on a regular grid.

    ``order=3`` (default) uses a C2 cubic spline so that the interpolant's
    gradient is continuous; ``order=1`` is plain bilinear interpolation.
    Points off the grid take the value at the nearest grid point.
    """

    origin: tuple[float, float]
    spacing: tuple[float, float]
    values: np.ndarray  # (nx, ny)
    order: int = 3

    def __post_init__(self):
        if self.order not in (1, 3):
            raise ValueError("order must be 1 or 3")

    @classmethod
    def sample(cls, fun, lo, hi, n: int, order: int = 3) -> "GridField":
        xs = np.linspace(lo[0], hi[0], n)
        ys = np.linspace(lo[1], hi[1], n)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        vals = fun(np.stack([X, Y], axis=-1))
        return cls((float(lo[0]), float(lo[1])), (xs[1] - xs[0], ys[1] - ys[0]), np.asarray(vals, float), order)

    @property
    def upper(self) -> tuple[float, float]:
        nx, ny = self.values.shape
        return (self.origin[0] + (nx - 1) * self.spacing[0], self.origin[1] + (ny - 1) * self.spacing[1])

    @cached_property
    def _axes(self):
        nx, ny = self.values.shape
        return (self.origin[0] + self.spacing[0] * np.arange(nx),
                self.origin[1] + self.spacing[1] * np.arange(ny))

    @cached_property
    def _spline(self):
        xs, ys = self._axes
        k = self.order
        return RectBivariateSpline(xs, ys, self.values, kx=k, ky=k, s=0)

    def _clamp(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.origin, self.upper
        cx = np.clip(x[..., 0], lo[0], hi[0])
        cy = np.clip(x[..., 1], lo[1], hi[1])
        outside = (cx != x[..., 0]) | (cy != x[..., 1])
        return cx, cy, outside

    def interpolate(self, x):
        """Values and a mask of points clamped to the grid."""
        cx, cy, outside = self._clamp(x)
        return self._spline.ev(cx, cy), outside

    def gradient(self, x):
        """Gradient of the interpolant (zero at clamped points)."""
        cx, cy, outside = self._clamp(x)
        if self.order == 1:
            g = self._bilinear_gradient(cx, cy)
        else:
            g = np.stack([self._spline.ev(cx, cy, dx=1), self._spline.ev(cx, cy, dy=1)], axis=-1)
        return np.where(outside[..., None], 0.0, g)

    def _bilinear_gradient(self, cx, cy):
        # fitpack cannot differentiate a degree-1 spline; use the cell slopes
        nx, ny = self.values.shape
        fx = (cx - self.origin[0]) / self.spacing[0]
        fy = (cy - self.origin[1]) / self.spacing[1]
        i = np.clip(np.floor(fx).astype(int), 0, nx - 2)
        j = np.clip(np.floor(fy).astype(int), 0, ny - 2)
        tx, ty = fx - i, fy - j
        v = self.values
        v00, v10, v01, v11 = v[i, j], v[i + 1, j], v[i, j + 1], v[i + 1, j + 1]
        gx = ((v10 - v00) * (1 - ty) + (v11 - v01) * ty) / self.spacing[0]
        gy = ((v01 - v00) * (1 - tx) + (v11 - v10) * tx) / self.spacing[1]
        return np.stack([gx, gy], axis=-1)

    def grad_sup(self, refine: int = 4) -> float:
        """Largest gradient norm of the interpolant, sampled on a refined grid."""
        xs, ys = self._axes
        fx = np.linspace(xs[0], xs[-1], refine * (len(xs) - 1) + 1)
        fy = np.linspace(ys[0], ys[-1], refine * (len(ys) - 1) + 1)
        if self.order == 1:
            X, Y = np.meshgrid(fx, fy, indexing="ij")
            g = self._bilinear_gradient(X, Y)
            return float(np.hypot(g[..., 0], g[..., 1]).max())
        gx = self._spline(fx, fy, dx=1)
        gy = self._spline(fx, fy, dy=1)
        return float(np.hypot(gx, gy).max())


# --------------------------------------------------------------------------- #
# kernel
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class SmoothingKernel:
    """Variable-radius mollifier avoiding the segments in ``K``."""

    K: Sequence
    sigma: float
    radial_nodes: int = 48
    angular_nodes: int = 24
    sharpness: float = field(default=0.0)

    def __post_init__(self):
        if not 0 < self.sigma < 0.5:
            raise ValueError("sigma must lie in (0, 1/2)")
        if len(self.K) == 0:
            raise ValueError("the crack set needs at least one segment")
        if self.sharpness <= 0:
            object.__setattr__(self, "sharpness", max(1.0, float(np.log2(len(self.K)))))

    def distance(self, x):
        """Regularized distance ``d`` and its gradient."""
        return softmin_distance(x, self.K, self.sharpness)

    def true_distance(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        return np.min([_segment_distance(x, np.asarray(p, float), np.asarray(q, float))[0]
                       for p, q in self.K], axis=0)

    @cached_property
    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """Quadrature points ``y_w`` in the unit disc and weights ``rho(y_w) |dy|``."""
        r, wr = np.polynomial.legendre.leggauss(self.radial_nodes)
        r = 0.5 * (r + 1.0)
        wr = 0.5 * wr
        th = 2.0 * np.pi * np.arange(self.angular_nodes) / self.angular_nodes
        R, TH = np.meshgrid(r, th, indexing="ij")
        W = (wr * r)[:, None] * (2.0 * np.pi / self.angular_nodes) * np.ones_like(TH)
        y = np.stack([R * np.cos(TH), R * np.sin(TH)], axis=-1).reshape(-1, 2)
        w = (W * _bump_profile(R)).reshape(-1) * bump_mass_constant()
        return y, w

    def discrete_mass(self) -> float:
        return float(self.nodes[1].sum())

    def normalized_weights(self) -> np.ndarray:
        w = self.nodes[1]
        return w / w.sum()

    def points(self, x):
        """``T_{sigma, y_w}(x)`` for every node; shape ``(n, W, 2)``."""
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        d, _ = self.distance(x)
        y, _ = self.nodes
        return x[:, None, :] - self.sigma * ramp(d)[:, None, None] * y[None, :, :]


@dataclass
class ConvolutionResult:
    values: np.ndarray
    clamped: np.ndarray  # points whose stencil left the field grid


def convolve_variable(u: GridField, kernel: SmoothingKernel, x) -> ConvolutionResult:
    """``u_sigma(x)``; stencils leaving the grid use nearest values and are flagged."""
    T = kernel.points(x)
    vals, out = u.interpolate(T)
    w = kernel.normalized_weights()
    return ConvolutionResult(vals @ w, out.any(axis=1))


@dataclass
class GradientSplit:
    grad_conv: np.ndarray  # (grad u)_sigma, shape (n, 2)
    xi: np.ndarray  # correction field, shape (n, 2)
    sigma: float

    @property
    def total(self) -> np.ndarray:
        """``grad (u_sigma) = (grad u)_sigma + sigma xi``."""
        return self.grad_conv + self.sigma * self.xi

    def bound_ratio(self, grad_sup: float) -> float:
        return float(np.linalg.norm(self.xi, axis=1).max() / grad_sup)


def convolution_gradient_split(u: GridField, kernel: SmoothingKernel, x) -> GradientSplit:
    """Split ``grad(u_sigma)`` into the smoothed gradient and ``sigma xi``.

    ``xi = -h'(d) grad d  sum_w (grad u(T_w) . y_w) rho_w``.
    """
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    T = kernel.points(x)
    G = u.gradient(T)  # (n, W, 2)
    y, _ = kernel.nodes
    w = kernel.normalized_weights()
    grad_conv = np.einsum("nwk,w->nk", G, w)
    d, dd = kernel.distance(x)
    proj = np.einsum("nwk,wk,w->n", G, y, w)
    xi = -(ramp_derivative(d) * proj)[:, None] * dd
    return GradientSplit(grad_conv, xi, kernel.sigma)
