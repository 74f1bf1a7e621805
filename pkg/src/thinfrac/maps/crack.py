"""Crack-opening maps that pull a graph crack apart into a thin open region.

For a crack ``S = {x2 = g(x1), a < x1 < b}`` and a profile ``f > 0`` vanishing
at ``a`` and ``b``, the map

    Psi(x1, x2) = (x1, phi((x2 - g) / f) f + g)

with ``phi(t) = t`` for ``t <= 0`` or ``t >= delta`` and
``phi(t) = (1 - delta) t + delta^2`` in between sends the plane minus ``S``
onto the plane minus the lens ``{g < x2 < g + delta^2 f}``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial


def opening_profile(t, delta: float):
    """Piecewise-affine interpolation ``phi`` and its derivative."""
    t = np.asarray(t, dtype=float)
    mid = (t > 0) & (t < delta)
    val = np.where(mid, (1.0 - delta) * t + delta**2, t)
    der = np.where(mid, 1.0 - delta, 1.0)
    return val, der


@dataclass(frozen=True)
class CrackOpening:
    """Opening map for the graph of the polynomial ``g`` over ``(a, b)``."""

    g: Polynomial
    a: float
    b: float
    delta: float
    amplitude: float = 1.0

    def __post_init__(self):
        if not self.b > self.a:
            raise ValueError("crack interval must have a < b")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")

    @property
    def f(self) -> Polynomial:
        L = self.b - self.a
        return self.amplitude / L**2 * Polynomial([-self.a, 1.0]) * Polynomial([self.b, -1.0])

    def _parts(self, x1):
        inside = (x1 > self.a) & (x1 < self.b)
        f = np.where(inside, self.f(x1), 1.0)
        return inside, f, self.g(x1), self.f.deriv()(x1), self.g.deriv()(x1)

    def evaluate(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, 2)
        x1, x2 = flat[:, 0], flat[:, 1]
        inside, f, g, df, dg = self._parts(x1)
        t = (x2 - g) / f
        mid = inside & (t > 0) & (t < self.delta)
        phi, dphi = opening_profile(t, self.delta)
        val = flat.copy()
        val[mid, 1] = phi[mid] * f[mid] + g[mid]
        jac = np.broadcast_to(np.eye(2), (len(flat), 2, 2)).copy()
        # d/dx1 of ((1-delta) (x2 - g) + delta^2 f + g) = delta g' + delta^2 f'
        jac[mid, 1, 0] = self.delta * dg[mid] + self.delta**2 * df[mid]
        jac[mid, 1, 1] = dphi[mid]
        return val.reshape(x.shape), jac.reshape(x.shape[:-1] + (2, 2))

    def inverse(self, y) -> tuple[np.ndarray, np.ndarray]:
        """Preimage of ``y`` and a mask of points inside the opened lens (no preimage)."""
        y = np.asarray(y, dtype=float)
        flat = y.reshape(-1, 2)
        y1, y2 = flat[:, 0], flat[:, 1]
        inside, f, g, _, _ = self._parts(y1)
        t = (y2 - g) / f
        d = self.delta
        lens = inside & (t > 0) & (t < d * d)
        mid = inside & (t >= d * d) & (t < d)
        out = flat.copy()
        out[mid, 1] = (t[mid] - d * d) / (1.0 - d) * f[mid] + g[mid]
        out[lens] = np.nan
        return out.reshape(y.shape), lens.reshape(y.shape[:-1])

    def in_lens(self, y) -> np.ndarray:
        return self.inverse(y)[1]

    def sample_strip(self, n: int = 201) -> np.ndarray:
        """Points covering the strip where the map differs from the identity."""
        x1 = np.linspace(self.a, self.b, n)[1:-1]
        t = np.linspace(0.0, self.delta, n)[1:-1]
        X1, T = np.meshgrid(x1, t, indexing="ij")
        return np.stack([X1, self.g(X1) + T * self.f(X1)], axis=-1).reshape(-1, 2)

    def w1inf_distance(self, n: int = 201) -> float:
        """``max(sup |Psi - x|, sup |grad Psi - I|)`` over the modified strip."""
        pts = self.sample_strip(n)
        val, jac = self.evaluate(pts)
        c0 = np.abs(val - pts).max()
        c1 = np.abs(jac - np.eye(2)).max()
        return float(max(c0, c1))

    def max_displacement_width(self) -> float:
        """Largest distance from the crack moved by the map (``delta`` times max ``f``)."""
        return self.delta * self.amplitude / 4.0


def open_crack(S, delta: float, amplitude: float = 1.0) -> CrackOpening:
    """Opening map for ``S``, given as ``((x1a, x2a), (x1b, x2b))`` or ``(g, a, b)``.

    A segment must not be vertical; it becomes the graph of an affine ``g``.
    """
    if len(S) == 3 and callable(S[0]):
        g, a, b = S
        g = g if isinstance(g, Polynomial) else Polynomial(g)
        return CrackOpening(g, float(a), float(b), delta, amplitude)
    p, q = (np.asarray(v, dtype=float).reshape(2) for v in S)
    if p[0] > q[0]:
        p, q = q, p
    if q[0] - p[0] < 1e-12:
        raise ValueError("segment must be a graph over x1")
    slope = (q[1] - p[1]) / (q[0] - p[0])
    return CrackOpening(Polynomial([p[1] - slope * p[0], slope]), float(p[0]), float(q[0]), delta, amplitude)
