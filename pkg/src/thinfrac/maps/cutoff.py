"""Smooth cutoffs ``phi(x_alpha)`` with derivatives up to third order.

A cutoff equals 1 on the inner set ``U`` and 0 outside the open set ``V``.
Derivatives are returned as a :class:`Jet`: value, gradient ``(..., 2)``,
Hessian ``(..., 2, 2)`` and third derivative ``(..., 2, 2, 2)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Jet:
    v: np.ndarray
    g: np.ndarray
    H: np.ndarray
    T: np.ndarray

    def __mul__(self, other: "Jet") -> "Jet":
        f, g = self, other
        v = f.v * g.v
        grad = f.g * g.v[..., None] + f.v[..., None] * g.g
        H = (f.H * g.v[..., None, None] + g.H * f.v[..., None, None]
             + f.g[..., :, None] * g.g[..., None, :] + g.g[..., :, None] * f.g[..., None, :])
        T = (f.T * g.v[..., None, None, None] + g.T * f.v[..., None, None, None]
             + f.H[..., :, :, None] * g.g[..., None, None, :]
             + f.H[..., :, None, :] * g.g[..., None, :, None]
             + f.H[..., None, :, :] * g.g[..., :, None, None]
             + g.H[..., :, :, None] * f.g[..., None, None, :]
             + g.H[..., :, None, :] * f.g[..., None, :, None]
             + g.H[..., None, :, :] * f.g[..., :, None, None])
        return Jet(v, grad, H, T)


def smoothstep(x):
    """Quintic ``S = 6x^5 - 15x^4 + 10x^3`` clamped to ``[0, 1]`` and its derivatives."""
    x = np.asarray(x, dtype=float)
    c = np.clip(x, 0.0, 1.0)
    inside = (x > 0.0) & (x < 1.0)
    S = c**3 * (10.0 - 15.0 * c + 6.0 * c * c)
    S1 = np.where(inside, 30.0 * c * c * (1.0 - c) ** 2, 0.0)
    S2 = np.where(inside, 60.0 * c * (1.0 - c) * (1.0 - 2.0 * c), 0.0)
    S3 = np.where(inside, 60.0 * (1.0 - 6.0 * c + 6.0 * c * c), 0.0)
    return S, S1, S2, S3


def compose_step(ell: Jet) -> Jet:
    """Chain rule ``S(ell)`` up to third order."""
    S, S1, S2, S3 = smoothstep(ell.v)
    g = ell.g
    grad = S1[..., None] * g
    gg = g[..., :, None] * g[..., None, :]
    H = S2[..., None, None] * gg + S1[..., None, None] * ell.H
    ggg = g[..., :, None, None] * g[..., None, :, None] * g[..., None, None, :]
    mixed = (ell.H[..., :, :, None] * g[..., None, None, :]
             + ell.H[..., :, None, :] * g[..., None, :, None]
             + ell.H[..., None, :, :] * g[..., :, None, None])
    T = S3[..., None, None, None] * ggg + S2[..., None, None, None] * mixed + S1[..., None, None, None] * ell.T
    return Jet(S, grad, H, T)


def _zeros(shape):
    return Jet(np.zeros(shape), np.zeros(shape + (2,)), np.zeros(shape + (2, 2)), np.zeros(shape + (2, 2, 2)))


@dataclass(frozen=True)
class DiscCutoff:
    """Radial cutoff: 1 on ``B(center, r_U)``, 0 outside ``B(center, r_V)``."""

    center: np.ndarray
    r_U: float
    r_V: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(2))
        if not 0 < self.r_U < self.r_V:
            raise ValueError("cutoff radii must satisfy 0 < r_U < r_V")

    def in_support(self, xa) -> np.ndarray:
        return np.linalg.norm(np.asarray(xa) - self.center, axis=-1) < self.r_V

    def in_inner(self, xa) -> np.ndarray:
        return np.linalg.norm(np.asarray(xa) - self.center, axis=-1) <= self.r_U

    def jet(self, xa) -> Jet:
        xa = np.asarray(xa, dtype=float)
        u = xa - self.center
        r = np.linalg.norm(u, axis=-1)
        w = self.r_V - self.r_U
        rs = np.where(r > 0, r, 1.0)
        eye = np.eye(2)
        # derivatives of r; only used where r > r_U > 0
        r1 = u / rs[..., None]
        r2 = (eye - r1[..., :, None] * r1[..., None, :]) / rs[..., None, None]
        r3 = (-(eye[:, :, None] * r1[..., None, None, :] + eye[:, None, :] * r1[..., None, :, None]
                + eye[None, :, :] * r1[..., :, None, None]) / rs[..., None, None, None] ** 2
              + 3.0 * r1[..., :, None, None] * r1[..., None, :, None] * r1[..., None, None, :] / rs[..., None, None, None] ** 2)
        ell = Jet((self.r_V - r) / w, -r1 / w, -r2 / w, -r3 / w)
        return compose_step(ell)

    def bounds(self):
        c = self.center
        return (c[0] - self.r_V, c[0] + self.r_V, c[1] - self.r_V, c[1] + self.r_V)


@dataclass(frozen=True)
class BoxCutoff:
    """Product cutoff around a segment: lateral profile times tangential profile.

    With ``d = kappa . (x - center)`` and ``t = tau . (x - center)``, the cutoff
    is 1 for ``|d| <= r_U`` and ``|t| <= half_length``, and vanishes for
    ``|d| >= r_U + lateral_blend`` or ``|t| >= half_length + tangential_blend``.
    """

    center: np.ndarray
    kappa: np.ndarray
    half_length: float
    r_U: float
    lateral_blend: float
    tangential_blend: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(2))
        k = np.asarray(self.kappa, dtype=float).reshape(2)
        object.__setattr__(self, "kappa", k / np.linalg.norm(k))
        if not (self.r_U > 0 and self.lateral_blend > 0 and self.tangential_blend > 0 and self.half_length >= 0):
            raise ValueError("box cutoff widths must be positive")

    @property
    def tau(self) -> np.ndarray:
        return np.array([self.kappa[1], -self.kappa[0]])

    @property
    def r_V(self) -> float:
        return self.r_U + self.lateral_blend

    def _coords(self, xa):
        u = np.asarray(xa, dtype=float) - self.center
        return u @ self.kappa, u @ self.tau

    def in_support(self, xa) -> np.ndarray:
        d, t = self._coords(xa)
        return (np.abs(d) < self.r_V) & (np.abs(t) < self.half_length + self.tangential_blend)

    def in_inner(self, xa) -> np.ndarray:
        d, t = self._coords(xa)
        return (np.abs(d) <= self.r_U) & (np.abs(t) <= self.half_length)

    def _profile(self, coord, direction, inner, blend):
        sgn = np.where(coord >= 0, 1.0, -1.0)
        shape = coord.shape
        ell = _zeros(shape)
        ell.v = (inner + blend - np.abs(coord)) / blend
        ell.g = -(sgn[..., None] * direction) / blend
        return compose_step(ell)

    def jet(self, xa) -> Jet:
        d, t = self._coords(xa)
        lat = self._profile(d, self.kappa, self.r_U, self.lateral_blend)
        tan = self._profile(t, self.tau, self.half_length, self.tangential_blend)
        return lat * tan

    def bounds(self):
        corners = []
        for a in (-1, 1):
            for b in (-1, 1):
                corners.append(self.center + a * self.r_V * self.kappa
                               + b * (self.half_length + self.tangential_blend) * self.tau)
        c = np.array(corners)
        return (c[:, 0].min(), c[:, 0].max(), c[:, 1].min(), c[:, 1].max())
