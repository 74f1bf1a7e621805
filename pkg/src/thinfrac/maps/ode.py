"""Vectorized Dormand-Prince 5(4) integrator with a shared step sequence.

All components of the state advance with the same step, chosen from the
max-norm of the embedded error estimate. Sharing steps keeps the numerical
solution a smooth function of parameters, so finite differences taken across
a batch stay accurate.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


@dataclass
class ODEResult:
    t: np.ndarray
    y: np.ndarray  # (len(t), *state_shape)
    steps: int
    rejected: int


def dopri45(rhs: Callable[[float, np.ndarray], np.ndarray], t0: float, t1: float, y0,
            atol: float = 1e-10, rtol: float = 0.0, h0: float | None = None,
            t_eval=None, max_steps: int = 100_000) -> ODEResult:
    """Integrate ``y' = rhs(t, y)`` from ``t0`` to ``t1``.

    ``t_eval`` values are hit exactly (steps are clipped to land on them), which
    serves as dense output without interpolation error.
    """
    y = np.array(y0, dtype=float)
    if t1 == t0:
        return ODEResult(np.array([t0]), y[None].copy(), 0, 0)
    direction = 1.0 if t1 > t0 else -1.0
    stops = [t1] if t_eval is None else sorted(set(float(v) for v in t_eval), reverse=direction < 0)
    if t_eval is not None and stops[-1] != t1:
        stops.append(t1)
    out_t = []
    out_y = []
    t = t0
    h = abs(h0) if h0 else 0.01 * abs(t1 - t0)
    k1 = rhs(t, y)
    steps = rejected = 0
    for stop in stops:
        while direction * (stop - t) > 0:
            if steps + rejected > max_steps:
                raise RuntimeError("ODE integration exceeded the step budget")
            hs = min(h, abs(stop - t))
            dt = direction * hs
            K = [k1]
            for i in range(1, 7):
                yi = y + dt * sum(a * K[j] for j, a in enumerate(_A[i]) if a != 0.0)
                K.append(rhs(t + _C[i] * dt, yi))
            y5 = y + dt * sum(b * k for b, k in zip(_B5, K) if b != 0.0)
            err = dt * sum((b5 - b4) * k for b5, b4, k in zip(_B5, _B4, K))
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y5))
            e = float(np.max(np.abs(err) / scale)) if err.size else 0.0
            if e <= 1.0:
                t = stop if hs == abs(stop - t) else t + dt
                y = y5
                k1 = K[6]
                steps += 1
                fac = 5.0 if e == 0.0 else min(5.0, max(0.2, 0.9 * e ** (-0.2)))
                # keep the nominal step when the last one was clipped to a stop
                h = max(h, hs) * fac if hs < h else hs * fac
            else:
                rejected += 1
                h = hs * max(0.2, 0.9 * e ** (-0.2))
        out_t.append(t)
        out_y.append(y.copy())
    if t_eval is not None and float(t_eval[-1]) != t1 and out_t and out_t[-1] == t1:
        out_t.pop()
        out_y.pop()
    return ODEResult(np.array(out_t), np.array(out_y), steps, rejected)
