"""Time stepping shared by the two dynamical engines.

Both engines are linear ODEs y' = A(t) y whose drive may jump at known times
(pulse onsets, coupling clamps). Steps are cut at those breakpoints and stage
times are pulled inward by a tiny fraction of the step so one-sided limits
are used on either side of a jump.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable

import numpy as np
from scipy.integrate import solve_ivp

_INWARD = 1e-9
# step reduction where the virtual-cavity coupling peaks before its clamp
FINE_FACTOR = 4


class IntegrationError(RuntimeError):
    pass


def step_times(
    t0: float,
    t1: float,
    dt: float,
    breakpoints: Iterable[float] = (),
    fine: Iterable[tuple[float, float]] = (),
    fine_factor: int = FINE_FACTOR,
) -> np.ndarray:
    """Piecewise-uniform grid from t0 to t1 with every breakpoint on it.

    Spacing is <= dt, and <= dt / fine_factor inside the ``fine`` windows.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not t1 > t0:
        raise ValueError("end time must exceed start time")
    fine = [(a, b) for a, b in fine if b > a]
    edges = [e for w in fine for e in w]
    cuts = sorted({t0, t1, *(b for b in [*breakpoints, *edges] if t0 < b < t1)})
    pieces = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        mid = 0.5 * (a + b)
        h = dt / fine_factor if any(lo <= mid <= hi for lo, hi in fine) else dt
        n = max(1, math.ceil((b - a) / h - 1e-9))
        pieces.append(np.linspace(a, b, n + 1)[:-1])
    pieces.append(np.array([t1]))
    return np.concatenate(pieces)


def rk4(
    fun: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    times: np.ndarray,
    check: Callable[[float, np.ndarray], None] | None = None,
) -> np.ndarray:
    """Classical RK4 along ``times``; returns the state at every grid point."""
    out = np.empty((times.size,) + y0.shape, dtype=y0.dtype)
    y = y0.copy()
    out[0] = y
    for i in range(times.size - 1):
        t, h = times[i], times[i + 1] - times[i]
        ta = t + _INWARD * h
        tm = t + 0.5 * h
        tb = t + (1.0 - _INWARD) * h
        k1 = fun(ta, y)
        k2 = fun(tm, y + 0.5 * h * k1)
        k3 = fun(tm, y + 0.5 * h * k2)
        k4 = fun(tb, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[i + 1] = y
        if check is not None:
            check(times[i + 1], y)
    return out


def adaptive(
    fun: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    times: np.ndarray,
    breakpoints: Iterable[float] = (),
    rtol: float = 1e-10,
    atol: float = 1e-14,
) -> np.ndarray:
    """DOP853 with restarts at breakpoints, sampled on ``times``."""
    t0, t1 = float(times[0]), float(times[-1])
    cuts = sorted({t0, t1, *(b for b in breakpoints if t0 < b < t1)})
    shape = y0.shape
    out = np.empty((times.size,) + shape, dtype=complex)
    y = y0.astype(complex).ravel()

    def f(t, yv):
        return fun(t, yv.reshape(shape)).ravel()

    for a, b in zip(cuts[:-1], cuts[1:]):
        last = b == t1
        mask = (times >= a) & ((times <= b) if last else (times < b))
        inside = times[mask]
        extra = inside.size == 0 or inside[-1] != b
        t_eval = np.concatenate([inside, [b]]) if extra else inside
        sol = solve_ivp(f, (a, b), y, method="DOP853", t_eval=t_eval, rtol=rtol, atol=atol)
        if not sol.success:
            raise IntegrationError(sol.message)
        ys = sol.y[:, :-1] if extra else sol.y
        out[mask] = ys.T.reshape((-1,) + shape)
        y = sol.y[:, -1]
    return out
