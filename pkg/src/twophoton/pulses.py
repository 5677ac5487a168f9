"""Single-photon temporal envelopes, their spectra and virtual-cavity couplings.

Conventions
-----------
* ``u(t)`` is normalized, ``int |u(t)|^2 dt = 1``, and is written in the frame
  rotating at the carrier of the transition it drives. A detuning ``delta``
  multiplies the envelope by ``exp(-i delta (t - t_d))``.
* Spectra use ``u(w) = (2 pi)^(-1/2) int u(t) exp(i w t) dt`` so a detuned pulse
  is centred at ``w = delta``.
* A virtual cavity that starts with one excitation and leaks through the
  coupling ``g(t)`` emits ``u(t) = g*(t) exp(-1/2 int |g|^2)``. The inverse,
  ``g(t) = u*(t) / sqrt(1 - int^t |u|^2)``, diverges once the cavity has
  emptied; beyond ``1 - int |u|^2 < EPS_G`` the coupling is clamped to zero.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate, special

log = logging.getLogger(__name__)

EPS_G = 1e-6
# named shapes are integrated over the window holding 1 - TRUNCATION of the norm
TRUNCATION = 1e-9
NORM_TOL = 1e-8
TABLE_RENORM_TOL = 1e-3


class PulseError(ValueError):
    pass


class SpectralGridError(PulseError):
    pass


@dataclass(frozen=True)
class SpectralAmplitude:
    grid: np.ndarray
    values: np.ndarray

    def norm(self) -> float:
        return float(integrate.trapezoid(np.abs(self.values) ** 2, self.grid))


@dataclass(frozen=True)
class PulseEnvelope:
    """Base class. Subclasses define the undetuned, undelayed shape."""

    delay: float = 0.0
    detuning: float = 0.0

    # -- shape hooks -----------------------------------------------------
    def _shape(self, tau: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _cumulative(self, tau: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _survival(self, tau: np.ndarray) -> np.ndarray:
        return 1.0 - self._cumulative(tau)

    def _window(self) -> tuple[float, float]:
        raise NotImplementedError

    # -- public API ------------------------------------------------------
    def amplitude(self, t) -> np.ndarray | complex:
        t = np.asarray(t, dtype=float)
        tau = t - self.delay
        out = self._shape(tau).astype(complex)
        if self.detuning:
            out = out * np.exp(-1j * self.detuning * tau)
        return out if out.ndim else complex(out)

    def cumulative(self, t) -> np.ndarray | float:
        """int_{-inf}^t |u|^2."""
        out = np.clip(self._cumulative(np.asarray(t, dtype=float) - self.delay), 0.0, 1.0)
        return out if np.ndim(out) else float(out)

    def remaining(self, t) -> np.ndarray | float:
        """1 - cumulative(t), evaluated without cancellation where possible."""
        out = np.clip(self._survival(np.asarray(t, dtype=float) - self.delay), 0.0, 1.0)
        return out if np.ndim(out) else float(out)

    def support(self) -> tuple[float, float]:
        a, b = self._window()
        return a + self.delay, b + self.delay

    def shifted(self, dt: float) -> "PulseEnvelope":
        return _replace(self, delay=self.delay + dt)

    @property
    def rate_scale(self) -> float:
        """Characteristic inverse duration, used for default step sizes."""
        raise NotImplementedError

    # -- virtual cavity --------------------------------------------------
    def saturation_time(self) -> float:
        """First time at which 1 - int |u|^2 drops below EPS_G (inf if never)."""
        a, b = self.support()
        if self.remaining(b) >= EPS_G:
            return math.inf
        f = lambda t: math.log(max(self.remaining(t), 1e-300)) - math.log(EPS_G)
        lo = a
        if f(lo) <= 0:
            return lo
        return float(_bisect(f, lo, b))

    def coupling(self, t) -> np.ndarray | complex:
        return coupling_from_envelope(self, t)

    def log_emission(self, t) -> np.ndarray | float:
        """int_{-inf}^t |g|^2 for the clamped coupling, i.e. -log of the cavity population."""
        t = np.asarray(t, dtype=float)
        ts = self.saturation_time()
        out = -np.log(np.maximum(self.remaining(np.minimum(t, ts)), 1e-300))
        return out if out.ndim else float(out)


def _replace(p, **kw):
    from dataclasses import replace

    return replace(p, **kw)


def _bisect(f, lo, hi, tol=1e-13):
    flo = f(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo < tol * max(1.0, abs(hi)):
            break
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class ExponentialDecay(PulseEnvelope):
    """u(t) = sqrt(kappa) exp(-kappa (t - t_d) / 2) for t >= t_d."""

    kappa: float = 1.0

    def __post_init__(self):
        if not (self.kappa > 0 and math.isfinite(self.kappa)):
            raise PulseError(f"kappa must be positive and finite, got {self.kappa}")

    def _shape(self, tau):
        pos = np.maximum(tau, 0.0)
        return np.where(tau >= 0, math.sqrt(self.kappa) * np.exp(-0.5 * self.kappa * pos), 0.0)

    def _cumulative(self, tau):
        return np.where(tau >= 0, -np.expm1(-self.kappa * np.maximum(tau, 0.0)), 0.0)

    def _survival(self, tau):
        return np.where(tau >= 0, np.exp(-self.kappa * np.maximum(tau, 0.0)), 1.0)

    def _window(self):
        return 0.0, -math.log(TRUNCATION) / self.kappa

    @property
    def rate_scale(self):
        return self.kappa

    def saturation_time(self):
        # g stays exactly sqrt(kappa): the exponential never needs clamping
        return math.inf

    def coupling(self, t):
        t = np.asarray(t, dtype=float)
        tau = t - self.delay
        g = np.where(tau >= 0, math.sqrt(self.kappa), 0.0).astype(complex)
        if self.detuning:
            g = g * np.exp(1j * self.detuning * tau)
        return g if g.ndim else complex(g)

    def log_emission(self, t):
        out = self.kappa * np.maximum(np.asarray(t, dtype=float) - self.delay, 0.0)
        return out if out.ndim else float(out)

    def spectrum_values(self, w):
        nu = w - self.detuning
        return (
            math.sqrt(self.kappa / (2 * math.pi))
            * np.exp(1j * w * self.delay)
            / (0.5 * self.kappa - 1j * nu)
        )


@dataclass(frozen=True)
class Gaussian(PulseEnvelope):
    """Real Gaussian amplitude whose intensity |u|^2 has standard deviation ``sigma``.

    Centre at ``mu + delay``; peak amplitude (2 pi sigma^2)^(-1/4).
    """

    sigma: float = 1.0
    mu: float = 0.0

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise PulseError(f"sigma must be positive and finite, got {self.sigma}")

    def _shape(self, tau):
        s = self.sigma
        return (2 * math.pi * s * s) ** -0.25 * np.exp(-((tau - self.mu) ** 2) / (4 * s * s))

    def _cumulative(self, tau):
        return special.ndtr((tau - self.mu) / self.sigma)

    def _survival(self, tau):
        return special.ndtr(-(tau - self.mu) / self.sigma)

    def _window(self):
        z = -special.ndtri(0.5 * TRUNCATION)
        return self.mu - z * self.sigma, self.mu + z * self.sigma

    @property
    def rate_scale(self):
        return 1.0 / self.sigma

    def saturation_time(self):
        z = -special.ndtri(EPS_G)
        return self.delay + self.mu + z * self.sigma

    def spectrum_values(self, w):
        s = self.sigma
        nu = w - self.detuning
        c = self.mu + self.delay
        pref = (2 * math.pi) ** -0.5 * (2 * math.pi * s * s) ** -0.25 * math.sqrt(4 * math.pi * s * s)
        return pref * np.exp(1j * self.detuning * self.delay + 1j * nu * c - (nu * s) ** 2)


@dataclass(frozen=True, eq=False)
class Tabulated(PulseEnvelope):
    """Piecewise-linear envelope through complex samples; zero outside the table.

    Tables within TABLE_RENORM_TOL of unit norm are renormalized, others rejected.
    """

    times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=complex))

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=complex)
        if times.ndim != 1 or times.shape != values.shape or times.size < 2:
            raise PulseError("tabulated pulse needs matching 1-D time and value arrays")
        if np.any(np.diff(times) <= 0):
            raise PulseError("tabulated times must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise PulseError("tabulated values must be finite")
        seg = _segment_norms(times, values)
        norm = float(seg.sum())
        if abs(norm - 1.0) > TABLE_RENORM_TOL:
            raise PulseError(f"tabulated pulse norm {norm:.6g} is not within {TABLE_RENORM_TOL} of 1")
        values = values / math.sqrt(norm)
        cum = np.concatenate([[0.0], np.cumsum(seg / norm)])
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_cum", cum)

    def _shape(self, tau):
        re = np.interp(tau, self.times, self.values.real, left=0.0, right=0.0)
        im = np.interp(tau, self.times, self.values.imag, left=0.0, right=0.0)
        return re + 1j * im

    def _cumulative(self, tau):
        tau = np.asarray(tau, dtype=float)
        t, v = self.times, self.values
        k = np.clip(np.searchsorted(t, tau, side="right") - 1, 0, t.size - 2)
        h = t[k + 1] - t[k]
        x = np.clip((tau - t[k]) / h, 0.0, 1.0)
        a, b = v[k], v[k + 1]
        d = b - a
        # exact int_0^x |a + d s|^2 ds * h
        part = h * (np.abs(a) ** 2 * x + np.real(a * d.conj()) * x**2 + np.abs(d) ** 2 * x**3 / 3)
        out = self._cum[k] + part
        out = np.where(tau <= t[0], 0.0, out)
        return np.where(tau >= t[-1], 1.0, out)

    def _window(self):
        return float(self.times[0]), float(self.times[-1])

    @property
    def rate_scale(self):
        # inverse of the rms duration
        tt = self.times
        w = _segment_norms(tt, self.values)
        mid = 0.5 * (tt[1:] + tt[:-1])
        mean = float(np.sum(w * mid))
        var = float(np.sum(w * (mid - mean) ** 2))
        return 1.0 / max(math.sqrt(var), float(np.min(np.diff(tt))))

    @classmethod
    def from_function(cls, f: Callable, t0: float, t1: float, n: int = 4001, **kw) -> "Tabulated":
        t = np.linspace(t0, t1, n)
        v = np.asarray(f(t), dtype=complex)
        v = v / math.sqrt(float(_segment_norms(t, v).sum()))
        return cls(times=t, values=v, **kw)

    @classmethod
    def from_csv(cls, path: str | Path, **kw) -> "Tabulated":
        """Load (time, Re u, Im u) rows; a header line is skipped if present."""
        rows = []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    vals = [float(x) for x in row[:3]]
                except ValueError:
                    continue
                if len(vals) == 2:
                    vals.append(0.0)
                rows.append(vals)
        arr = np.asarray(rows, dtype=float)
        if arr.ndim != 2 or arr.shape[0] < 2:
            raise PulseError(f"{path}: need at least two (time, Re, Im) rows")
        return cls(times=arr[:, 0], values=arr[:, 1] + 1j * arr[:, 2], **kw)

    def spectrum_values(self, w):
        # exact transform of the piecewise-linear interpolant
        t, v = self.times + self.delay, self.values
        w = np.atleast_1d(np.asarray(w, dtype=float))
        out = np.empty(w.shape, dtype=complex)
        h = np.diff(t)
        for i in range(0, w.size, 256):
            ww = w[i : i + 256, None]
            nu = ww - self.detuning
            x = nu * h
            e0 = np.exp(1j * nu * t[:-1])
            # int_0^h (a + (b-a) s/h) e^{i nu s} ds in closed form, with series near 0
            small = np.abs(x) < 1e-4
            xs = np.where(small, 1.0, x)
            i0 = np.where(small, h * (1 + 0.5j * x), (np.exp(1j * xs) - 1) / (1j * xs) * h)
            i1 = np.where(
                small,
                h * (0.5 + 1j * x / 3),
                h * (np.exp(1j * xs) / (1j * xs) + (np.exp(1j * xs) - 1) / xs**2),
            )
            seg = e0 * (v[:-1] * i0 + (v[1:] - v[:-1]) * i1)
            out[i : i + 256] = seg.sum(axis=1) * np.exp(1j * self.detuning * self.delay)
        return out / math.sqrt(2 * math.pi)


def _segment_norms(t: np.ndarray, v: np.ndarray) -> np.ndarray:
    a, b = v[:-1], v[1:]
    return np.diff(t) * (np.abs(a) ** 2 + np.real(a * b.conj()) + np.abs(b) ** 2) / 3.0


def check_normalized(pulse: PulseEnvelope, tol: float = NORM_TOL) -> float:
    """Quadrature of |u|^2 over the support; raises if off unit norm by more than tol."""
    a, b = pulse.support()
    pts = [a, b]
    if isinstance(pulse, Tabulated):
        pts = list(pulse.times + pulse.delay)
    n = float(
        integrate.quad(
            lambda t: abs(pulse.amplitude(t)) ** 2,
            a,
            b,
            points=pts[1:-1][:50] if len(pts) > 2 else None,
            limit=500,
            epsabs=1e-13,
            epsrel=1e-12,
        )[0]
    )
    if abs(n - 1.0) > tol:
        raise PulseError(f"pulse norm {n:.12g} differs from 1 by more than {tol}")
    return n


def amplitude(pulse: PulseEnvelope, t):
    return pulse.amplitude(t)


def spectrum(pulse: PulseEnvelope, grid) -> SpectralAmplitude:
    """Spectral amplitude on ``grid`` (uniform angular-frequency samples)."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 3:
        raise SpectralGridError("spectral grid needs at least three points")
    dw = float(np.max(np.diff(grid)))
    extent = _effective_extent(pulse)
    if dw * extent > math.pi:
        raise SpectralGridError(
            f"spectral grid too coarse: dw={dw:.3g} cannot resolve a pulse reaching |t|={extent:.3g}"
        )
    return SpectralAmplitude(grid, pulse.spectrum_values(grid))


def _effective_extent(pulse: PulseEnvelope) -> float:
    a, b = pulse.support()
    # window holding all but 1e-6 of the norm
    lo = _bisect(lambda t: pulse.cumulative(t) - 5e-7, a, b) if pulse.cumulative(a) < 5e-7 else a
    hi = _bisect(lambda t: pulse.remaining(t) - 5e-7, a, b) if pulse.remaining(b) < 5e-7 else b
    return max(abs(lo), abs(hi), hi - lo)


def coupling_from_envelope(pulse: PulseEnvelope, t):
    """g(t) = u*(t) / sqrt(1 - int^t |u|^2), clamped to 0 once the cavity is empty."""
    if type(pulse).coupling is not PulseEnvelope.coupling:
        return pulse.coupling(t)
    t = np.asarray(t, dtype=float)
    rem = np.asarray(pulse.remaining(t), dtype=float)
    ts = pulse.saturation_time()
    u = np.asarray(pulse.amplitude(t), dtype=complex)
    ok = (t < ts) & (rem > 0)
    g = np.where(ok, np.conj(u) / np.sqrt(np.where(ok, rem, 1.0)), 0.0)
    return g if g.ndim else complex(g)


def envelope_from_coupling(g: Callable, t, t0: float, n: int = 20001) -> np.ndarray | complex:
    """u(t) = g*(t) exp(-1/2 int_{t0}^t |g|^2) for a coupling function ``g``."""
    t = np.asarray(t, dtype=float)
    t_max = float(np.max(t)) if t.size else t0
    if t_max <= t0:
        out = np.where(t >= t0, np.conj(np.asarray(g(t), dtype=complex)), 0.0)
        return out if out.ndim else complex(out)
    fine = np.linspace(t0, t_max, n)
    dens = np.abs(np.asarray(g(fine), dtype=complex)) ** 2
    cum = integrate.cumulative_simpson(dens, x=fine, initial=0.0)
    c = np.interp(t, fine, cum, left=0.0)
    out = np.where(t >= t0, np.conj(np.asarray(g(t), dtype=complex)) * np.exp(-0.5 * c), 0.0)
    return out if out.ndim else complex(out)
