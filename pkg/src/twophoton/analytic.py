"""Detection probabilities from closed forms and quadrature.

Two independent routes are provided for the two-photon probability:

* spectral: P_alpha, P_beta and the overlap correction from the pulse spectra
  and the transmission amplitudes T1, T2 (principal-value convolution);
* temporal: nested Green's-function integrals in the time domain, evaluated
  by exponential-integrating-factor recursions on a uniform grid.

Spectral convention: u(w) = (2 pi)^(-1/2) int u(t) e^{i w t} dt, frequencies
measured from the molecular resonance.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, signal

from .model import MoleculeParams
from .pulses import ExponentialDecay, Gaussian, PulseEnvelope, SpectralGridError, _effective_extent

log = logging.getLogger(__name__)

TAIL_WEIGHT = 1e-6
PV_TOL = 1e-5


class PrincipalValueError(ArithmeticError):
    pass


# ---------------------------------------------------------------- transmission


def transmission(which: int, w, params: MoleculeParams):
    """T1 (which=1, rates g1,g2) or T2 (which=2, rates g3,g4) at detuning ``w``."""
    if which == 1:
        ga, gb = params.gamma1, params.gamma2
    elif which == 2:
        ga, gb = params.gamma3, params.gamma4
    else:
        raise ValueError("which must be 1 or 2")
    w = np.asarray(w, dtype=float)
    out = math.sqrt(ga * gb) / ((ga + gb) / 2 - 1j * w)
    return out if out.ndim else complex(out)


def p_exponential_closed_form(kappa: float, ga: float, gb: float) -> float:
    """Absorption probability of an undetuned exponential pulse: 4 ga gb / ((ga+gb)(kappa+ga+gb))."""
    return 4 * ga * gb / ((ga + gb) * (kappa + ga + gb))


# ---------------------------------------------------------------- spectral grid


@dataclass(frozen=True)
class SpectralGrid:
    w: np.ndarray

    @property
    def dw(self) -> float:
        return float(self.w[1] - self.w[0])

    @property
    def half_width(self) -> float:
        return float(self.w[-1])


def _pulse_rates(p: PulseEnvelope) -> list[float]:
    if isinstance(p, Gaussian):
        return [1.0 / p.sigma]
    if isinstance(p, ExponentialDecay):
        return [p.kappa]
    return [p.rate_scale]


def spectral_grid(params: MoleculeParams, *pulses: PulseEnvelope, span: float = 40.0, resolution: float = 40.0) -> SpectralGrid:
    """Uniform symmetric grid: half-width >= span x fastest rate, step <= slowest rate / resolution."""
    rates = list(params.gammas)
    for p in pulses:
        rates += _pulse_rates(p)
    shift = max([abs(p.detuning) for p in pulses] + [0.0])
    half = span * max(rates)
    # exponential onsets leave |u|^2 ~ kappa / (2 pi w^2); size the grid so the
    # w^-4 tail of the absorption integrand stays a decade below TAIL_WEIGHT
    coupling = max(params.gamma1 * params.gamma2, params.gamma3 * params.gamma4)
    for p in pulses:
        if isinstance(p, ExponentialDecay):
            half = max(half, (10.0 * p.kappa * coupling / (3.0 * math.pi * TAIL_WEIGHT)) ** (1 / 3))
    half += shift
    dw = min(rates) / resolution
    extent = max(_effective_extent(p) for p in pulses)
    # the discrete principal value carries an error growing with dw x (time offset)
    dw = min(dw, 0.1 / extent)
    n = int(math.ceil(half / dw))
    return SpectralGrid(dw * np.arange(-n, n + 1))


def _check_tails(w, dens, what: str) -> float:
    """Estimate weight beyond the grid assuming at least w^-4 decay; raise if too large."""
    tail = (abs(dens[0]) + abs(dens[-1])) * abs(w[-1]) / 3.0
    if tail > TAIL_WEIGHT:
        raise SpectralGridError(f"{what}: spectral tails beyond the grid carry weight {tail:.2e}")
    return tail


def _absorption(which: int, pulse: PulseEnvelope, params: MoleculeParams, grid: SpectralGrid | None):
    grid = grid or spectral_grid(params, pulse)
    dens = np.abs(pulse.spectrum_values(grid.w)) ** 2 * np.abs(transmission(which, grid.w, params)) ** 2
    tail = _check_tails(grid.w, dens, f"P{'ab'[which - 1]}")
    # tails beyond the grid fall off as w^-4 for every supported pulse; add them
    return float(integrate.trapezoid(dens, grid.w) + tail)


def p_alpha(pulse: PulseEnvelope, params: MoleculeParams, grid: SpectralGrid | None = None) -> float:
    """int |u(w)|^2 |T1(w)|^2 dw."""
    return _absorption(1, pulse, params, grid)


def p_beta(pulse: PulseEnvelope, params: MoleculeParams, grid: SpectralGrid | None = None) -> float:
    """int |u(w)|^2 |T2(w)|^2 dw (absorption of beta with the molecule already in F2)."""
    return _absorption(2, pulse, params, grid)


# ---------------------------------------------------------------- overlap term


def f1_spectrum(pulse: PulseEnvelope, params: MoleculeParams, grid: SpectralGrid | None = None):
    """(lags, F1) with F1(w) = (2 pi)^(-1/2) int dx T1(w+x) u(w+x) T1*(x) u*(x).

    Lags run over -2W..2W on the grid spacing. F1 is the normalized transform of
    g2 * P1(t), the rate at which F2 is filled.
    """
    grid = grid or spectral_grid(params, pulse)
    a = transmission(1, grid.w, params) * pulse.spectrum_values(grid.w)
    _check_tails(grid.w, np.abs(a) ** 2, "F1")
    # corr[k] = sum_x a(x + k dw) a*(x)
    corr = signal.fftconvolve(a, np.conj(a[::-1]), mode="full")
    n = grid.w.size
    lags = grid.dw * np.arange(-(n - 1), n)
    return lags, corr * grid.dw / math.sqrt(2 * math.pi)


def _centre_weight(eps: float, dx: float) -> float:
    """Share of the x = 0 cell missing from the regularized Riemann sum."""
    if eps == 0:
        return 1.0
    return 1.0 - (2 * eps / dx) * math.atan(dx / (2 * eps))


def _pv_kernel(lags, f1, eps: float):
    """P[F1(x)/(ix)] sampled on the lag grid, regularized by eps (x = 0 sample zero)."""
    k = np.zeros_like(lags)
    nz = lags != 0
    k[nz] = lags[nz] / (lags[nz] ** 2 + eps**2)
    return -1j * f1 * k


def _p_ab_at(eps, pb, params, grid, lags, f1):
    ub = pb.spectrum_values(grid.w)
    kern = _pv_kernel(lags, f1, eps)
    # G(w) = int dx u_b(w - x) K(x); w on grid, x on lags
    conv = signal.fftconvolve(ub, kern, mode="full") * grid.dw
    n = grid.w.size
    # index of w_i in full output: i + (n - 1)
    G = conv[n - 1 : 2 * n - 1]
    # the symmetric sum skips the x = 0 cell, whose principal-value content is
    # dx * d/dx[-i u_b(w - x) F1(x)] at x = 0
    mid = lags.size // 2
    df1 = (f1[mid + 1] - f1[mid - 1]) / (2 * grid.dw)
    dub = np.gradient(ub, grid.dw, edge_order=2)
    G = G + _centre_weight(eps, grid.dw) * grid.dw * (-1j) * (ub * df1 - dub * f1[mid])
    pref = math.sqrt(params.gamma3 * params.gamma4) / (math.sqrt(2 * math.pi) * params.gamma_beta)
    val = pref * integrate.trapezoid(np.conj(ub) * transmission(2, grid.w, params) * G, grid.w)
    return float(2 * np.real(val))


def p_ab(pa: PulseEnvelope, pb: PulseEnvelope, params: MoleculeParams, grid: SpectralGrid | None = None, max_halvings: int = 40) -> float:
    """Cross term P^{ab} of the overlap correction, principal value by an eps sweep.

    eps starts at the grid step and is halved until two successive values
    differ by less than 1e-5. The regularization error is then linear in eps,
    so the last pair is extrapolated to eps = 0 as 2 P(eps/2) - P(eps).
    """
    grid = grid or spectral_grid(params, pa, pb)
    _check_tails(grid.w, np.abs(pb.spectrum_values(grid.w) * transmission(2, grid.w, params)) ** 2, "P_ab")
    lags, f1 = f1_spectrum(pa, params, grid)
    eps = grid.dw
    prev = _p_ab_at(eps, pb, params, grid, lags, f1)
    for _ in range(max_halvings):
        eps /= 2
        cur = _p_ab_at(eps, pb, params, grid, lags, f1)
        if abs(cur - prev) < PV_TOL:
            return 2 * cur - prev
        prev = cur
    raise PrincipalValueError("principal value not converged")


def p_overlap(pa: PulseEnvelope, pb: PulseEnvelope, params: MoleculeParams, grid: SpectralGrid | None = None) -> float:
    """P_overlap = P_alpha P_beta / 2 + P^{ab}."""
    grid = grid or spectral_grid(params, pa, pb)
    return 0.5 * p_alpha(pa, params, grid) * p_beta(pb, params, grid) + p_ab(pa, pb, params, grid)


@dataclass
class TwoPhotonSpectral:
    p_alpha: float
    p_beta: float
    p_overlap: float

    @property
    def rho_2424(self) -> float:
        return self.p_alpha * self.p_beta - self.p_overlap


def two_photon_spectral(pa, pb, params: MoleculeParams, grid: SpectralGrid | None = None) -> TwoPhotonSpectral:
    grid = grid or spectral_grid(params, pa, pb)
    A, B = p_alpha(pa, params, grid), p_beta(pb, params, grid)
    return TwoPhotonSpectral(A, B, 0.5 * A * B + p_ab(pa, pb, params, grid))


# ---------------------------------------------------------------- time domain


def _exp_weights(lam: float, h: float):
    """Weights (a, b) with int_0^h e^{-lam (h-s)} w(s) ds ~ a w(0) + b w(h), exact for linear w."""
    x = lam * h
    if x < 1e-6:
        return h * (0.5 - x / 6), h * (0.5 - x / 3)
    e = math.exp(-x)
    q = (1 - e) / x
    return (q - e) / lam, (1 - q) / lam


def _relax(lam: float, h: float, w_left: np.ndarray, w_right: np.ndarray) -> np.ndarray:
    """z' = -lam z + w on a uniform grid, z(t0) = 0; one-sided cell samples of w."""
    a, b = _exp_weights(lam, h)
    drive = np.zeros(w_left.size + 1, dtype=complex)
    drive[1:] = a * w_left + b * w_right
    return signal.lfilter([1.0], [1.0, -math.exp(-lam * h)], drive)


@dataclass
class TimeQuadrature:
    t: np.ndarray
    rho_a2a2: np.ndarray
    rho_2424: np.ndarray | None = None
    rho_2424_inf: float | None = None


def _time_grid(pulses, params, t0, t1, step):
    onsets = sorted({p.support()[0] for p in pulses if p is not None})
    t0 = onsets[0] if t0 is None else t0
    if t1 is None:
        t1 = max(p.support()[1] for p in pulses if p is not None)
        t1 += math.log(1e9) / min(params.gamma_alpha, params.gamma_beta)
    rates = list(params.gammas) + [r for p in pulses if p is not None for r in _pulse_rates(p)]
    h = step or 1.0 / (400.0 * max(rates))
    # keep every later pulse onset on the grid
    for s in onsets:
        if s > t0:
            n = math.ceil((s - t0) / h)
            h = (s - t0) / n
            break
    n = int(math.ceil((t1 - t0) / h))
    return t0 + h * np.arange(n + 1), h


def _sides(p, t, h):
    """Samples of u just inside each cell: right limit at the left end, left limit at the right end."""
    d = 1e-9 * h
    return np.asarray(p.amplitude(t[:-1] + d), dtype=complex), np.asarray(p.amplitude(t[1:] - d), dtype=complex)


def rho_a2a2_quadrature(pulse: PulseEnvelope, params: MoleculeParams, t=None, t0: float | None = None, step: float | None = None) -> TimeQuadrature | float:
    """F2 population after a single alpha photon.

    rho(t) = int^t dt' |b(t')|^2,  b(t') = sqrt(g1 g2) int^{t'} e^{-(g1+g2)(t'-s)/2} u(s) ds.
    With ``t`` given the value at that time is returned, otherwise the whole grid.
    """
    t_end = None if t is None else float(t)
    if t_end is not None and t0 is not None and t_end <= t0:
        return 0.0
    grid, h = _time_grid([pulse], params, t0, t_end, step)
    if t_end is not None and t_end <= grid[0]:
        return 0.0
    ul, ur = _sides(pulse, grid, h)
    b = math.sqrt(params.gamma1 * params.gamma2) * _relax(params.gamma_alpha / 2, h, ul, ur)
    y = integrate.cumulative_trapezoid(np.abs(b) ** 2, grid, initial=0.0)
    if t_end is not None:
        # the grid may step past t_end; the cumulative integral is smooth there
        return float(np.interp(t_end, grid, y))
    return TimeQuadrature(grid, y)


def rho_2424_quadrature(pa: PulseEnvelope, pb: PulseEnvelope, params: MoleculeParams, t0: float | None = None, T: float | None = None, step: float | None = None) -> TimeQuadrature:
    """F4 population through the nested integrals, with rho_a2a2 fed in at every grid point.

    q(t) = int^t e^{-G(t-s)/2} u_b(s) y(s) ds,  r(t) = int^t e^{-G(t-s)} u_b*(s) q(s) ds,
    rho_2424(t) = 2 g3 g4 Re int^t r,  rho_2424(inf) = (2 g3 g4 / G) Re int u_b* q,
    G = g3 + g4, y = rho_a2a2.
    """
    grid, h = _time_grid([pa, pb], params, t0, T, step)
    ual, uar = _sides(pa, grid, h)
    b = math.sqrt(params.gamma1 * params.gamma2) * _relax(params.gamma_alpha / 2, h, ual, uar)
    y = integrate.cumulative_trapezoid(np.abs(b) ** 2, grid, initial=0.0)
    ubl, ubr = _sides(pb, grid, h)
    G = params.gamma_beta
    q = _relax(G / 2, h, ubl * y[:-1], ubr * y[1:])
    qub_l, qub_r = np.conj(ubl) * q[:-1], np.conj(ubr) * q[1:]
    r = _relax(G, h, qub_l, qub_r)
    rho = 2 * params.gamma3 * params.gamma4 * integrate.cumulative_trapezoid(np.real(r), grid, initial=0.0)
    tail = (2 * params.gamma3 * params.gamma4 / G) * float(np.real(0.5 * h * np.sum(qub_l + qub_r)))
    return TimeQuadrature(grid, y, rho, tail)


def rho_2424_inf(pa, pb, params: MoleculeParams, step: float | None = None) -> float:
    return float(rho_2424_quadrature(pa, pb, params, step=step).rho_2424_inf)


@functools.lru_cache(maxsize=256)
def _cached_spectral(pa, pb, params):
    return two_photon_spectral(pa, pb, params)


def consistency(pa, pb, params: MoleculeParams) -> dict[str, float]:
    """Spectral vs temporal two-photon probability."""
    s = _cached_spectral(pa, pb, params)
    tq = rho_2424_inf(pa, pb, params)
    return {"spectral": s.rho_2424, "temporal": tq, "difference": s.rho_2424 - tq}
