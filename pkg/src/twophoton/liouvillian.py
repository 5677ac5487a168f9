"""Virtual-cavity master equation on the 20-dimensional system space.

Two one-photon cavities a1, a2 leak through time-dependent couplings g1(t),
g2(t) into the input continua, which are cascaded onto the molecule. The
continua are traced out, leaving

    d rho / dt = -i [H(t), rho] + sum_X D_X[rho]

with collapse operators

    X1 = g1*(t) a1 + sqrt(g1) |F0><F1|      X2 = g2*(t) a2 + sqrt(g3) |F2><F3|
    Xg = sqrt(g2) |F2><F1|                  Xh = sqrt(g4) |F4><F3|

and the cascade term H = (i/2) sum_k (g_k a_k^+ c_k - g_k^* c_k^+ a_k), where
c_1 = sqrt(g1)|F0><F1| and c_2 = sqrt(g3)|F2><F3|.

Basis ordering is |n1> (x) |n2> (x) |F_k>, cavity 1 slowest, level fastest:
index = (2 n1 + n2) * 5 + k.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy import integrate as spi

from . import _ode
from .gdm import _breakpoints, _fine_windows, default_dt, steady_window
from .model import NLEVELS, MoleculeParams, sigma
from .pulses import ExponentialDecay, PulseEnvelope

log = logging.getLogger(__name__)

DIM = 2 * 2 * NLEVELS
TRACE_ABORT = 1e-4

_LOWER = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
_I2 = np.eye(2, dtype=complex)
_I5 = np.eye(NLEVELS, dtype=complex)


def _on_cavity1(op):
    return np.kron(op, np.kron(_I2, _I5))


def _on_cavity2(op):
    return np.kron(_I2, np.kron(op, _I5))


def _on_molecule(op):
    return np.kron(_I2, np.kron(_I2, op))


A1 = _on_cavity1(_LOWER)
A2 = _on_cavity2(_LOWER)
N1 = A1.conj().T @ A1
N2 = A2.conj().T @ A2


def level_projector(k: int) -> np.ndarray:
    return _on_molecule(sigma(k, k))


def basis_index(n1: int, n2: int, k: int) -> int:
    return (2 * n1 + n2) * NLEVELS + k


@dataclass
class CollapseSet:
    x1: np.ndarray
    x2: np.ndarray
    xg: np.ndarray
    xh: np.ndarray

    def __iter__(self):
        return iter((self.x1, self.x2, self.xg, self.xh))


def _molecular_channels(params: MoleculeParams):
    g1, g2, g3, g4 = params.gammas
    c1 = _on_molecule(math.sqrt(g1) * sigma(0, 1))
    c2 = _on_molecule(math.sqrt(g3) * sigma(2, 3))
    cg = _on_molecule(math.sqrt(g2) * sigma(2, 1))
    ch = _on_molecule(math.sqrt(g4) * sigma(4, 3))
    return c1, c2, cg, ch


def build_operators(params: MoleculeParams, t: float, couplings: tuple[complex, complex]) -> tuple[CollapseSet, np.ndarray]:
    """Collapse operators and Hamiltonian at time ``t`` for coupling values (g1, g2)."""
    g1, g2 = (complex(g) for g in couplings)
    c1, c2, cg, ch = _molecular_channels(params)
    x1 = np.conj(g1) * A1 + c1
    x2 = np.conj(g2) * A2 + c2
    h = _on_molecule(params.hamiltonian())
    for g, a, c in ((g1, A1, c1), (g2, A2, c2)):
        h = h + 0.5j * (g * a.conj().T @ c - np.conj(g) * c.conj().T @ a)
    return CollapseSet(x1, x2, cg, ch), h


def master_rhs(t: float, rho: np.ndarray, ops: tuple[CollapseSet, np.ndarray]) -> np.ndarray:
    """-i[H, rho] + sum_X D_X[rho] with the operators from ``build_operators``."""
    jumps, h = ops
    out = -1j * (h @ rho - rho @ h)
    for x in jumps:
        xd = x.conj().T
        xdx = xd @ x
        out = out + x @ rho @ xd - 0.5 * (xdx @ rho + rho @ xdx)
    return out


def vec(rho: np.ndarray) -> np.ndarray:
    """Column-stacking vectorization."""
    rho = np.asarray(rho)
    return np.swapaxes(rho, -1, -2).reshape(rho.shape[:-2] + (-1,))


def unvec(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v)
    return np.swapaxes(v.reshape(v.shape[:-1] + (DIM, DIM)), -1, -2)


def _spre(a):
    return np.kron(np.eye(a.shape[0]), a)


def _spost(b):
    return np.kron(b.T, np.eye(b.shape[0]))


def _sandwich(a, b):
    """Superoperator of rho -> a rho b (column stacking)."""
    return np.kron(b.T, a)


def _dissipator(x):
    xdx = x.conj().T @ x
    return _sandwich(x, x.conj().T) - 0.5 * _spre(xdx) - 0.5 * _spost(xdx)


@functools.lru_cache(maxsize=32)
def superoperators(params: MoleculeParams) -> dict[str, sp.csr_matrix]:
    """Generator pieces: L(t) = L0 + sum_k (g_k Ak + g_k^* Ak_c + |g_k|^2 Bk)."""
    c1, c2, cg, ch = _molecular_channels(params)
    h0 = _on_molecule(params.hamiltonian())
    l0 = -1j * (_spre(h0) - _spost(h0))
    for c in (c1, c2, cg, ch):
        l0 = l0 + _dissipator(c)
    out = {"L0": l0}
    for k, (a, c) in enumerate(((A1, c1), (A2, c2)), start=1):
        ad, cd = a.conj().T, c.conj().T
        # g terms: c rho a^+ - rho a^+ c ;  g^* terms: a rho c^+ - c^+ a rho
        out[f"A{k}"] = _sandwich(c, ad) - _spost(ad @ c)
        out[f"A{k}c"] = _sandwich(a, cd) - _spre(cd @ a)
        out[f"B{k}"] = _dissipator(a)
    return {k: sp.csr_matrix(np.where(np.abs(v) < 1e-15, 0, v)) for k, v in out.items()}


def generator(params: MoleculeParams, g1: complex, g2: complex) -> np.ndarray:
    """Dense 400x400 generator for fixed coupling values."""
    s = superoperators(params)
    m = s["L0"].toarray()
    for k, g in ((1, g1), (2, g2)):
        if g:
            m = m + g * s[f"A{k}"].toarray() + np.conj(g) * s[f"A{k}c"].toarray() + abs(g) ** 2 * s[f"B{k}"].toarray()
    return m


def initial_state() -> np.ndarray:
    """Both cavities hold one photon, molecule in F0."""
    rho = np.zeros((DIM, DIM), dtype=complex)
    i = basis_index(1, 1, 0)
    rho[i, i] = 1.0
    return rho


def expectation(op: np.ndarray, rho: np.ndarray) -> complex | np.ndarray:
    """Tr(op rho); broadcasts over a leading time axis."""
    val = np.einsum("ij,...ji->...", op, rho)
    return val if np.ndim(val) else complex(val)


@dataclass
class LiouvillianTrajectory:
    times: np.ndarray
    rho: np.ndarray  # (n, 20, 20)
    couplings: np.ndarray  # (n, 2) complex g1, g2 at the sample times
    params: MoleculeParams
    clamp_events: list[tuple[int, float]] = field(default_factory=list)
    pulses: tuple = (None, None)

    def populations(self) -> np.ndarray:
        d = np.real(np.diagonal(self.rho, axis1=-2, axis2=-1)).reshape(-1, 4, NLEVELS)
        return np.clip(d.sum(axis=1), -1e-8, 1 + 1e-8)

    def cavity_occupations(self) -> np.ndarray:
        return np.real(np.stack([expectation(N1, self.rho), expectation(N2, self.rho)], axis=-1))

    def expectation(self, op: np.ndarray) -> np.ndarray:
        return expectation(op, self.rho)

    @property
    def final(self) -> np.ndarray:
        return self.rho[-1]


def _constant_coupling(p: PulseEnvelope | None) -> bool:
    return p is None or (isinstance(p, ExponentialDecay) and p.detuning == 0.0)


def _coupling_values(pulses, t):
    return tuple(0j if p is None else complex(p.coupling(t)) for p in pulses)


def _trace_check(y, t):
    tr = np.trace(unvec(y))
    if not math.isfinite(abs(tr)) or abs(tr - 1.0) > TRACE_ABORT:
        raise _ode.IntegrationError(f"integrator unstable, reduce dt (trace {tr:.6g} at t={t:.4g})")
    # the trace survives RK4 exactly; a density matrix has no entry above one
    peak = float(np.max(np.abs(y)))
    if not math.isfinite(peak) or peak > 1.0 + TRACE_ABORT:
        raise _ode.IntegrationError(f"integrator unstable, reduce dt (matrix entry {peak:.3g} at t={t:.4g})")


def integrate(
    t0: float,
    T: float,
    dt: float | None,
    pulses: Sequence[PulseEnvelope | None],
    params: MoleculeParams,
    method: str = "rk4",
    vectorized: bool = True,
    initial: np.ndarray | None = None,
    rtol: float = 1e-10,
    atol: float = 1e-14,
) -> LiouvillianTrajectory:
    """Integrate from |1,1><1,1| (x) |F0><F0| over [t0, T].

    ``method``: ``"rk4"`` (fixed step), ``"adaptive"`` (DOP853) or ``"expm"``
    (exact propagators; only for piecewise-constant couplings, i.e. undetuned
    exponential pulses). ``vectorized=False`` steps the 20x20 matrix equation
    directly instead of the 400-component superoperator form.
    """
    if dt is None:
        dt = default_dt(params, pulses)
    pa, pb = pulses
    rho0 = initial_state() if initial is None else np.asarray(initial, dtype=complex)
    bps = _breakpoints(pulses)
    times = _ode.step_times(t0, T, dt, bps, _fine_windows(pulses))
    clamps = []
    for k, p in enumerate(pulses, start=1):
        if p is not None and t0 < p.saturation_time() < T:
            clamps.append((k, p.saturation_time()))
            log.info("cavity %d coupling clamped to 0 after t=%.6g (pulse emission saturated)", k, p.saturation_time())

    s = superoperators(params)

    def fun_vec(t, y):
        g1, g2 = _coupling_values((pa, pb), t)
        out = s["L0"] @ y
        if g1:
            out += g1 * (s["A1"] @ y) + np.conj(g1) * (s["A1c"] @ y) + abs(g1) ** 2 * (s["B1"] @ y)
        if g2:
            out += g2 * (s["A2"] @ y) + np.conj(g2) * (s["A2c"] @ y) + abs(g2) ** 2 * (s["B2"] @ y)
        return out

    def fun_mat(t, r):
        return master_rhs(t, r, build_operators(params, t, _coupling_values((pa, pb), t)))

    if method == "expm":
        if not (_constant_coupling(pa) and _constant_coupling(pb)):
            raise ValueError("expm path needs piecewise-constant couplings (undetuned exponential pulses)")
        ys = _expm_propagate(params, pulses, vec(rho0), times)
    elif method == "rk4":
        if vectorized:
            ys = _ode.rk4(fun_vec, vec(rho0), times, check=_every(200, _trace_check))
        else:
            ys = vec(_ode.rk4(fun_mat, rho0, times))
    elif method == "adaptive":
        ys = _ode.adaptive(fun_vec, vec(rho0), times, bps, rtol=rtol, atol=atol)
    else:
        raise ValueError(f"unknown method {method!r}")
    _trace_check(ys[-1], times[-1])
    g = np.stack([_coupling_at(p, times) for p in pulses], axis=-1)
    return LiouvillianTrajectory(times, unvec(ys), g, params, clamps, tuple(pulses))


def _coupling_at(p, times):
    if p is None:
        return np.zeros(times.shape, dtype=complex)
    return np.asarray(p.coupling(times), dtype=complex)


def _every(n, fn):
    count = [0]

    def wrapped(t, y):
        count[0] += 1
        if count[0] % n == 0:
            fn(y, t)

    return wrapped


def _expm_propagate(params, pulses, y0, times):
    out = np.empty((times.size, y0.size), dtype=complex)
    out[0] = y0
    y = y0
    cache: dict[tuple, np.ndarray] = {}
    for i in range(times.size - 1):
        t, h = times[i], times[i + 1] - times[i]
        tm = t + 0.5 * h
        g = _coupling_values(pulses, tm)
        key = (round(h, 12), g)
        prop = cache.get(key)
        if prop is None:
            prop = la.expm(generator(params, *g) * h)
            cache[key] = prop
        y = prop @ y
        out[i + 1] = y
    return out


def steady_state(pulses, params: MoleculeParams, dt: float | None = None, method: str = "rk4") -> LiouvillianTrajectory:
    t0, T = steady_window(params, pulses)
    return integrate(t0, T, dt, pulses, params, method=method)


@dataclass
class FluxReport:
    fluxes: dict[str, float]
    residuals: dict[str, float]
    flagged: list[str]
    tolerance: float

    @property
    def ok(self) -> bool:
        return not self.flagged


def flux_balance_report(traj: LiouvillianTrajectory, tol: float = 1e-4) -> FluxReport:
    """Integrated jump fluxes per channel and the reduced conservation identities.

    (i)   int<X1+X1> + g2 int P1 = -[n1 + P1]
    (ii)  g2 int P1 = [P2 + P3 + P4]
    (iii) g4 int P3 = [P4]
    (iv)  int<X2+X2> + g4 int P3 = -[n2 + P3]

    with [f] = f(end) - f(start). From a full-cavity start and at steady state
    the right-hand sides reduce to 1, P2+P4, P4, 1.
    """
    p = traj.params
    t = traj.times
    pops = np.real(np.diagonal(traj.rho, axis1=-2, axis2=-1)).reshape(-1, 4, NLEVELS).sum(axis=1)
    n = traj.cavity_occupations()
    flux = {}
    pieces = _pieces(t, _breakpoints(traj.pulses))
    for name, k in (("X1", 0), ("X2", 1)):
        c = _molecular_channels(p)[k]
        a = (A1, A2)[k]
        # <X^+X> = |g|^2 <a^+a> + 2 Re(g <a^+ c>) + <c^+c>
        adc = expectation(a.conj().T @ c, traj.rho)
        cdc = np.real(expectation(c.conj().T @ c, traj.rho))
        flux[name] = 0.0
        for sl in pieces:
            g = _one_sided_coupling(traj.pulses[k], t[sl])
            dens = np.abs(g) ** 2 * n[sl, k] + 2 * np.real(g * adc[sl]) + cdc[sl]
            flux[name] += _integral(t[sl], dens)
    flux["Xg"] = p.gamma2 * sum(_integral(t[sl], pops[sl, 1]) for sl in pieces)
    flux["Xh"] = p.gamma4 * sum(_integral(t[sl], pops[sl, 3]) for sl in pieces)
    dp = pops[-1] - pops[0]
    dn = n[-1] - n[0]
    residuals = {
        "i": flux["X1"] + flux["Xg"] + dn[0] + dp[1],
        "ii": flux["Xg"] - (dp[2] + dp[3] + dp[4]),
        "iii": flux["Xh"] - dp[4],
        "iv": flux["X2"] + flux["Xh"] + dn[1] + dp[3],
    }
    flagged = [k for k, v in residuals.items() if abs(v) > tol]
    return FluxReport(flux, {k: float(v) for k, v in residuals.items()}, flagged, tol)


def _pieces(t, bps):
    """Index slices of ``t`` between consecutive breakpoints (endpoints shared)."""
    cuts = [0] + sorted({int(np.argmin(np.abs(t - b))) for b in bps if t[0] < b < t[-1]}) + [t.size - 1]
    return [slice(a, b + 1) for a, b in zip(cuts[:-1], cuts[1:]) if b > a]


def _one_sided_coupling(p, ts):
    """Coupling on a closed piece, evaluated just inside its ends."""
    if p is None:
        return np.zeros(ts.shape, dtype=complex)
    h = 1e-9 * max(ts[-1] - ts[0], 1e-300)
    inner = np.clip(ts, ts[0] + h, ts[-1] - h)
    return np.asarray(p.coupling(inner), dtype=complex)


def _integral(t, y):
    if t.size < 3:
        return float(np.trapezoid(y, t))
    return float(spi.simpson(y, x=t))
