"""Generalized-density-matrix hierarchy for two single-photon inputs.

``rho[i, j]`` is the molecular operator obtained by evolving the molecule
together with the field state |Psi_i><Psi_j|, with i, j in {0, a, b, 2}: vacuum,
photon alpha only, photon beta only, and both photons. Only ten blocks are
independent; the other six are adjoints. ``rho[2, 2]`` is the physical state.

Photon alpha couples through c_a = sqrt(g1)|F0><F1| and photon beta through
c_b = sqrt(g3)|F2><F3|. Each block obeys

    d/dt rho[i,j] = L rho[i,j]
                    + sum_{k in i} u_k   [rho[i-k, j], c_k^+]
                    + sum_{k in j} u_k^* [c_k, rho[i, j-k]]

with L the molecular Lindbladian (four decay channels).
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import _ode
from .model import NLEVELS, MoleculeParams, decay_operators, ground_state, input_couplings
from .pulses import PulseEnvelope

LABELS = ("0", "a", "b", "2")
# independent blocks, in storage order
PAIRS = (
    ("2", "2"),
    ("a", "2"),
    ("b", "2"),
    ("a", "a"),
    ("b", "b"),
    ("a", "b"),
    ("0", "2"),
    ("0", "a"),
    ("0", "b"),
    ("0", "0"),
)
_INDEX = {p: k for k, p in enumerate(PAIRS)}
DIAGONAL = (("2", "2"), ("a", "a"), ("b", "b"), ("0", "0"))

TRACE_ABORT = 1e-4


def block(rho: np.ndarray, i: str, j: str) -> np.ndarray:
    """Block (i, j) from a (10, 5, 5) stack, taking adjoints where needed."""
    if (i, j) in _INDEX:
        return rho[..., _INDEX[(i, j)], :, :]
    return np.conj(np.swapaxes(rho[..., _INDEX[(j, i)], :, :], -1, -2))


@dataclass
class GdmState:
    t: float
    rho: np.ndarray  # (10, 5, 5)

    def __getitem__(self, pair: tuple[str, str]) -> np.ndarray:
        return block(self.rho, *pair)

    def as_dict(self) -> dict[tuple[str, str], np.ndarray]:
        return {(i, j): block(self.rho, i, j) for i in LABELS for j in LABELS}


def initial_state(t0: float = 0.0) -> GdmState:
    """Diagonal blocks start in |F0><F0|, coherences between photon sectors at zero."""
    rho = np.zeros((len(PAIRS), NLEVELS, NLEVELS), dtype=complex)
    for p in DIAGONAL:
        rho[_INDEX[p]] = ground_state()
    return GdmState(t0, rho)


def lindblad_dissipator(x: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """D_X[rho] = X rho X^+ - 1/2 {X^+ X, rho}."""
    xd = x.conj().T
    xdx = xd @ x
    return x @ rho @ xd - 0.5 * (xdx @ rho + rho @ xdx)


def _comm(a, b):
    return a @ b - b @ a


def _lindbladian(rho, h, jumps):
    out = -1j * (h @ rho - rho @ h)
    for x in jumps:
        out = out + lindblad_dissipator(x, rho)
    return out


def _rhs_blocks(rho: np.ndarray, ua: complex, ub: complex, params: MoleculeParams) -> np.ndarray:
    h = params.hamiltonian()
    jumps = decay_operators(params)
    ca, cb = input_couplings(params)
    cad, cbd = ca.conj().T, cb.conj().T
    uac, ubc = np.conj(ua), np.conj(ub)
    r = lambda i, j: block(rho, i, j)
    L = lambda i, j: _lindbladian(r(i, j), h, jumps)

    out = np.empty_like(rho)
    out[_INDEX["2", "2"]] = L("2", "2") + (
        ub * _comm(r("a", "2"), cbd)
        + ua * _comm(r("b", "2"), cad)
        + ubc * _comm(cb, r("2", "a"))
        + uac * _comm(ca, r("2", "b"))
    )
    out[_INDEX["a", "2"]] = (
        L("a", "2")
        - ubc * _comm(r("a", "a"), cb)
        + ua * _comm(r("0", "2"), cad)
        - uac * _comm(r("a", "b"), ca)
    )
    out[_INDEX["b", "2"]] = (
        L("b", "2")
        - uac * _comm(r("b", "b"), ca)
        + ub * _comm(r("0", "2"), cbd)
        - ubc * _comm(r("b", "a"), cb)
    )
    out[_INDEX["a", "a"]] = L("a", "a") - ua * _comm(cad, r("0", "a")) + uac * _comm(ca, r("a", "0"))
    out[_INDEX["b", "b"]] = L("b", "b") - ub * _comm(cbd, r("0", "b")) + ubc * _comm(cb, r("b", "0"))
    out[_INDEX["a", "b"]] = L("a", "b") - ua * _comm(cad, r("0", "b")) + ubc * _comm(cb, r("a", "0"))
    out[_INDEX["0", "2"]] = L("0", "2") - ubc * _comm(r("0", "a"), cb) - uac * _comm(r("0", "b"), ca)
    out[_INDEX["0", "a"]] = L("0", "a") + uac * _comm(ca, r("0", "0"))
    out[_INDEX["0", "b"]] = L("0", "b") + ubc * _comm(cb, r("0", "0"))
    out[_INDEX["0", "0"]] = L("0", "0")
    return out


def _drive(p: PulseEnvelope | None, t: float, clamp: bool) -> complex:
    if p is None or (clamp and t >= p.saturation_time()):
        return 0j
    return complex(p.amplitude(t))


def _drive_values(pulses: Sequence[PulseEnvelope | None], t: float, clamp: bool = False) -> tuple[complex, complex]:
    pa, pb = pulses
    return _drive(pa, t, clamp), _drive(pb, t, clamp)


def gdm_rhs(t: float, state: GdmState, pulses: Sequence[PulseEnvelope | None], params: MoleculeParams) -> GdmState:
    """Time derivative of every independent block (returned as a GdmState)."""
    ua, ub = _drive_values(pulses, t)
    return GdmState(t, _rhs_blocks(state.rho, ua, ub, params))


@functools.lru_cache(maxsize=32)
def superoperators(params: MoleculeParams) -> tuple[sp.csr_matrix, ...]:
    """Sparse real (A0, Ra, Ia, Rb, Ib) acting on the float view of the block stack.

    rhs = A0 + Re(ua) Ra + Im(ua) Ia + Re(ub) Rb + Im(ub) Ib. The equations are
    only real-linear in the stored blocks (the partner blocks enter through
    adjoints), so they are probed with real unit vectors of the float view.
    """
    n = 2 * len(PAIRS) * NLEVELS * NLEVELS
    shape = (len(PAIRS), NLEVELS, NLEVELS)

    def probe(ua, ub):
        cols = np.empty((n, n))
        for k in range(n):
            e = np.zeros(n)
            e[k] = 1.0
            cols[k] = _rhs_blocks(e.view(complex).reshape(shape), ua, ub, params).ravel().view(float)
        return cols.T

    a0 = probe(0, 0)
    mats = (a0, probe(1, 0) - a0, probe(1j, 0) - a0, probe(0, 1) - a0, probe(0, 1j) - a0)
    return tuple(sp.csr_matrix(np.where(np.abs(m) < 1e-15, 0, m)) for m in mats)


@dataclass
class GdmTrajectory:
    times: np.ndarray
    rho: np.ndarray  # (n, 10, 5, 5)

    def block(self, i: str, j: str) -> np.ndarray:
        return block(self.rho, i, j)

    def state(self, k: int) -> GdmState:
        return GdmState(float(self.times[k]), self.rho[k])

    def populations(self) -> np.ndarray:
        """(n, 5) physical level populations from rho[2,2]."""
        p = np.real(np.diagonal(self.block("2", "2"), axis1=-2, axis2=-1))
        return np.clip(p, -1e-8, 1 + 1e-8)

    @property
    def final(self) -> GdmState:
        return self.state(-1)


def population(state: GdmState, level: int) -> float:
    p = float(np.real(state["2", "2"][level, level]))
    return min(max(p, -1e-8), 1 + 1e-8)


def default_dt(params: MoleculeParams, pulses: Sequence[PulseEnvelope | None]) -> float:
    rates = [max(params.gammas)] + [p.rate_scale for p in pulses if p is not None]
    return 1.0 / (40.0 * max(rates))


def steady_window(params: MoleculeParams, pulses: Sequence[PulseEnvelope | None], settle: float = 1e-8) -> tuple[float, float]:
    """(t0, T) spanning both pulses plus the time for excited levels to fall below ``settle``."""
    sup = [p.support() for p in pulses if p is not None]
    if not sup:
        return 0.0, 1.0
    t0 = min(s[0] for s in sup)
    t1 = max(s[1] for s in sup)
    slow = min(params.gamma_alpha, params.gamma_beta)
    return t0, t1 + math.log(1.0 / settle) / slow


def _breakpoints(pulses) -> list[float]:
    out = []
    for p in pulses:
        if p is None:
            continue
        a, b = p.support()
        out += [a, b]
        ts = p.saturation_time()
        if math.isfinite(ts):
            out.append(ts)
    return out


def _fine_windows(pulses) -> list[tuple[float, float]]:
    """Stretches before each coupling clamp where |g|^2 climbs well above the pulse rate."""
    out = []
    for p in pulses:
        if p is None:
            continue
        ts = p.saturation_time()
        if math.isfinite(ts):
            out.append((ts - 4.0 / p.rate_scale, ts))
    return out


def _trace_check(rho_vec: np.ndarray, t: float):
    if rho_vec.dtype != complex:
        rho_vec = rho_vec.view(complex)
    rho = rho_vec.reshape(len(PAIRS), NLEVELS, NLEVELS)
    tr = np.trace(rho, axis1=-2, axis2=-1)
    want = np.array([1.0 if p[0] == p[1] else 0.0 for p in PAIRS])
    drift = float(np.max(np.abs(tr - want)))
    if not math.isfinite(drift) or drift > TRACE_ABORT:
        raise _ode.IntegrationError(f"integrator unstable, reduce dt (trace drift {drift:.2e} at t={t:.4g})")
    # RK4 keeps the trace exactly, so blow-up shows first in the coherence blocks,
    # whose entries are bounded by one in any physical hierarchy
    peak = float(np.max(np.abs(rho)))
    if not math.isfinite(peak) or peak > 1.0 + TRACE_ABORT:
        raise _ode.IntegrationError(f"integrator unstable, reduce dt (block entry {peak:.3g} at t={t:.4g})")


def integrate(
    t0: float,
    T: float,
    dt: float | None,
    pulses: Sequence[PulseEnvelope | None],
    params: MoleculeParams,
    initial: GdmState | None = None,
    method: str = "rk4",
    refine: bool = False,
    rtol: float = 1e-10,
    atol: float = 1e-14,
    clamp: bool = False,
) -> GdmTrajectory:
    """Integrate the hierarchy on [t0, T].

    ``method`` is ``"rk4"`` (fixed step, default) or ``"adaptive"`` (DOP853).
    With ``refine=True`` the RK4 step is halved until the final populations
    move by less than 1e-6. ``clamp=True`` cuts each drive at the time its
    virtual cavity coupling is clamped, which is the exact counterpart of the
    clamped master equation.
    """
    if dt is None:
        dt = default_dt(params, pulses)
    if initial is None:
        initial = initial_state(t0)
    a0, ra, ia, rb, ib = superoperators(params)
    pa, pb = pulses

    def fun(t, y):
        ua, ub = _drive_values((pa, pb), t, clamp)
        out = a0 @ y
        if ua.real:
            out += ua.real * (ra @ y)
        if ua.imag:
            out += ua.imag * (ia @ y)
        if ub.real:
            out += ub.real * (rb @ y)
        if ub.imag:
            out += ub.imag * (ib @ y)
        return out

    bps = _breakpoints(pulses)
    y0 = initial.rho.ravel().astype(complex).view(float)

    def run(h):
        times = _ode.step_times(t0, T, h, bps, _fine_windows(pulses))
        if method == "rk4":
            ys = _ode.rk4(fun, y0, times, check=_every(200, _trace_check))
        elif method == "adaptive":
            ys = _ode.adaptive(fun, y0, times, bps, rtol=rtol, atol=atol)
        else:
            raise ValueError(f"unknown method {method!r}")
        ys = np.ascontiguousarray(np.real(ys)).view(complex)
        _trace_check(ys[-1], times[-1])
        return GdmTrajectory(times, ys.reshape((-1, len(PAIRS), NLEVELS, NLEVELS)))

    traj = run(dt)
    if refine and method == "rk4":
        for _ in range(6):
            finer = run(dt / 2)
            change = np.max(np.abs(finer.populations()[-1] - traj.populations()[-1]))
            traj, dt = finer, dt / 2
            if change < 1e-6:
                break
    return traj


def _every(n, fn):
    count = [0]

    def wrapped(t, y):
        count[0] += 1
        if count[0] % n == 0:
            fn(y, t)

    return wrapped


def steady_state(pulses, params: MoleculeParams, dt: float | None = None, method: str = "rk4") -> GdmTrajectory:
    t0, T = steady_window(params, pulses)
    return integrate(t0, T, dt, pulses, params, method=method)
