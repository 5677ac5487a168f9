"""Measurement operators for finding the molecule in F2 (one photon) or F4 (two).

Single photon:

    Pi1 = int_{t0}^T dt W_t |phi_t><phi_t|
    W_t = g1 g2 / G [1 - e^{-G (t - t0)}],     G = g1 + g2
    phi_t(s) ~ e^{G (s - t)/2} on [t0, t], normalized

Two photons:

    Pi2 = int dt int_{t0}^t dt' W_{t'} W_{t,t'} |phi_{t'}><phi_{t'}| (x) |psi_{t,t'}><psi_{t,t'}|
    W_{t,t'} = g3 g4 / G' [1 - e^{-G' (t - t')}],   psi_{t,t'}(s) ~ e^{G' (s - t)/2} on [t', t]

Operators are represented on a uniform grid of N cells with the orthonormal
pixel basis e_j(s) = 1/sqrt(dt) on cell j. Kernel vectors are exact cell
integrals. The t-integrals run over the cell edges with composite
Newton-Cotes weights, so every kernel state covers whole cells and the pixel
projection stays second-order accurate.
Carrier phases are dropped (rotating frame), so every kernel is real.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as la

from .model import MoleculeParams

log = logging.getLogger(__name__)

DENSE_MAX = 64
ZERO_EIG = 1e-12
HERMITIAN_TOL = 1e-8


class PovmError(ArithmeticError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    n: int

    def __post_init__(self):
        if self.n < 1 or not self.T > self.t0:
            raise ValueError("time grid needs T > t0 and at least one cell")

    @property
    def step(self) -> float:
        return (self.T - self.t0) / self.n

    @property
    def edges(self) -> np.ndarray:
        return self.t0 + self.step * np.arange(self.n + 1)

    @property
    def centres(self) -> np.ndarray:
        return self.t0 + self.step * (np.arange(self.n) + 0.5)

    def check(self, params: MoleculeParams) -> "TimeGrid":
        limit = 1.0 / (20.0 * max(params.gamma_alpha, params.gamma_beta))
        if self.step > limit * (1 + 1e-12):
            raise ValueError(f"grid step {self.step:.4g} exceeds 1/(20 (g1+g2)) = {limit:.4g}")
        return self

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell edges and composite Newton-Cotes weights over [t0, T]."""
        return self.edges, newton_cotes(self.n, self.step)

    def gauss_nodes(self, per_cell: int) -> tuple[np.ndarray, np.ndarray]:
        """Gauss-Legendre nodes and weights inside every cell."""
        x, w = np.polynomial.legendre.leggauss(per_cell)
        h = self.step
        t = self.edges[:-1, None] + 0.5 * h * (x[None, :] + 1.0)
        return t.ravel(), np.tile(0.5 * h * w, self.n)

    @classmethod
    def for_params(cls, t0: float, T: float, params: MoleculeParams, n: int | None = None) -> "TimeGrid":
        if n is None:
            limit = 1.0 / (20.0 * max(params.gamma_alpha, params.gamma_beta))
            n = int(math.ceil((T - t0) / limit - 1e-9))
        return cls(t0, T, n).check(params)


def newton_cotes(m: int, h: float) -> np.ndarray:
    """Weights for m equal cells (m + 1 points): Simpson, closing with 3/8 when m is odd."""
    w = np.zeros(m + 1)
    if m == 0:
        return w
    if m == 1:
        w[:] = h / 2
        return w
    even = m if m % 2 == 0 else m - 3
    for k in range(0, even, 2):
        w[k : k + 3] += h / 3 * np.array([1.0, 4.0, 1.0])
    if m % 2:
        w[even : even + 4] += 3 * h / 8 * np.array([1.0, 3.0, 3.0, 1.0])
    return w


def weight_w(t, params: MoleculeParams, t0: float = 0.0):
    """W_t: rate at which the F1 -> F2 branch registers, given excitation since t0."""
    g = params.gamma_alpha
    t = np.asarray(t, dtype=float)
    out = params.gamma1 * params.gamma2 / g * -np.expm1(-g * np.maximum(t - t0, 0.0))
    return out if out.ndim else float(out)


def weight_wtt(t, t_prime, params: MoleculeParams):
    """W_{t,t'} with the beta-transition rates."""
    g = params.gamma_beta
    d = np.maximum(np.asarray(t, dtype=float) - np.asarray(t_prime, dtype=float), 0.0)
    out = params.gamma3 * params.gamma4 / g * -np.expm1(-g * d)
    return out if np.ndim(out) else float(out)


def _kernel_vectors(start, end, rate: float, grid: TimeGrid) -> np.ndarray:
    """Pixel components of e^{rate (s - end)/2} on [start, end], normalized.

    ``start`` and ``end`` broadcast; the result has shape broadcast + (n,).
    """
    start = np.asarray(start, dtype=float)[..., None]
    end = np.asarray(end, dtype=float)[..., None]
    lo = np.clip(grid.edges[:-1], start, end)
    hi = np.clip(grid.edges[1:], start, end)
    lam = 0.5 * rate
    # exact cell integrals of e^{lam (s - end)}
    vals = (np.exp(lam * (hi - end)) - np.exp(lam * (lo - end))) / lam
    vals = vals / math.sqrt(grid.step)
    norm = np.sqrt(np.sum(vals**2, axis=-1, keepdims=True))
    return np.divide(vals, norm, out=np.zeros_like(vals), where=norm > 0)


def phi_state(t: float, grid: TimeGrid, params: MoleculeParams) -> np.ndarray:
    """Normalized first-photon kernel state phi_t in the pixel basis."""
    if t - grid.t0 < grid.step:
        log.warning("phi_t support shorter than one grid step (t - t0 = %.3g)", t - grid.t0)
    return _kernel_vectors(grid.t0, t, params.gamma_alpha, grid)


def psi_state(t: float, t_prime: float, grid: TimeGrid, params: MoleculeParams) -> np.ndarray:
    """Normalized second-photon kernel state psi_{t,t'} (support [t', t])."""
    if t - t_prime < grid.step:
        log.warning("psi_{t,t'} support shorter than one grid step (t - t' = %.3g)", t - t_prime)
    return _kernel_vectors(t_prime, t, params.gamma_beta, grid)


@dataclass
class PovmOperator:
    order: int
    grid: TimeGrid
    params: MoleculeParams
    matrix: np.ndarray | None = None  # dense kernel when available
    # low-rank data: Pi1 = phi^T diag(c) phi; Pi2 adds per-t' second-photon factors
    node_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    node_weights: np.ndarray = field(default_factory=lambda: np.empty(0))
    phi: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))

    @property
    def dim(self) -> int:
        return self.grid.n**self.order

    def trace(self) -> float:
        if self.matrix is not None:
            return float(np.trace(self.matrix))
        if self.order == 1:
            return float(np.sum(self.node_weights))
        tn, wn = self.node_times, self.node_weights
        return float(sum(wn[i] * np.sum(_wtt_row(i, tn, self.grid, self.params)) for i in range(tn.size)))


def _node_data(grid: TimeGrid, params: MoleculeParams):
    tn, wq = grid.nodes()
    c = wq * weight_w(tn, params, grid.t0)
    return tn, c, phi_state_batch(tn, grid, params)


def phi_state_batch(times, grid: TimeGrid, params: MoleculeParams) -> np.ndarray:
    return _kernel_vectors(grid.t0, times, params.gamma_alpha, grid)


def _wtt_row(i, tn, grid, params):
    """Quadrature weights times W_{t,t'} for every node t later than node t' = tn[i]."""
    wq = np.zeros(tn.size)
    wq[i:] = newton_cotes(tn.size - 1 - i, grid.step)
    later = tn > tn[i]
    return np.where(later, wq * weight_wtt(tn, tn[i], params), 0.0)


def _psi_block(i, tn, grid, params):
    later = tn > tn[i]
    return later, _kernel_vectors(tn[i], tn[later], params.gamma_beta, grid)


def build_pi(order: int, grid: TimeGrid, params: MoleculeParams, dense: bool | None = None) -> PovmOperator:
    """Assemble Pi1 (order 1) or Pi2 (order 2) on ``grid``.

    Pi2 is assembled densely only for grids of at most DENSE_MAX cells; beyond
    that (or with ``dense=False``) it is kept as factors and contracted lazily.
    """
    grid.check(params)
    tn, c, phi = _node_data(grid, params)
    op = PovmOperator(order, grid, params, None, tn, c, phi)
    if order == 1:
        op.matrix = (phi.T * c) @ phi
        return op
    if order != 2:
        raise ValueError("order must be 1 or 2")
    if dense is None:
        dense = grid.n <= DENSE_MAX
    if dense and grid.n > DENSE_MAX:
        log.warning("dense two-photon operator refused for n=%d; using factors", grid.n)
        dense = False
    if dense:
        n = grid.n
        mat = np.zeros((n * n, n * n))
        for i in range(tn.size):
            later, psi = _psi_block(i, tn, grid, params)
            if not later.any():
                continue
            wrow = _wtt_row(i, tn, grid, params)[later]
            B = (psi.T * wrow) @ psi
            A = c[i] * np.outer(phi[i], phi[i])
            mat += np.kron(A, B)
        op.matrix = mat
    return op


def project_pulse(pulse, grid: TimeGrid, per_cell: int = 6) -> np.ndarray:
    """Pixel-basis components of a pulse: cell integrals divided by sqrt(dt)."""
    t, w = grid.gauss_nodes(per_cell)
    vals = np.asarray(pulse.amplitude(t), dtype=complex) * w
    return vals.reshape(grid.n, per_cell).sum(axis=1) / math.sqrt(grid.step)


def born_probability(op: PovmOperator, pulse_a, pulse_b=None) -> float:
    """<u|Pi1|u> or <u_a (x) u_b|Pi2|u_a (x) u_b>."""
    va = project_pulse(pulse_a, op.grid)
    if op.order == 1:
        if op.matrix is not None:
            return float(np.real(np.conj(va) @ op.matrix @ va))
        return float(np.sum(op.node_weights * np.abs(op.phi @ va) ** 2))
    if pulse_b is None:
        raise ValueError("two-photon operator needs two pulses")
    vb = project_pulse(pulse_b, op.grid)
    if op.matrix is not None:
        v = np.kron(va, vb)
        return float(np.real(np.conj(v) @ op.matrix @ v))
    tn, c = op.node_times, op.node_weights
    first = c * np.abs(op.phi @ va) ** 2
    total = 0.0
    for i in range(tn.size):
        if first[i] == 0.0:
            continue
        later, psi = _psi_block(i, tn, op.grid, op.params)
        if not later.any():
            continue
        wrow = _wtt_row(i, tn, op.grid, op.params)[later]
        total += first[i] * float(np.sum(wrow * np.abs(psi @ vb) ** 2))
    return total


@dataclass
class Eigensystem:
    values: np.ndarray  # descending
    vectors: np.ndarray  # columns
    grid: TimeGrid
    order: int


def eigendecompose(op: PovmOperator) -> Eigensystem:
    """Eigenvalues in descending order with orthonormal eigenvectors."""
    m = op.matrix
    if m is None:
        if op.order == 1:
            m = (op.phi.T * op.node_weights) @ op.phi
        else:
            raise PovmError("two-photon operator is stored in factored form; assemble it densely first")
    resid = float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0
    if resid > HERMITIAN_TOL:
        raise PovmError(f"operator not Hermitian (residual {resid:.2e})")
    vals, vecs = la.eigh(0.5 * (m + m.conj().T))
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    vals = np.where(np.abs(vals) < ZERO_EIG, 0.0, vals)
    return Eigensystem(vals, vecs, op.grid, op.order)


def trace_closed_form(params: MoleculeParams, duration: float, exact: bool = False) -> float:
    """Bandwidth int W_t dt; ``exact`` keeps the exponentially small term."""
    g = params.gamma_alpha
    pref = params.gamma1 * params.gamma2 / g
    if exact:
        return pref * (duration + math.expm1(-g * duration) / g)
    return pref * (duration - 1.0 / g)


def write_spectrum(es: Eigensystem, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "eigenvalue"])
        for k, v in enumerate(es.values):
            w.writerow([k, f"{v:.12g}"])


def write_state(es: Eigensystem, path: str | Path, k: int = 0) -> None:
    """Two-column dump (time, amplitude) of eigenstate k of a one-photon operator."""
    if es.order != 1:
        raise ValueError("state dumps are for one-photon operators")
    amp = es.vectors[:, k] / math.sqrt(es.grid.step)
    # fix the overall sign so the largest component is positive
    amp = amp * np.sign(amp[np.argmax(np.abs(amp))])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "amplitude"])
        for t, a in zip(es.grid.centres, np.real(amp)):
            w.writerow([f"{t:.12g}", f"{a:.12g}"])
