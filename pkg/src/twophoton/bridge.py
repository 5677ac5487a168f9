"""Map the virtual-cavity density matrix onto the photon-sector hierarchy.

The 20x20 state is cut into sixteen 5x5 blocks by cavity occupation. Blocks are
labelled by the photons already emitted, so with |n1, n2> the cavity numbers

    "2" <-> |0,0>   "a" <-> |0,1>   "b" <-> |1,0>   "0" <-> |1,1>

and ``tilde[(i, j)] = <cav(i)| rho |cav(j)>``.

Each hierarchy block follows from a product of one rule per photon mode. With
L = int |g|^2 dt accumulated by that cavity, and (ket, bra) telling whether the
hierarchy label carries that photon:

    (no, no)    cavity full on both sides, times e^{L}
    (yes, no)   ket empty, bra full,       times e^{L/2}
    (no, yes)   ket full, bra empty,       times e^{L/2}
    (yes, yes)  both empty plus both full, times 1

The full cavity blocks decay like e^{-L}, so the products stay bounded; the
factors are formed from L directly and only a non-finite result is an error.
For the physical block ("2","2") this sums all four diagonal cavity blocks.
``include_vacuum_block=False`` drops the |1,1><1,1| term; that variant has
trace zero at the start and is kept only for comparison.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .gdm import LABELS, PAIRS, GdmState, GdmTrajectory
from .liouvillian import LiouvillianTrajectory
from .model import NLEVELS

# cavity occupation (n1, n2) for each tilde label
CAVITY = {"2": (0, 0), "a": (0, 1), "b": (1, 0), "0": (1, 1)}
_PHOTONS = {"0": (False, False), "a": (True, False), "b": (False, True), "2": (True, True)}


class BridgeError(ArithmeticError):
    pass


@dataclass
class TildeCoefficients:
    blocks: dict[tuple[str, str], np.ndarray]
    t: float
    log_emitted: tuple[float, float]  # int |g1|^2, int |g2|^2

    def trace(self) -> complex:
        return sum(np.trace(self.blocks[(k, k)]) for k in LABELS)


def _slice(n1: int, n2: int) -> slice:
    s = (2 * n1 + n2) * NLEVELS
    return slice(s, s + NLEVELS)


def extract_tilde(rho: np.ndarray, t: float = 0.0, log_emitted: tuple[float, float] = (0.0, 0.0)) -> TildeCoefficients:
    """Cut a 20x20 (or stacked (..., 20, 20)) state into its sixteen blocks."""
    rho = np.asarray(rho)
    blocks = {(i, j): rho[..., _slice(*CAVITY[i]), _slice(*CAVITY[j])] for i in LABELS for j in LABELS}
    return TildeCoefficients(blocks, t, log_emitted)


def _mode_terms(ket: bool, bra: bool, L, include_full: bool = True):
    """(ket occupation, bra occupation, log factor) terms for one mode."""
    if not ket and not bra:
        return [(1, 1, L)]
    if ket and not bra:
        return [(0, 1, 0.5 * L)]
    if bra and not ket:
        return [(1, 0, 0.5 * L)]
    terms = [(0, 0, 0.0 * L)]
    if include_full:
        terms.append((1, 1, 0.0 * L))
    return terms


def tilde_to_gdm(coeffs: TildeCoefficients, include_vacuum_block: bool = True) -> GdmState | np.ndarray:
    """Hierarchy blocks in ``gdm.PAIRS`` order, shape (..., 10, 5, 5).

    Works on a single time (returns GdmState) or a stacked trajectory, where
    ``log_emitted`` are arrays broadcast over the leading axis.
    """
    La, Lb = (np.asarray(x, dtype=float) for x in coeffs.log_emitted)
    if not (np.all(np.isfinite(La)) and np.all(np.isfinite(Lb))):
        raise BridgeError("non-finite accumulated coupling")
    sample = coeffs.blocks[("0", "0")]
    out = np.zeros(sample.shape[:-2] + (len(PAIRS), NLEVELS, NLEVELS), dtype=complex)
    # map cavity occupations back to labels
    label_of = {v: k for k, v in CAVITY.items()}
    for k, (i, j) in enumerate(PAIRS):
        (ia, ib), (ja, jb) = _PHOTONS[i], _PHOTONS[j]
        both = (i, j) == ("2", "2")
        acc = 0
        for ta, tb in itertools.product(_mode_terms(ia, ja, La), _mode_terms(ib, jb, Lb)):
            if both and not include_vacuum_block and ta[0] == 1 and tb[0] == 1:
                continue
            ket = label_of[(ta[0], tb[0])]
            bra = label_of[(ta[1], tb[1])]
            factor = np.exp(ta[2] + tb[2])
            acc = acc + coeffs.blocks[(ket, bra)] * np.asarray(factor)[..., None, None]
        out[..., k, :, :] = acc
    if not np.all(np.isfinite(out)):
        raise BridgeError("transformed hierarchy is not finite")
    if out.ndim == 3:
        return GdmState(float(coeffs.t), out)
    return out


def accumulated_coupling(traj: LiouvillianTrajectory) -> tuple[np.ndarray, np.ndarray]:
    """int |g_k|^2 from the start of the trajectory, per sample time."""
    out = []
    for p in traj.pulses:
        if p is None:
            out.append(np.zeros_like(traj.times))
        else:
            out.append(np.asarray(p.log_emission(traj.times), dtype=float) - float(p.log_emission(traj.times[0])))
    return out[0], out[1]


def transform_trajectory(traj: LiouvillianTrajectory, include_vacuum_block: bool = True) -> np.ndarray:
    """(n, 10, 5, 5) hierarchy blocks obtained from a Liouvillian run."""
    coeffs = extract_tilde(traj.rho, traj.times, accumulated_coupling(traj))
    return tilde_to_gdm(coeffs, include_vacuum_block)


@dataclass
class CrossCheck:
    name: str
    per_label: dict[tuple[str, str], float]
    times: int

    @property
    def max_deviation(self) -> float:
        return max(self.per_label.values())


def compare(gdm_traj: GdmTrajectory, lv_traj: LiouvillianTrajectory, name: str = "", include_vacuum_block: bool = True) -> CrossCheck:
    """Max-over-time deviation per hierarchy label; both runs must share a time grid."""
    if gdm_traj.times.shape != lv_traj.times.shape or not np.allclose(gdm_traj.times, lv_traj.times, atol=1e-12):
        raise ValueError("trajectories are sampled on different time grids")
    mapped = transform_trajectory(lv_traj, include_vacuum_block)
    dev = np.max(np.abs(mapped - gdm_traj.rho), axis=(0, 2, 3))
    return CrossCheck(name, {p: float(d) for p, d in zip(PAIRS, dev)}, gdm_traj.times.size)


def cross_validate(pulses: Sequence, params, t0: float, T: float, dt: float, name: str = "", method: str = "rk4") -> CrossCheck:
    """Run both engines on the same grid and compare."""
    from . import gdm, liouvillian

    g = gdm.integrate(t0, T, dt, pulses, params, method=method, clamp=True)
    lv = liouvillian.integrate(t0, T, dt, pulses, params, method=method)
    return compare(g, lv, name)


def write_report(checks: Sequence[CrossCheck], path: str | Path) -> None:
    """CSV with one row per scenario and one column per hierarchy label."""
    cols = [f"{i}{j}" for i, j in PAIRS]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "samples", *cols, "max"])
        for c in checks:
            w.writerow([c.name, c.times, *(f"{c.per_label[p]:.12g}" for p in PAIRS), f"{c.max_deviation:.12g}"])


def initial_trace_ok(include_vacuum_block: bool) -> bool:
    """Whether the chosen variant gives trace 1 for the physical block at the start."""
    from .liouvillian import initial_state

    st = tilde_to_gdm(extract_tilde(initial_state()), include_vacuum_block)
    return math.isclose(float(np.real(np.trace(st["2", "2"]))), 1.0, abs_tol=1e-6)
