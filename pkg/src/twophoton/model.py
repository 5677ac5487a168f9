"""Five-level molecule: parameters, level operators and decay channels.

Levels are indexed 0..4:

    F0  ground
    F1  excited, reached from F0 by photon alpha
    F2  first shelving state (one photon detected)
    F3  excited, reached from F2 by photon beta
    F4  second shelving state (two photons detected)

Everything is expressed in the rotating frame in which the resonant carriers
omega01 and omega23 have been removed, so the bare molecular Hamiltonian is
zero unless explicit level energies are supplied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

NLEVELS = 5


class ParameterError(ValueError):
    """Raised for physically or numerically invalid model parameters."""


@dataclass(frozen=True)
class MoleculeParams:
    """Decay rates and transition frequencies of the five-level molecule.

    ``gamma1`` (F1 -> F0) and ``gamma3`` (F3 -> F2) are the radiative rates into
    the input continua; ``gamma2`` (F1 -> F2) and ``gamma4`` (F3 -> F4) feed the
    shelving states. Times are in units of ``1/gamma1`` by convention.
    """

    gamma1: float = 1.0
    gamma2: float = 1.0
    gamma3: float = 1.0
    gamma4: float = 1.0
    omega01: float = 0.0
    omega23: float = 0.0
    level_energies: tuple[float, ...] | None = field(default=None)

    @property
    def gammas(self) -> tuple[float, float, float, float]:
        return (self.gamma1, self.gamma2, self.gamma3, self.gamma4)

    @property
    def gamma_alpha(self) -> float:
        """Total decay rate of F1."""
        return self.gamma1 + self.gamma2

    @property
    def gamma_beta(self) -> float:
        """Total decay rate of F3."""
        return self.gamma3 + self.gamma4

    def hamiltonian(self) -> np.ndarray:
        """Diagonal molecular Hamiltonian (zero in the default rotating frame)."""
        if self.level_energies is None:
            return np.zeros((NLEVELS, NLEVELS), dtype=complex)
        return np.diag(np.asarray(self.level_energies, dtype=complex))


def validate(params: MoleculeParams) -> MoleculeParams:
    """Return ``params`` unchanged if every invariant holds, else raise."""
    for name in ("gamma1", "gamma2", "gamma3", "gamma4", "omega01", "omega23"):
        value = getattr(params, name)
        if not math.isfinite(value):
            raise ParameterError(f"non-finite parameter: {name}={value}")
    for name, value in zip(("gamma1", "gamma2", "gamma3", "gamma4"), params.gammas):
        if value <= 0.0:
            raise ParameterError(f"invalid rate: {name}={value} (must be > 0)")
    if params.level_energies is not None:
        e = tuple(params.level_energies)
        if len(e) != NLEVELS:
            raise ParameterError("level_energies must have five entries")
        if not all(math.isfinite(x) for x in e):
            raise ParameterError("non-finite parameter: level_energies")
        if not math.isclose(e[1] - e[0], params.omega01, abs_tol=1e-12):
            raise ParameterError("omega01 inconsistent with level energies")
        if not math.isclose(e[3] - e[2], params.omega23, abs_tol=1e-12):
            raise ParameterError("omega23 inconsistent with level energies")
    return params


@dataclass(frozen=True)
class LevelOperator:
    matrix: np.ndarray
    label: str

    def __matmul__(self, other: "LevelOperator") -> "LevelOperator":
        return LevelOperator(self.matrix @ other.matrix, f"{self.label}{other.label}")

    @property
    def dag(self) -> "LevelOperator":
        return LevelOperator(self.matrix.conj().T, f"({self.label})^+")


def transition_operator(from_level: int, to_level: int) -> LevelOperator:
    """|F_to><F_from| as a 5x5 complex matrix."""
    for idx in (from_level, to_level):
        if not (isinstance(idx, (int, np.integer)) and 0 <= idx < NLEVELS):
            raise ParameterError(f"level index out of range: {idx}")
    m = np.zeros((NLEVELS, NLEVELS), dtype=complex)
    m[to_level, from_level] = 1.0
    return LevelOperator(m, f"s{to_level}{from_level}")


def sigma(to_level: int, from_level: int) -> np.ndarray:
    """Bare matrix of |F_to><F_from| (note argument order: row, column)."""
    return transition_operator(from_level, to_level).matrix


def projector(level: int) -> np.ndarray:
    return sigma(level, level)


def ground_state() -> np.ndarray:
    return projector(0)


def decay_operators(params: MoleculeParams) -> list[np.ndarray]:
    """The four molecular collapse operators.

    sqrt(g1)|F0><F1|, sqrt(g2)|F2><F1|, sqrt(g3)|F2><F3|, sqrt(g4)|F4><F3|.
    """
    g1, g2, g3, g4 = params.gammas
    return [
        math.sqrt(g1) * sigma(0, 1),
        math.sqrt(g2) * sigma(2, 1),
        math.sqrt(g3) * sigma(2, 3),
        math.sqrt(g4) * sigma(4, 3),
    ]


def input_couplings(params: MoleculeParams) -> tuple[np.ndarray, np.ndarray]:
    """System operators that absorb photon alpha and photon beta."""
    return (
        math.sqrt(params.gamma1) * sigma(0, 1),
        math.sqrt(params.gamma3) * sigma(2, 3),
    )
