"""Sequential two-photon detection by a five-level molecule.

Three routes to the same populations: the photon-sector hierarchy (``gdm``),
a master equation with virtual source cavities (``liouvillian``) and
frequency-domain formulas (``analytic``). ``bridge`` maps the second onto the
first, ``povm`` builds the detector operators and ``cli`` runs scenarios.
"""

from .model import MoleculeParams
from .pulses import ExponentialDecay, Gaussian, Tabulated

__all__ = ["MoleculeParams", "ExponentialDecay", "Gaussian", "Tabulated"]
__version__ = "0.1.0"
