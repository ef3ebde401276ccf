"""Mesh-free Fokker-Planck solver with shape-morphing Gaussian mixtures."""

from .assembler import CollocationGrid, HilbertChoice, HilbertMode, RegularizationError
from .integrator import (ConservationError, StiffnessError, TimeGrid, Trajectory,
                         detect_equilibrium, integrate)
from .mixture import (MixtureState, ProjectionError, WidthCollapseError, evaluate,
                      normalize, total_probability)
from .operator import DriftModel, UnsupportedModelError

__version__ = "0.1.0"

__all__ = [
    "CollocationGrid", "ConservationError", "DriftModel", "HilbertChoice", "HilbertMode",
    "MixtureState", "ProjectionError", "RegularizationError", "StiffnessError", "TimeGrid",
    "Trajectory", "UnsupportedModelError", "WidthCollapseError", "detect_equilibrium",
    "evaluate", "integrate", "normalize", "total_probability",
]
