"""Standing waves of the nonlinear Klein-Gordon equation on bounded domains."""

from .discretization import DomainShape, MaskedGrid, RadialGrid, build_radial_grid
from .functional import ChargeSpec, FieldState
from .minimizer import SolveOptions, SolveResult, minimize_radial, minimize_reduced
from .potential import Potential, verify_hypotheses

__version__ = "0.1.0"

__all__ = [
    "ChargeSpec",
    "DomainShape",
    "FieldState",
    "MaskedGrid",
    "Potential",
    "RadialGrid",
    "SolveOptions",
    "SolveResult",
    "build_radial_grid",
    "minimize_radial",
    "minimize_reduced",
    "verify_hypotheses",
]
