"""Dictionary-based reduced-order models with L1, L2 and Huber residual fits."""
from .errors import (
    ConfigInvalid,
    DegenerateDictionary,
    DimensionMismatch,
    L1romError,
    LineSearchFailure,
    NewtonDiverged,
    NonPhysicalState,
    RankDeficient,
    Stalled,
)
from .minimize import Functional, SolveReport, minimize_linear, minimize_nonlinear

__all__ = [
    "ConfigInvalid",
    "DegenerateDictionary",
    "DimensionMismatch",
    "Functional",
    "L1romError",
    "LineSearchFailure",
    "NewtonDiverged",
    "NonPhysicalState",
    "RankDeficient",
    "SolveReport",
    "Stalled",
    "minimize_linear",
    "minimize_nonlinear",
]
