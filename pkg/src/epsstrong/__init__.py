"""Tolerance-enforced (epsilon-strong) simulation of multidimensional SDEs."""

from .errors import (
    AcceptanceRatioError,
    ConfigError,
    EpsStrongError,
    InfeasibleTablesError,
    InvariantViolation,
    IterationGuardError,
)
from .params import Params

__all__ = [
    "AcceptanceRatioError",
    "ConfigError",
    "EpsStrongError",
    "InfeasibleTablesError",
    "InvariantViolation",
    "IterationGuardError",
    "Params",
]
__version__ = "0.1.0"
