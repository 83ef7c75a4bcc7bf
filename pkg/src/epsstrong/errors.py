"""Exception hierarchy shared by the library and the command line."""


class EpsStrongError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ConfigError(EpsStrongError, ValueError):
    """A parameter lies outside its admissible range."""

    exit_code = 2


class InvariantViolation(EpsStrongError):
    """A certified bound or a structural invariant failed at run time."""

    exit_code = 3


class AcceptanceRatioError(InvariantViolation):
    """A rejection-sampling ratio exceeded one."""


class IterationGuardError(EpsStrongError):
    """A loop or a lattice level exceeded its configured guard."""

    exit_code = 4


class InfeasibleTablesError(IterationGuardError):
    """Proposal tables fail the feasibility inequality at the current level."""
