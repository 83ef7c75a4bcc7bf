"""Simulation parameters with range checks."""

from __future__ import annotations

from dataclasses import asdict, dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class Params:
    """Holder exponents, tilting knobs and computational guards.

    ``max_level`` caps the finest dyadic level any routine may materialise;
    crossing it raises :class:`IterationGuardError` instead of exhausting memory.
    """

    alpha: float = 0.4
    beta: float = 0.65
    alpha_prime: float = 0.45
    gamma: float = 0.25
    eps0: float = 0.25
    rho: float = 4.5
    max_level: int = 20
    scan_cap: int = 14
    max_attempts: int = 100_000

    def __post_init__(self) -> None:
        validate(self)

    def to_dict(self) -> dict:
        return asdict(self)


def validate(p: Params) -> None:
    if not 1 / 3 < p.alpha < 1 / 2:
        raise ConfigError(f"alpha={p.alpha} must lie in (1/3, 1/2)")
    if not 1 - p.alpha < p.beta < 2 * p.alpha:
        raise ConfigError(
            f"beta={p.beta} must lie in (1 - alpha, 2 alpha) = "
            f"({1 - p.alpha:g}, {2 * p.alpha:g})"
        )
    if not p.alpha < p.alpha_prime < 1 / 2:
        raise ConfigError(f"alpha_prime={p.alpha_prime} must lie in (alpha, 1/2)")
    if not 0 < p.gamma <= 1 / 4:
        raise ConfigError(f"gamma={p.gamma} must lie in (0, 1/4]")
    if not 0 < p.eps0 < 1 / 2:
        raise ConfigError(f"eps0={p.eps0} must lie in (0, 1/2)")
    if not p.rho > 4:
        raise ConfigError(f"rho={p.rho} must exceed 4")
    if p.max_level < 1 or p.scan_cap < 1 or p.max_attempts < 1:
        raise ConfigError("guards must be positive")
