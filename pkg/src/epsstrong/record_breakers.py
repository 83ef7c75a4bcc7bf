"""Record-breaking wavelet coefficients and the Hölder-norm certificate.

A Haar coefficient with Steele index ``l`` breaks a record when
``|W| > rho * sqrt(log l)``.  Only finitely many do (for ``rho > 4``), and the
sequential sampler below finds all of them together with the last one, after
which every remaining coefficient is known to be conditioned below its
threshold.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import log_ndtr

from .dyadic_bm import (
    ABOVE,
    BELOW,
    WaveletLattice,
    index_to_level,
    sample_above,
    sample_below,
    LatticeDepthError,
    steele_index,
)
from .errors import ConfigError, IterationGuardError


def breaker_threshold(index, rho: float):
    """Per-index threshold ``rho * sqrt(log l)`` (scalar or array)."""
    return rho * np.sqrt(np.log(index))


def level_thresholds(level: int, rho: float) -> np.ndarray:
    return breaker_threshold(steele_index(level, np.arange(2**level)), rho)


def log_prob_below(c: float) -> float:
    """``log P(|W| <= c)`` for a standard normal ``W``."""
    if c <= 0:
        return -math.inf
    return math.log1p(-math.erfc(c / math.sqrt(2)))


def level_log_prob_below(level: int, rho: float) -> float:
    """``log P(no record at Haar level)`` for a single component."""
    c = level_thresholds(level, rho)
    # P(|W| <= c) = 1 - 2 Phi(-c)
    return float(np.sum(np.log1p(-2 * np.exp(log_ndtr(-c)))))


@dataclass(frozen=True)
class BreakerRecord:
    """Record-breaking Steele indices of one component.

    ``n1`` is the skeleton level at which the last breaker enters (its Haar
    level plus one), or 0 when no Haar coefficient breaks a record.
    """

    indices: tuple[int, ...]
    n1: int
    last_index: int


def simulate_breaker_set(
    rng: np.random.Generator,
    rho: float = 4.5,
    component: int = 0,
    max_index: int = 10**9,
) -> BreakerRecord:
    """Sample every record-breaking index of one component.

    ``U`` is the probability that no record occurs between the previous
    breaker and ``R``; ``D`` is a lower bound on its limit.  A uniform ``V``
    either falls below ``U`` at some ``R`` (next breaker) or lands under ``D``
    (no further breakers).  Index 1 carries the top coefficient and its
    threshold is 0, so it is always reported by the loop and then dropped.
    """
    if not rho > 4:
        raise ConfigError(f"rho={rho} must exceed 4")
    tail_exp = 1 - rho * rho / 2
    found: list[int] = []
    r = 0
    while True:
        log_u, log_d = 0.0, -math.inf
        log_v = math.log(rng.random())
        while log_u > log_v > log_d:
            r += 1
            if r > max_index:
                raise IterationGuardError(
                    f"record-breaker search for component {component} passed index {max_index}"
                )
            log_u += log_prob_below(float(breaker_threshold(r, rho)))
            log_d = log_u + math.log1p(-(r**tail_exp)) if r > 1 else -math.inf
        if log_v >= log_u:
            found.append(r)
            continue
        break
    haar = tuple(i for i in found if i >= 2)
    last = max(haar) if haar else 1
    n1 = index_to_level(last)[0] + 1 if haar else 0
    return BreakerRecord(haar, n1, last)


def populate_lattice(
    rng: np.random.Generator, records: list[BreakerRecord], rho: float
) -> WaveletLattice:
    """Draw all coefficients up to the deepest last-breaker level.

    Breakers are drawn above their thresholds, every other Haar coefficient
    below; the top coefficient is free.
    """
    dprime = len(records)
    depth = max(r.n1 for r in records)
    lat = WaveletLattice(rng.standard_normal(dprime))
    for h in range(depth):
        c = np.broadcast_to(level_thresholds(h, rho), (dprime, 2**h))
        above = np.zeros((dprime, 2**h), dtype=bool)
        for i, rec in enumerate(records):
            for idx in rec.indices:
                lev, pos = index_to_level(idx)
                if lev == h:
                    above[i, pos] = True
        values = np.empty((dprime, 2**h))
        values[above] = sample_above(rng, c[above])
        values[~above] = sample_below(rng, c[~above])
        lat.append_level(values, np.where(above, ABOVE, BELOW), c)
    return lat


def extend_below(rng: np.random.Generator, lattice: WaveletLattice, rho: float, levels: int = 1) -> None:
    """Append Haar levels conditioned on no further record."""
    for _ in range(levels):
        h = lattice.depth
        c = np.broadcast_to(level_thresholds(h, rho), (lattice.dprime, 2**h))
        lattice.append_level(sample_below(rng, c), BELOW, c)


def run_algorithm_one(
    rng: np.random.Generator, dprime: int, rho: float
) -> tuple[list[BreakerRecord], WaveletLattice]:
    records = [simulate_breaker_set(rng, rho, i) for i in range(dprime)]
    return records, populate_lattice(rng, records, rho)


def level_maxima(lattice: WaveletLattice) -> np.ndarray:
    """``V^h = max |W|`` over components and positions, top folded into level 0."""
    v = np.array([np.abs(w).max() for w in lattice.coeffs])
    top = np.abs(lattice.top).max()
    if v.size == 0:
        return np.array([top])
    v[0] = max(v[0], top)
    return v


def holder_tail(start_level: int, alpha: float, rho: float) -> float:
    """``sum_{h >= start} 2^{-h(1/2 - alpha)} * rho * sqrt((h + 1) log 2)``."""
    total = 0.0
    h = start_level
    rate = 0.5 - alpha
    while True:
        term = 2.0 ** (-h * rate) * rho * math.sqrt((h + 1) * math.log(2))
        total += term
        if term < 1e-17 * total:
            return total
        h += 1


def k_alpha_bound(
    lattice: WaveletLattice,
    n1: int,
    alpha: float,
    rho: float = 4.5,
    include_tail: bool = True,
) -> float:
    """Upper bound on the alpha-Hölder norm of the synthesised path.

    Uses the observed level maxima for every stored Haar level and the
    threshold envelope beyond.  Requires ``n1 <= lattice.depth`` so that no
    unseen coefficient can exceed its threshold.
    """
    if n1 > lattice.depth:
        raise LatticeDepthError(
            f"last breaker level {n1} lies beyond lattice depth {lattice.depth}"
        )
    v = level_maxima(lattice)
    weights = 2.0 ** (-np.arange(v.size) * (0.5 - alpha))
    total = float(np.sum(weights * v))
    if include_tail:
        total += holder_tail(lattice.depth, alpha, rho)
    return 2 ** (2 * alpha) * total


@dataclass
class HolderCertificate:
    alpha: float
    beta: float
    alpha_prime: float
    gamma: float
    eps0: float
    k_alpha: float
    n1: int
    n2: int
    gamma_l: float
    gamma_r: float
    k2_alpha: float

    def __post_init__(self) -> None:
        for name in ("k_alpha", "gamma_l", "gamma_r", "k2_alpha"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val >= 0):
                raise ConfigError(f"certificate field {name}={val} must be finite and >= 0")

    def to_dict(self) -> dict:
        return asdict(self)
