"""Lévy areas on the dyadic grid through alternating-increment walks.

For a level-``n`` skeleton the walk of the pair ``(i, j)`` is

    L(0) = 0,   L(k) = L(k - 1) + dZ_i[2k - 1] * dZ_j[2k],   k = 1..2**(n-1)

(1-based increments).  Summing walk blocks over all finer levels recovers the
Ito area of every coarse interval, which is what the area tables below
truncate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dyadic_bm import PathSkeleton, WaveletLattice
from .errors import InvariantViolation


@dataclass
class LWalk:
    level: int
    pair: tuple[int, int]
    values: np.ndarray  # length 2**(level - 1) + 1


@dataclass
class AreaTable:
    level: int
    depth: int
    entries: np.ndarray  # shape (d', d', 2**level)


def walk_steps(inc_i: np.ndarray, inc_j: np.ndarray) -> np.ndarray:
    """Per-step products along the last axis."""
    return inc_i[..., 0::2] * inc_j[..., 1::2]


def walk_values(inc_i: np.ndarray, inc_j: np.ndarray) -> np.ndarray:
    steps = walk_steps(inc_i, inc_j)
    out = np.zeros(steps.shape[:-1] + (steps.shape[-1] + 1,))
    np.cumsum(steps, axis=-1, out=out[..., 1:])
    return out


def l_walk(skeleton: PathSkeleton, i: int, j: int) -> LWalk:
    if skeleton.level < 1:
        raise ValueError("walks need a skeleton of level at least 1")
    inc = skeleton.increments
    return LWalk(skeleton.level, (i, j), walk_values(inc[i], inc[j]))


def all_pair_walks(increments: np.ndarray) -> np.ndarray:
    """Walks for every ordered pair, shape ``(d', d', 2**(n-1) + 1)``."""
    steps = increments[:, None, 0::2] * increments[None, :, 1::2]
    out = np.zeros(steps.shape[:-1] + (steps.shape[-1] + 1,))
    np.cumsum(steps, axis=-1, out=out[..., 1:])
    return out


def area_truncated(lattice: WaveletLattice, n: int, depth: int) -> AreaTable:
    """Areas of the level-``n`` intervals from walk blocks at levels ``n+1..n+depth``."""
    entries = np.zeros((lattice.dprime, lattice.dprime, 2**n))
    for h in range(n + 1, n + depth + 1):
        inc = lattice.increments(h)
        steps = inc[:, None, 0::2] * inc[None, :, 1::2]
        entries += steps.reshape(lattice.dprime, lattice.dprime, 2**n, -1).sum(axis=-1)
    return AreaTable(n, depth, entries)


def chen_compose(a_rs: float, a_st: float, zi_rs: float, zj_st: float) -> float:
    return a_rs + a_st + zi_rs * zj_st


def remainder_from_table(table: AreaTable, l: int, m: int) -> np.ndarray:
    """Sum of interval areas over ``(t_l, t_m]``, all pairs."""
    return table.entries[..., l:m].sum(axis=-1)


def remainder_from_walks(lattice: WaveletLattice, n: int, depth: int, l: int, m: int) -> np.ndarray:
    """Same quantity from walk differences at each finer level."""
    total = np.zeros((lattice.dprime, lattice.dprime))
    for h in range(n + 1, n + depth + 1):
        w = all_pair_walks(lattice.increments(h))
        f = 2 ** (h - n - 1)
        total += w[..., f * m] - w[..., f * l]
    return total


def _span(values: np.ndarray) -> float:
    return float(np.max(values.max(axis=-1) - values.min(axis=-1)))


def _lag_limit(span: float, last: int, beta: float, scale: float, floor: float) -> int:
    """Largest lag at which a normalised increment can still exceed ``floor``.

    Every increment is bounded by the walk's range, so lags ``h`` with
    ``span / (h**beta * scale) <= floor`` are skipped.
    """
    if span == 0.0:
        return 0
    if floor <= 0:
        return last
    return int(min(last, np.floor((span / (scale * floor)) ** (1 / beta)) + 1))


def max_normalized_increment(values: np.ndarray, beta: float, scale: float = 1.0) -> float:
    """``max_{l<m} |v[m] - v[l]| / ((m - l)**beta * scale)`` over all leading axes."""
    values = values.reshape(-1, values.shape[-1])
    span, last = _span(values), values.shape[-1] - 1
    best = 0.0
    h = 1
    while h <= _lag_limit(span, last, beta, scale, best):
        d = np.abs(values[:, h:] - values[:, :-h]).max()
        best = max(best, d / (h**beta * scale))
        h += 1
    return best


def count_violations(values: np.ndarray, beta: float, scale: float) -> int:
    """Number of ``(series, l < m)`` with ``|v[m] - v[l]| > (m - l)**beta * scale``."""
    values = values.reshape(-1, values.shape[-1])
    limit = _lag_limit(_span(values), values.shape[-1] - 1, beta, scale, 1.0)
    total = 0
    for h in range(1, limit + 1):
        total += int(np.count_nonzero(np.abs(values[:, h:] - values[:, :-h]) > h**beta * scale))
    return total


def walk_scale(level: int, alpha: float) -> float:
    return 2.0 ** (-2 * alpha * level)


def level_record_count(lattice: WaveletLattice, level: int, alpha: float, beta: float) -> int:
    """Violating ``(i, j, l < m)`` triples of the walk record at ``level``."""
    walks = all_pair_walks(lattice.increments(level))
    return count_violations(walks, beta, walk_scale(level, alpha))


def gamma_l_at_level(lattice: WaveletLattice, level: int, alpha: float, beta: float) -> float:
    walks = all_pair_walks(lattice.increments(level))
    return max_normalized_increment(walks, beta, walk_scale(level, alpha))


def gamma_r_factor(alpha: float, beta: float) -> float:
    r = 2.0 ** (-(2 * alpha - beta))
    return r / (1 - r)


def k2_alpha_from(gamma_r: float, k_alpha: float, alpha: float) -> float:
    return gamma_r * 2 / (1 - 2 ** (-2 * alpha)) + k_alpha**2 * 2 ** (1 - alpha) / (1 - 2 ** (-alpha))


def gamma_bounds(
    lattice: WaveletLattice,
    n2: int,
    alpha: float,
    beta: float,
    k_alpha: float,
) -> tuple[float, float, float]:
    """Certified ``(Gamma_L, Gamma_R, K_2alpha)`` given no walk record beyond ``n2``.

    ``Gamma_L`` is the largest normalised walk increment over levels
    ``1..n2``.  Levels above ``n2`` only contribute ratios of at most one, so
    ``Gamma_R`` is built from ``max(Gamma_L, 1)``.
    """
    if n2 > lattice.depth:
        raise InvariantViolation(f"n2={n2} exceeds lattice depth {lattice.depth}")
    gamma_l = 0.0
    for level in range(1, n2 + 1):
        gamma_l = max(gamma_l, gamma_l_at_level(lattice, level, alpha, beta))
    gamma_r = gamma_r_factor(alpha, beta) * max(gamma_l, 1.0)
    return gamma_l, gamma_r, k2_alpha_from(gamma_r, k_alpha, alpha)
