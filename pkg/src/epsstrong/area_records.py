"""Sampling the last level at which a Lévy-walk record occurs.

Given a lattice at level ``n`` whose finer coefficients are known to lie
below their thresholds, :func:`procedure_b` draws a Bernoulli with
parameter ``P(some walk record at a level > n | thresholds)`` by importance
sampling: a level offset ``M``, a pair ``(i, j)`` and a window ``(k, k']``
are drawn from proposal tables, the finer levels are drawn from the
exponentially tilted law of :mod:`epsstrong.tilting`, and the result is
accepted with the likelihood ratio divided by the number of violating
windows.  :func:`continue_no_breaker` draws finer levels given that no
record ever occurs again.

The tilt direction is a fair mixture of ``+theta0`` and ``-theta0`` so that
windows whose walk increment is large and negative are covered as well.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr

from .dyadic_bm import BELOW, WaveletLattice
from .errors import AcceptanceRatioError, ConfigError, InfeasibleTablesError, IterationGuardError
from .levy_area import level_record_count, max_normalized_increment, walk_scale
from .params import Params
from .record_breakers import extend_below, level_log_prob_below, level_thresholds
from .tilting import build_schedule, log_psi, sample_tilted_window

log = logging.getLogger(__name__)

LOG_GUARD = 1e-9  # slack for rounding in the acceptance-ratio check


def theta0_select(m: int, k: int, kprime: int, n: int, gamma: float, alpha_prime: float) -> float:
    """``gamma / ((k' - k)**(1/2) * Delta_n**(2 alpha') * Delta_m)``."""
    if not 0 < gamma <= 0.25:
        raise ConfigError(f"gamma={gamma} must lie in (0, 1/4]")
    if not 0 < alpha_prime < 0.5:
        raise ConfigError(f"alpha_prime={alpha_prime} must lie in (0, 1/2)")
    if not kprime > k:
        raise ConfigError(f"window ({k}, {kprime}] is empty")
    if n < 0 or m < 0:
        raise ConfigError("levels must be nonnegative")
    return gamma / (math.sqrt(kprime - k) * 2.0 ** (-2 * alpha_prime * n) * 2.0 ** (-m))


def log_g(m: int) -> float:
    """Poisson(1) mass shifted to start at 1: ``g(m) = e^-1 / (m - 1)!``."""
    if m < 1:
        return -math.inf
    return -1.0 - math.lgamma(m)


def decay_exponent(n: int, m: int, p: Params) -> float:
    """``Delta_n**(2(alpha - alpha')) * Delta_m**(2 alpha - 1)``."""
    return 2.0 ** (-2 * n * (p.alpha - p.alpha_prime)) * 2.0 ** (m * (1 - 2 * p.alpha))


def log_v_widths(n: int, m: int, p: Params) -> np.ndarray:
    """``log v`` for window widths ``1..2**(n+m-1)`` (``v`` depends on the width only)."""
    w = np.arange(1, 2 ** (n + m - 1) + 1, dtype=float)
    return math.log(6) - 0.5 * p.gamma * w ** (p.beta - 0.5) * decay_exponent(n, m, p)


def log_prob_all_below(c: np.ndarray) -> float:
    """``log prod P(|W| <= c)`` over an array of thresholds."""
    c = np.asarray(c, dtype=float)
    return float(np.sum(np.log1p(-2 * np.exp(log_ndtr(-c)))))


def log_h_probability(n: int, m: int, dprime: int, rho: float) -> float:
    """Log probability that the Haar levels refining skeleton ``n`` to ``n+m`` stay below threshold."""
    return dprime * sum(level_log_prob_below(h, rho) for h in range(n, n + m))


def h_probability(n: int, m: int, dprime: int, rho: float) -> float:
    return math.exp(log_h_probability(n, m, dprime, rho))


def log_h_tail(n: int, dprime: int, rho: float, levels: int = 64) -> float:
    """Lower bound on the log probability that every Haar level ``>= n`` stays below threshold."""
    total = log_h_probability(n, levels, dprime, rho)
    # Beyond the summed levels: log(1 - x) >= -2x for x <= 1/2, and
    # P(|W| > c) <= exp(-c^2 / 2) with c^2 >= rho^2 h log 2 on level h.
    h0 = n + levels
    r = 2.0 ** (1 - rho * rho / 2)
    total -= 2 * dprime * r**h0 / (1 - r)
    return total


@dataclass
class ProposalTables:
    """Proposal masses for the level offset ``M`` and the window ``(k, k']``.

    ``g`` may be truncated to ``M <= m_cap`` (then renormalised); this is used
    for finite-horizon checks.  ``log_b[m - 1]`` holds ``log b_n(m)``.
    """

    n: int
    dprime: int
    params: Params
    m_max: int
    m_cap: int | None = None
    log_b: list[float] = field(default_factory=list)
    _log_v: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    def log_g(self, m: int) -> float:
        if self.m_cap is None:
            return log_g(m)
        if m > self.m_cap:
            return -math.inf
        norm = math.log(sum(math.exp(log_g(r)) for r in range(1, self.m_cap + 1)))
        return log_g(m) - norm

    def log_v(self, m: int) -> np.ndarray:
        if m not in self._log_v:
            self._log_v[m] = log_v_widths(self.n, m, self.params)
        return self._log_v[m]

    def log_b_of(self, m: int) -> float:
        lv = self.log_v(m)
        slots = lv.size
        counts = np.arange(slots, 0, -1, dtype=float)  # windows of width w: slots - w + 1
        return float(np.logaddexp.reduce(lv + np.log(counts)))

    def log_q(self, k: int, kprime: int, m: int) -> float:
        return float(self.log_v(m)[kprime - k - 1]) - self.log_b[m - 1]

    def sample_m(self, rng: np.random.Generator) -> int:
        if self.m_cap is None:
            return int(rng.poisson(1.0)) + 1
        probs = np.exp([self.log_g(r) for r in range(1, self.m_cap + 1)])
        return int(rng.choice(self.m_cap, p=probs / probs.sum())) + 1

    def sample_window(self, rng: np.random.Generator, m: int) -> tuple[int, int]:
        lv = self.log_v(m)
        slots = lv.size
        logw = lv + np.log(np.arange(slots, 0, -1, dtype=float))
        p = np.exp(logw - logw.max())
        w = int(rng.choice(slots, p=p / p.sum())) + 1
        k = int(rng.integers(0, slots - w + 1))
        return k, k + w


def ld_tables(
    n: int,
    m_max: int,
    dprime: int,
    params: Params,
    m_cap: int | None = None,
    check_feasible: bool = True,
) -> ProposalTables:
    """Build proposal tables for ``m <= m_max`` and certify feasibility.

    Feasibility means ``g(m) P(H_m) >= (4/3) d'^2 b_n(m)`` for every ``m``
    the proposal can draw, which keeps every acceptance ratio at most one.
    Offsets beyond ``m_max`` are certified with the bound
    ``b_n(m) <= 2**(2(m+n)) exp(-gamma A(m) / 2)``.
    """
    if m_max < 1:
        raise ConfigError("m_max must be at least 1")
    if n + m_max > params.max_level + 2:
        raise IterationGuardError(f"proposal tables up to level {n + m_max} exceed the level guard")
    t = ProposalTables(n, dprime, params, m_max, m_cap)
    for m in range(1, m_max + 1):
        lb = t.log_b_of(m)
        t.log_b.append(lb)
        if n + m >= 3:
            bound = 2 * (m + n) * math.log(2) - 0.5 * params.gamma * decay_exponent(n, m, params)
            if lb > bound + 1e-12:
                raise AssertionError(f"b_n(m) exceeds its closed-form bound at n={n}, m={m}")
    if check_feasible:
        _certify(t)
    return t


def _log_feasibility_gap(t: ProposalTables, m: int, log_b: float) -> float:
    """``log(g(m) P(H_m)) - log((4/3) d'^2 b_n(m))``; nonnegative when feasible."""
    p = t.params
    log_h = log_h_probability(t.n, m, t.dprime, p.rho)
    return t.log_g(m) + log_h - (math.log(4 / 3) + 2 * math.log(t.dprime) + log_b)


def _certify(t: ProposalTables) -> None:
    p = t.params
    top = t.m_max if t.m_cap is None else min(t.m_max, t.m_cap)
    for m in range(1, top + 1):
        gap = _log_feasibility_gap(t, m, t.log_b[m - 1])
        if gap < 0:
            raise InfeasibleTablesError(
                f"proposal tables infeasible at n={t.n}, m={m}: log-gap {gap:.3g}; extend n"
            )
    if t.m_cap is not None and t.m_cap <= t.m_max:
        return
    # Closed-form tail: once the bound's log decreases by at least log(m) per
    # step (the rate of log g) and the gap is nonnegative, it stays so.
    log_h_inf = log_h_tail(t.n, t.dprime, p.rho)
    m = t.m_max + 1
    while True:
        a_m = decay_exponent(t.n, m, p)
        bound = 2 * (m + t.n) * math.log(2) - 0.5 * p.gamma * a_m
        gap = log_g(m) + log_h_inf - (math.log(4 / 3) + 2 * math.log(t.dprime) + bound)
        drop = 0.5 * p.gamma * a_m * (2 ** (1 - 2 * p.alpha) - 1) - 2 * math.log(2)
        if gap >= 0 and drop >= math.log(m):
            return
        if m > t.m_max + 4096:
            raise InfeasibleTablesError(f"proposal tail not certified at n={t.n}; extend n")
        m += 1


def small_increment_flag(increments: np.ndarray, alpha_prime: float) -> bool:
    """Every level-``n`` increment satisfies ``|dZ| <= Delta_n**alpha'``."""
    n = int(round(math.log2(increments.shape[-1])))
    return bool(np.abs(increments).max() <= 2.0 ** (-n * alpha_prime))


def pair_sum_flag(increments: np.ndarray, beta: float, eps0: float, alpha_prime: float) -> bool:
    """Partial sums of ``dZ_i dZ_j`` grow at most like ``eps0 (m - l)**beta Delta_n**(2 alpha')``.

    Checked for every ordered pair, the diagonal included, since the proposal
    draws pairs uniformly from all of them.
    """
    n = int(round(math.log2(increments.shape[-1])))
    prods = increments[:, None, :] * increments[None, :, :]
    sums = np.zeros(prods.shape[:-1] + (prods.shape[-1] + 1,))
    np.cumsum(prods, axis=-1, out=sums[..., 1:])
    scale = eps0 * 2.0 ** (-2 * n * alpha_prime)
    return max_normalized_increment(sums, beta, scale) <= 1.0


@dataclass
class SessionState:
    """A lattice at level ``n`` whose finer coefficients are known below threshold."""

    lattice: WaveletLattice
    n: int
    params: Params
    small_increments: bool = False
    pair_sums: bool = False

    def __post_init__(self) -> None:
        if self.n > self.lattice.depth:
            raise ConfigError(f"session level {self.n} beyond lattice depth {self.lattice.depth}")
        self.refresh_flags()

    @property
    def flags(self) -> bool:
        return self.small_increments and self.pair_sums

    def refresh_flags(self) -> None:
        inc = self.lattice.increments(self.n)
        p = self.params
        self.small_increments = small_increment_flag(inc, p.alpha_prime)
        self.pair_sums = self.small_increments and pair_sum_flag(inc, p.beta, p.eps0, p.alpha_prime)

    def advance(self, rng: np.random.Generator) -> None:
        """Move one level down, drawing the next Haar level below threshold if needed."""
        if self.n + 1 > self.params.max_level:
            raise IterationGuardError(f"session passed level guard {self.params.max_level}")
        if self.lattice.depth == self.n:
            extend_below(rng, self.lattice, self.params.rho)
        self.n += 1
        self.refresh_flags()


@dataclass
class Proposal:
    m: int
    pair: tuple[int, int]
    window: tuple[int, int]
    sign: int
    lattice: WaveletLattice
    log_ratio: float
    violations: int


def _below_thresholds(lattice: WaveletLattice, start: int, stop: int, rho: float) -> bool:
    for h in range(start, stop):
        if (np.abs(lattice.coeffs[h]) > level_thresholds(h, rho)).any():
            return False
    return True


def _window_violates(lattice: WaveletLattice, level: int, pair, window, p: Params) -> bool:
    inc = lattice.increments(level)
    i, j = pair
    steps = inc[i, 0::2] * inc[j, 1::2]
    k, kp = window
    d = abs(float(steps[k:kp].sum()))
    return d > (kp - k) ** p.beta * walk_scale(level, p.alpha)


def procedure_b_weight(
    rng: np.random.Generator, state: SessionState, tables: ProposalTables
) -> Proposal:
    """One proposal with its unclamped log acceptance ratio (``-inf`` when rejected outright)."""
    p = state.params
    n = state.n
    d = state.lattice.dprime
    m = tables.sample_m(rng)
    if m > tables.m_max:
        tables.m_max = m
        while len(tables.log_b) < m:
            tables.log_b.append(tables.log_b_of(len(tables.log_b) + 1))
    if n + m > p.max_level:
        raise IterationGuardError(f"proposal reaches level {n + m} beyond guard {p.max_level}")
    i, j = int(rng.integers(d)), int(rng.integers(d))
    k, kp = tables.sample_window(rng, m)
    theta0 = theta0_select(m, k, kp, n, p.gamma, p.alpha_prime)
    sign = 1 if rng.random() < 0.5 else -1
    plus = build_schedule(n, m, (k, kp), theta0, (i, j))
    minus = build_schedule(n, m, (k, kp), -theta0, (i, j))
    base = state.lattice.increments(n)
    bound = (p.eps0, p.gamma, p.beta) if state.flags else None
    psi_plus = log_psi(plus, base, bound)
    psi_minus = log_psi(minus, base, bound)

    lat = state.lattice.copy()
    lat.truncate(n)
    sample_tilted_window(rng, plus if sign > 0 else minus, lat)
    finest = n + m
    inc = lat.increments(finest)
    dl = float((inc[i, 0::2] * inc[j, 1::2])[k:kp].sum())
    violations = level_record_count(lat, finest, p.alpha, p.beta)

    ok = (
        _below_thresholds(lat, n, finest, p.rho)
        and _window_violates(lat, finest, (i, j), (k, kp), p)
        and all(level_record_count(lat, lv, p.alpha, p.beta) == 0 for lv in range(n + 1, finest))
    )
    if not ok:
        return Proposal(m, (i, j), (k, kp), sign, lat, -math.inf, violations)
    log_mix = math.log(0.5) + np.logaddexp(theta0 * dl - psi_plus, -theta0 * dl - psi_minus)
    log_xi = -(tables.log_g(m) - 2 * math.log(d) + tables.log_q(k, kp, m) + log_mix)
    log_ratio = -log_h_probability(n, m, d, p.rho) + log_xi - math.log(violations)
    return Proposal(m, (i, j), (k, kp), sign, lat, float(log_ratio), violations)


def procedure_b(
    rng: np.random.Generator, state: SessionState, tables: ProposalTables
) -> tuple[int, Proposal]:
    """Bernoulli for "a walk record occurs below level ``n``", with the records' levels on success.

    On success the proposal lattice (with the accepted finer levels tagged
    below threshold) replaces ``state.lattice``.
    """
    prop = procedure_b_weight(rng, state, tables)
    log.debug(
        "procedure_b n=%d m=%d pair=%s window=%s log_ratio=%.6g",
        state.n, prop.m, prop.pair, prop.window, prop.log_ratio,
    )
    if prop.log_ratio > LOG_GUARD:
        raise AcceptanceRatioError(
            f"acceptance ratio exp({prop.log_ratio:.6g}) > 1 at n={state.n}, m={prop.m}, "
            f"pair={prop.pair}, window={prop.window}, violations={prop.violations}"
        )
    if math.log(rng.random()) < prop.log_ratio:
        lat = prop.lattice
        for h in range(state.n, state.n + prop.m):
            lat.tags[h][:] = BELOW
            lat.thresholds[h][:] = level_thresholds(h, state.params.rho)
        state.lattice = lat
        return 1, prop
    return 0, prop


def no_future_record(rng: np.random.Generator, state: SessionState) -> bool:
    """Bernoulli with parameter ``P(no walk record below the state's level)``.

    Runs :func:`procedure_b` once the small-increment conditions hold and the
    tables are feasible; until then draws one more level below threshold and
    fails on any record there.  Mutates ``state``.
    """
    p = state.params
    while True:
        if state.flags:
            try:
                tables = ld_tables(state.n, 1, state.lattice.dprime, p)
            except InfeasibleTablesError:
                tables = None
            if tables is not None:
                f, _ = procedure_b(rng, state, tables)
                return f == 0
        state.advance(rng)
        if level_record_count(state.lattice, state.n, p.alpha, p.beta) > 0:
            return False


def continue_no_breaker(rng: np.random.Generator, state: SessionState, m: int) -> WaveletLattice:
    """Finer levels ``n..n+m-1`` given no walk record ever occurs below level ``n``.

    Proposals come from the threshold-conditioned prior; a proposal is kept
    when it has no record on levels ``n+1..n+m`` and an independent
    :func:`no_future_record` draw at level ``n+m`` succeeds.
    """
    p = state.params
    n = state.n
    for attempt in range(1, p.max_attempts + 1):
        lat = state.lattice.copy()
        lat.truncate(n)
        extend_below(rng, lat, p.rho, m)
        if any(level_record_count(lat, lv, p.alpha, p.beta) for lv in range(n + 1, n + m + 1)):
            continue
        probe = SessionState(lat.copy(), n + m, p)
        if no_future_record(rng, probe):
            log.debug("continue_no_breaker accepted after %d attempts", attempt)
            state.lattice = lat
            return lat
    raise IterationGuardError(f"continue_no_breaker exceeded {p.max_attempts} attempts")
