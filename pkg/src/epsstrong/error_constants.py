"""Explicit almost-sure error constant of the tolerance-enforced Euler scheme.

Inputs are the drift/diffusion bound ``M``, the path norms ``K_alpha``,
``K_2alpha`` (area) and ``K_R`` (area remainder), and the dimensions.  Three
coupled linear-quadratic systems are solved on a dyadic grid of step sizes
and combined into ``G = G1 + G2``; a tolerance ``eps`` then needs level
``n`` with ``G * 2**(-n (2 alpha - beta)) <= eps``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

from .errors import ConfigError, EpsStrongError

SLACK = 1.01
GRID = [2.0**-j for j in range(61)]
# delta'' is only bounded by B delta''^alpha < 2^(alpha+beta) - 2, which for
# realistic B pushes it far below the other grids.
FINE_GRID = [2.0**-j for j in range(1001)]
MAX_ITER = 200
REL_TOL = 1e-12


@dataclass(frozen=True)
class ErrorConstants:
    delta: float
    delta_prime: float
    delta_double_prime: float
    c1_delta: float
    c2_delta: float
    c3_delta: float
    c1: float
    c2: float
    c3: float
    b1_delta: float
    b2_delta: float
    b3_delta: float
    b: float
    c4_delta: float
    c4: float
    g1: float
    g2: float
    g: float
    m: float
    k_alpha: float
    k2_alpha: float
    k_r: float
    d: int
    dprime: int
    alpha: float
    beta: float

    def to_dict(self) -> dict:
        return asdict(self)

    def violations(self) -> list[str]:
        """Inequalities of the three systems that fail with the stored values."""
        a, m, d = self.alpha, self.m, self.d
        kz, ka = self.k_alpha, self.k2_alpha
        kap = 2 / (1 - 2 ** (1 - 3 * a))
        dl, dp, dpp = self.delta, self.delta_prime, self.delta_double_prime
        c1, c2, c3 = self.c1_delta, self.c2_delta, self.c3_delta
        b1, b2, b3 = self.b1_delta, self.b2_delta, self.b3_delta
        checks = {
            "C1(delta)": c1 >= c3 * dl ** (2 * a) + m * dl ** (1 - a) + d * m * kz
            + d**3 * m * m * ka * dl**a,
            "C2(delta)": c2 >= c3 * dl**a + d**3 * m * m * ka,
            "C3(delta)": c3 >= kap * (m * c1 + d * m * c1 * c1 * kz + d * d * m * c2 * kz
                                      + 2 * d**3 * m * m * c1 * ka),
            "B1(delta')": b1 > b3 * dp ** (2 * a) + 2 * m * dp ** (1 - a) + 2 * m * kz
            + 4 * m * m * ka * dp**a,
            "B2(delta')": b2 > b3 * dp**a + 4 * m * m * ka,
            "B3(delta')": b3 > 2 * kap * (m * b1 + m * b1 * b1 * kz + m * b2 * kz
                                          + 2 * m * m * b1 * ka),
            "B delta''^alpha": self.b * dpp**a < 2 ** (a + self.beta) - 2,
            "C4(delta'')": self.c4_delta >= _c4_delta(self.b, dpp, self, self.c1) * (1 - 1e-12),
        }
        return [name for name, ok in checks.items() if not ok]


def _fixed_point(step: Callable[[float], float]) -> float | None:
    """Least fixed point of an increasing map by iteration from 0, or None.

    Accepted only when the iteration settles within ``MAX_ITER`` steps and the
    map is a contraction there (numerical derivative at most 1/2).
    """
    x = 0.0
    for _ in range(MAX_ITER):
        nxt = step(x)
        if not math.isfinite(nxt):
            return None
        if abs(nxt - x) <= REL_TOL * abs(nxt):
            h = 1e-6 * max(abs(nxt), 1e-300)
            slope = (step(nxt + h) - step(nxt)) / h
            return nxt if slope <= 0.5 else None
        x = nxt
    return None


def _c_system(delta, a, m, d, kz, ka):
    kap = 2 / (1 - 2 ** (1 - 3 * a))
    a1 = m * delta ** (1 - a) + d * m * kz + d**3 * m * m * ka * delta**a
    a2 = d**3 * m * m * ka

    def parts(c3):
        c1 = SLACK * (c3 * delta ** (2 * a) + a1)
        c2 = SLACK * (c3 * delta**a + a2)
        return c1, c2

    def step(c3):
        c1, c2 = parts(c3)
        return SLACK * kap * (m * c1 + d * m * c1 * c1 * kz + d * d * m * c2 * kz
                              + 2 * d**3 * m * m * c1 * ka)

    return parts, step


def _b_system(delta, a, m, kz, ka):
    kap = 4 / (1 - 2 ** (1 - 3 * a))
    a1 = 2 * m * delta ** (1 - a) + 2 * m * kz + 4 * m * m * ka * delta**a
    a2 = 4 * m * m * ka

    def parts(b3):
        return SLACK * (b3 * delta ** (2 * a) + a1), SLACK * (b3 * delta**a + a2)

    def step(b3):
        b1, b2 = parts(b3)
        # The "B1(delta'^2)" term is read as B1(delta')^2, mirroring the C-system.
        return SLACK * kap * (m * b1 + m * b1 * b1 * kz + m * b2 * kz + 2 * m * m * b1 * ka)

    return parts, step


def _c4_delta(b, dpp, ec, c1):
    d, m, gr = ec.d, ec.m, ec.k_r
    a, beta = ec.alpha, ec.beta
    core = b * d**3 * m * m * gr + 2 * d**3 * m * m * c1 * gr
    return 2 * core / (1 - (2 + b * dpp**a) / 2 ** (a + beta))


def _scan(build):
    for delta in GRID:
        parts, step = build(delta)
        x3 = _fixed_point(step)
        if x3 is not None:
            x1, x2 = parts(x3)
            return delta, x1, x2, x3
    raise EpsStrongError(f"no feasible step size down to {GRID[-1]:g}")


def procedure_a(
    m: float,
    k_alpha: float,
    k2_alpha: float,
    k_r: float,
    d: int,
    dprime: int,
    alpha: float,
    beta: float,
) -> ErrorConstants:
    """Compute the error constant ``G`` and every intermediate quantity."""
    for name, val in (("M", m), ("K_alpha", k_alpha), ("K_2alpha", k2_alpha), ("K_R", k_r)):
        if not math.isfinite(val) or val < 0:
            raise ConfigError(f"{name}={val} must be finite and nonnegative")
    if not m > 0:
        raise ConfigError(f"M={m} must be positive")
    if not 1 / 3 < alpha < 1 / 2:
        raise ConfigError(f"alpha={alpha} must lie in (1/3, 1/2)")
    if not 1 - alpha < beta < 2 * alpha:
        raise ConfigError(f"beta={beta} must lie in (1 - alpha, 2 alpha)")
    if d < 1 or dprime < 1:
        raise ConfigError("dimensions must be positive")
    a, kz, ka = alpha, k_alpha, k2_alpha

    delta, c1d, c2d, c3d = _scan(lambda dl: _c_system(dl, a, m, d, kz, ka))
    kap = 2 / (1 - 2 ** (1 - 3 * a))
    c1 = 2 / delta * c1d
    c2 = 2 / delta * (c2d + m * c1 + d * m * c1 * kz)
    c3 = kap * (m * c1 + d * m * c1 * c1 * kz + d * d * m * c2 * kz + 2 * d**3 * m * m * c1 * ka)

    dp, b1d, b2d, b3d = _scan(lambda dl: _b_system(dl, a, m, kz, ka))
    b = 2 / dp * b1d
    g1 = (1 + b) * c3

    limit = 2 ** (alpha + beta) - 2
    proto = ErrorConstants(
        delta, dp, 0.0, c1d, c2d, c3d, c1, c2, c3, b1d, b2d, b3d, b, 0.0, 0.0, g1, 0.0, 0.0,
        m, k_alpha, k2_alpha, k_r, d, dprime, alpha, beta,
    )
    core = b * d**3 * m * m * k_r + 2 * d**3 * m * m * c1 * k_r
    best = None
    for dpp in FINE_GRID:
        if not b * dpp**a < limit:
            continue
        c4d = _c4_delta(b, dpp, proto, c1)
        c4 = (1 + b * dpp**a) * c4d + 2 * core / dpp
        if best is None or c4 < best[2]:
            best = (dpp, c4d, c4)
    if best is None:
        raise EpsStrongError(f"no step size satisfies B delta''^alpha < {limit:g}")
    dpp, c4d, c4 = best
    g2 = c4 + d**3 * m * m * k_r
    out = ErrorConstants(
        delta, dp, dpp, c1d, c2d, c3d, c1, c2, c3, b1d, b2d, b3d, b, c4d, c4, g1, g2, g1 + g2,
        m, k_alpha, k2_alpha, k_r, d, dprime, alpha, beta,
    )
    bad = out.violations()
    if bad:
        raise EpsStrongError(f"error constants fail {', '.join(bad)}")
    return out


def level_for_tolerance(g: float, eps: float, alpha: float, beta: float) -> int:
    """Smallest ``n >= 0`` with ``g * 2**(-n (2 alpha - beta)) <= eps``."""
    if not (eps > 0 and g > 0):
        raise ConfigError("g and eps must be positive")
    rate = 2 * alpha - beta
    if not rate > 0:
        raise ConfigError("need beta < 2 alpha")
    n = max(0, math.ceil(math.log2(g / eps) / rate))
    while g * 2.0 ** (-n * rate) > eps:
        n += 1
    while n > 0 and g * 2.0 ** (-(n - 1) * rate) <= eps:
        n -= 1
    return n
