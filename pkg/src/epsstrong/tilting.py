"""Exponential tilting of the dyadic refinement by a Lévy-walk increment.

Tilting the law of the finer levels by ``exp(theta0 * (L(k') - L(k)))``,
where ``L`` is the walk of the finest level, keeps every refinement Gaussian.
Integrating the finest level out leaves a quadratic form in the parent
increments,

    sum_r theta(r) * U_r * V_r + eta(r) * (U_r**2 + V_r**2),

with ``U``/``V`` the increments of the two walk components.  Repeating the
integration one level at a time gives the schedule of forms stored in
:class:`TiltSchedule`, and sampling the refinement top-down from the
conditional Gaussian laws draws exactly from the tilted measure.

Derivation of one coarsening step.  Children ``2q-1, 2q`` of parent slot
``q`` are ``U/2 +- s*w_i`` and ``V/2 +- s*w_j``, ``s**2`` the midpoint
variance.  With ``theta+- = theta(2q-1) +- theta(2q)`` (same for eta) the
child form is

    theta+ (UV/4 + s^2 w_i w_j) + eta+ ((U^2 + V^2)/4 + s^2 (w_i^2 + w_j^2))
      + s w_i (eta- U + theta- V/2) + s w_j (eta- V + theta- U/2)

which is the bivariate form of :func:`phi_quadratic` with ``c1 = c2 =
s^2 eta+`` and ``b = s^2 theta+``.  Completing the square yields the parent
coefficients computed in :func:`recurse_schedule`.

When both walk components coincide the form is univariate,
``kappa(r) * U_r**2``, and the same computation runs with a scalar.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dyadic_bm import WaveletLattice, midpoint_scale
from .errors import ConfigError, InvariantViolation


class TiltDomainError(ConfigError):
    """A quadratic tilt lies outside the region where it is integrable."""


@dataclass(frozen=True)
class QuadraticTilt:
    """Exponent ``a1 Y + a2 Z + b Y Z + c1 Y^2 + c2 Z^2`` for independent N(0,1) ``Y, Z``."""

    a1: float
    a2: float
    b: float
    c1: float
    c2: float

    def __post_init__(self) -> None:
        for name, c in (("c1", self.c1), ("c2", self.c2)):
            if not abs(2 * c) < 1:
                raise TiltDomainError(f"|2 {name}| < 1 fails: {name}={c}")
        s1, s2 = 1 - 2 * self.c1, 1 - 2 * self.c2
        if not abs(self.b) < s1 * s2:
            raise TiltDomainError(
                f"|b| < (1 - 2 c1)(1 - 2 c2) fails: |b|={abs(self.b)}, bound={s1 * s2}"
            )
        if not self.b * self.b < s1 * s2:
            raise TiltDomainError(
                f"b^2 < (1 - 2 c1)(1 - 2 c2) fails: b^2={self.b * self.b}, bound={s1 * s2}"
            )

    def precision(self) -> np.ndarray:
        return np.array([[1 - 2 * self.c1, -self.b], [-self.b, 1 - 2 * self.c2]])


@dataclass(frozen=True)
class TiltedPairLaw:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self) -> None:
        cov = self.covariance
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-14 * np.abs(cov).max()):
            raise InvariantViolation("tilted covariance is not symmetric")
        if not (cov[0, 0] > 0 and np.linalg.det(cov) > 0):
            raise InvariantViolation("tilted covariance is not positive definite")


def phi_quadratic(t: QuadraticTilt) -> tuple[float, TiltedPairLaw]:
    """``E exp(form)`` and the Gaussian law of ``(Y, Z)`` under the tilt."""
    p = t.precision()
    det = p[0, 0] * p[1, 1] - t.b * t.b
    cov = np.array([[p[1, 1], t.b], [t.b, p[0, 0]]]) / det
    a = np.array([t.a1, t.a2])
    mean = cov @ a
    value = math.exp(0.5 * float(a @ mean)) / math.sqrt(det)
    return value, TiltedPairLaw(mean, cov)


def level_one_tilt(theta0: float, delta: float) -> tuple[float, float, float]:
    """Parent form left after integrating the finest level of one walk step.

    ``delta`` is the midpoint variance of the finest refinement.  Returns the
    cross coefficient, the square coefficient and the log normaliser of one
    window slot.
    """
    x = (theta0 * delta) ** 2
    if not x < 1:
        raise TiltDomainError(f"|theta0 * delta| < 1 fails: theta0={theta0}, delta={delta}")
    theta1 = theta0 / (4 * (1 - x))
    eta1 = theta0 * theta0 * delta / (8 * (1 - x))
    # The two forms are tied: 2 theta1^2 delta = eta1 / (1 - x).
    if not (eta1 <= 2 * theta1 * theta1 * delta * (1 + 1e-12) and
            2 * theta1 * theta1 * delta <= 2.5 * eta1 * (1 + 1e-12)):
        raise InvariantViolation(
            f"level-one forms out of ratio: theta1={theta1}, eta1={eta1}, delta={delta}"
        )
    return theta1, eta1, -0.5 * math.log1p(-x)


def level_one_diagonal(theta0: float, delta: float) -> tuple[float, float]:
    """Univariate analogue: ``(kappa1, log normaliser)`` for one window slot."""
    p = 1 + 2 * theta0 * delta
    if not (abs(2 * theta0 * delta) < 1):
        raise TiltDomainError(f"|2 theta0 delta| < 1 fails: theta0={theta0}, delta={delta}")
    return theta0 / 4, -0.5 * math.log(p)


def _pair_coefficients(theta: np.ndarray, eta: np.ndarray, child_level: int):
    s2 = midpoint_scale(child_level) ** 2
    tp, tm = theta[0::2] + theta[1::2], theta[0::2] - theta[1::2]
    ep, em = eta[0::2] + eta[1::2], eta[0::2] - eta[1::2]
    p = 1 - 2 * s2 * ep
    b = s2 * tp
    return s2, tp, tm, ep, em, p, b


def _check_pair_domain(p: np.ndarray, b: np.ndarray, child_level: int) -> None:
    bad = ~(np.abs(1 - p) < 1)
    if bad.any():
        raise TiltDomainError(f"|2 c| < 1 fails at child level {child_level}: c={(1 - p[bad][0]) / 2}")
    bad = ~(np.abs(b) < p * p)
    if bad.any():
        q = np.flatnonzero(bad)[0]
        raise TiltDomainError(
            f"|b| < (1 - 2 c)^2 fails at child level {child_level}, slot {q}: b={b[q]}, c={(1 - p[q]) / 2}"
        )


def recurse_schedule(
    prev_theta: np.ndarray,
    prev_eta: np.ndarray,
    child_level: int,
    diagonal: bool = False,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Integrate out the refinement producing ``child_level``.

    ``prev_*`` hold the forms on the ``2**child_level`` child slots; the result
    lives on the ``2**(child_level - 1)`` parent slots.  For ``diagonal``
    ``prev_theta`` carries the univariate coefficient and ``prev_eta`` is
    ignored (returned as zeros).
    """
    if diagonal:
        s2 = midpoint_scale(child_level) ** 2
        kp = prev_theta[0::2] + prev_theta[1::2]
        km = prev_theta[0::2] - prev_theta[1::2]
        p = 1 - 2 * s2 * kp
        bad = ~(np.abs(1 - p) < 1)
        if bad.any():
            raise TiltDomainError(
                f"|2 c| < 1 fails at child level {child_level}: c={(1 - p[bad][0]) / 2}"
            )
        kappa = kp / 4 + s2 * km * km / (2 * p)
        return kappa, np.zeros_like(kappa), float(-0.5 * np.log(p).sum())

    s2, tp, tm, ep, em, p, b = _pair_coefficients(prev_theta, prev_eta, child_level)
    _check_pair_domain(p, b, child_level)
    det = p * p - b * b
    sq = em * em + tm * tm / 4
    eta = ep / 4 + s2 / (2 * det) * (p * sq + b * em * tm)
    theta = tp / 4 + s2 / det * (p * em * tm + b * sq)
    return theta, eta, float(-0.5 * np.log(det).sum())


@dataclass(frozen=True)
class TiltSchedule:
    """Quadratic forms left after integrating levels ``n+m`` down to ``n+m-l``.

    ``theta[l - 1]`` and ``eta[l - 1]`` live on the ``2**(n + m - l)`` slots
    of skeleton level ``n + m - l``.  ``log_c`` sums the log normalisers of
    levels ``l >= 2``; the level-one normaliser is kept per window slot.
    """

    n: int
    m: int
    window: tuple[int, int]
    pair: tuple[int, int]
    theta0: float
    theta: tuple[np.ndarray, ...]
    eta: tuple[np.ndarray, ...]
    log_c: float
    level_one_log_norm: float

    @property
    def diagonal(self) -> bool:
        return self.pair[0] == self.pair[1]

    @property
    def width(self) -> int:
        return self.window[1] - self.window[0]

    def __post_init__(self) -> None:
        sign = 1.0 if self.theta0 >= 0 else -1.0
        for l, (th, et) in enumerate(zip(self.theta, self.eta), start=1):
            scale = max(float(np.abs(th).max()), float(np.abs(et).max()), 1e-300)
            if (sign * th < -1e-12 * scale).any() or (et < -1e-12 * scale).any():
                raise InvariantViolation(f"tilt forms change sign at level {l}")
        if not math.isfinite(self.log_c):
            raise InvariantViolation("non-finite tilt normaliser")


def build_schedule(
    n: int,
    m: int,
    window: tuple[int, int],
    theta0: float,
    pair: tuple[int, int],
) -> TiltSchedule:
    """Forms for tilting by ``theta0 * (L(k') - L(k))`` on the level-``n+m`` walk."""
    k, kp = window
    if m < 1 or n < 0:
        raise ConfigError(f"need n >= 0 and m >= 1, got n={n}, m={m}")
    slots = 2 ** (n + m - 1)
    if not 0 <= k < kp <= slots:
        raise ConfigError(f"window ({k}, {kp}] must lie in (0, {slots}]")
    finest = n + m
    delta = midpoint_scale(finest) ** 2
    diagonal = pair[0] == pair[1]
    theta = np.zeros(slots)
    eta = np.zeros(slots)
    if diagonal:
        kappa1, norm1 = level_one_diagonal(theta0, delta)
        theta[k:kp] = kappa1
    else:
        theta1, eta1, norm1 = level_one_tilt(theta0, delta)
        theta[k:kp] = theta1
        eta[k:kp] = eta1
    thetas, etas, log_c = [theta], [eta], 0.0
    for child_level in range(finest - 1, n, -1):
        theta, eta, lc = recurse_schedule(theta, eta, child_level, diagonal)
        thetas.append(theta)
        etas.append(eta)
        log_c += lc
    return TiltSchedule(n, m, (k, kp), tuple(pair), theta0, tuple(thetas), tuple(etas), log_c, norm1)


def log_psi(
    schedule: TiltSchedule,
    increments: np.ndarray,
    bound: tuple[float, float, float] | None = None,
) -> float:
    """``log E[exp(theta0 (L(k') - L(k))) | level-n skeleton]``.

    ``increments`` is the level-``n`` skeleton, shape ``(d', 2**n)``.  When
    ``bound = (eps0, gamma, beta)`` is given the value is checked against
    ``log 4 + eps0 * gamma * (k' - k)**(beta - 1/2)``, which holds whenever the
    skeleton satisfies the small-increment conditions.
    """
    if increments.shape[-1] != 2**schedule.n:
        raise ConfigError(
            f"skeleton has {increments.shape[-1]} slots, schedule expects level {schedule.n}"
        )
    i, j = schedule.pair
    ui, uj = increments[i], increments[j]
    theta, eta = schedule.theta[-1], schedule.eta[-1]
    if schedule.diagonal:
        quad = float(np.dot(theta, ui * ui))
    else:
        quad = float(np.dot(theta, ui * uj) + np.dot(eta, ui * ui + uj * uj))
    psi = schedule.log_c + schedule.width * schedule.level_one_log_norm + quad
    if bound is not None:
        eps0, gamma, beta = bound
        cap = math.log(4) + eps0 * gamma * schedule.width ** (beta - 0.5)
        if psi > cap:
            raise InvariantViolation(f"log psi = {psi} exceeds its bound {cap}")
    return psi


def _sample_pair_level(rng, theta, eta, parent_i, parent_j, child_level):
    s2, tp, tm, ep, em, p, b = _pair_coefficients(theta, eta, child_level)
    _check_pair_domain(p, b, child_level)
    s = math.sqrt(s2)
    a1 = s * (em * parent_i + tm * parent_j / 2)
    a2 = s * (em * parent_j + tm * parent_i / 2)
    det = p * p - b * b
    mu1 = (p * a1 + b * a2) / det
    mu2 = (b * a1 + p * a2) / det
    # Covariance [[p, b], [b, p]] / det, drawn through its Cholesky factor.
    l11 = np.sqrt(p / det)
    l21 = b / det / l11
    l22 = np.sqrt(p / det - l21 * l21)
    z1, z2 = rng.standard_normal((2, p.size))
    return mu1 + l11 * z1, mu2 + l21 * z1 + l22 * z2


def sample_tilted_window(
    rng: np.random.Generator, schedule: TiltSchedule, lattice: WaveletLattice
) -> None:
    """Append Haar levels ``n..n+m-1`` drawn from the tilted law.

    The lattice must stop at skeleton level ``n``.  Components outside the
    tilted pair are free standard normals.
    """
    n, m = schedule.n, schedule.m
    if lattice.depth != n:
        raise ConfigError(f"lattice depth {lattice.depth} != schedule level {n}")
    i, j = schedule.pair
    k, kp = schedule.window
    for l in range(m, 0, -1):
        child_level = n + m - l + 1
        parent = lattice.increments(child_level - 1)
        w = rng.standard_normal((lattice.dprime, 2 ** (child_level - 1)))
        if l == 1:
            s2 = midpoint_scale(child_level) ** 2
            t0 = schedule.theta0
            if schedule.diagonal:
                w[i, k:kp] /= math.sqrt(1 + 2 * t0 * s2)
            else:
                s = math.sqrt(s2)
                u, v = parent[i, k:kp], parent[j, k:kp]
                # Precision [[1, t0 s^2], [t0 s^2, 1]], linear term (t0 s V/2, -t0 s U/2).
                x = t0 * s2
                det = 1 - x * x
                a1, a2 = t0 * s * v / 2, -t0 * s * u / 2
                mu1 = (a1 - x * a2) / det
                mu2 = (a2 - x * a1) / det
                l11 = math.sqrt(1 / det)
                l21 = -x / det / l11
                l22 = math.sqrt(1 / det - l21 * l21)
                z1, z2 = w[i, k:kp].copy(), w[j, k:kp].copy()
                w[i, k:kp] = mu1 + l11 * z1
                w[j, k:kp] = mu2 + l21 * z1 + l22 * z2
        else:
            theta, eta = schedule.theta[l - 2], schedule.eta[l - 2]
            if schedule.diagonal:
                s2 = midpoint_scale(child_level) ** 2
                kp_ = theta[0::2] + theta[1::2]
                km = theta[0::2] - theta[1::2]
                p = 1 - 2 * s2 * kp_
                a = math.sqrt(s2) * km * parent[i]
                w[i] = a / p + w[i] / np.sqrt(p)
            else:
                w[i], w[j] = _sample_pair_level(rng, theta, eta, parent[i], parent[j], child_level)
        lattice.append_level(w)
