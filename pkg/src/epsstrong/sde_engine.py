"""SDE layer: Euler schemes on the certified lattice and the tolerance-enforced driver.

:func:`simulate_eps_strong` certifies a Brownian lattice (record breakers,
walk records, Hölder bounds), turns the bounds into the error constant ``G``,
picks the level ``n(eps)`` and returns the Euler path there together with
everything needed to refine it later on the same probability space.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .area_records import (
    SessionState,
    continue_no_breaker,
    ld_tables,
    procedure_b,
)
from .dyadic_bm import PathSkeleton, WaveletLattice
from .error_constants import ErrorConstants, level_for_tolerance, procedure_a
from .errors import ConfigError, EpsStrongError, InfeasibleTablesError, InvariantViolation, IterationGuardError
from .levy_area import AreaTable, gamma_bounds, level_record_count
from .params import Params
from .record_breakers import HolderCertificate, k_alpha_bound, run_algorithm_one

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SdeModel:
    """Coefficients of ``dX = mu(X) dt + sigma(X) dZ`` with a common sup bound ``bound_m``.

    ``diffusion_jacobian(x)[i, j, l]`` is ``d sigma_ij / d x_l``.
    """

    name: str
    dim_x: int
    dim_z: int
    drift: Callable[[np.ndarray], np.ndarray]
    drift_jacobian: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    diffusion_jacobian: Callable[[np.ndarray], np.ndarray]
    bound_m: float
    x0: np.ndarray
    # Radius inside which a truncated model agrees with its untruncated source.
    trust_radius: float = math.inf

    def __post_init__(self) -> None:
        if not self.bound_m > 0:
            raise ConfigError(f"model bound M={self.bound_m} must be positive")
        if np.shape(self.x0) != (self.dim_x,):
            raise ConfigError(f"x0 has shape {np.shape(self.x0)}, expected ({self.dim_x},)")

    def spot_check(self, rng: np.random.Generator, samples: int = 256, radius: float = 10.0) -> None:
        """Evaluate the coefficients at random states and compare with ``bound_m``.

        A probabilistic guard against a mis-declared bound, not a proof.
        """
        for x in rng.uniform(-radius, radius, size=(samples, self.dim_x)):
            for name, val, shape in (
                ("drift", self.drift(x), (self.dim_x,)),
                ("drift jacobian", self.drift_jacobian(x), (self.dim_x, self.dim_x)),
                ("diffusion", self.diffusion(x), (self.dim_x, self.dim_z)),
                ("diffusion jacobian", self.diffusion_jacobian(x), (self.dim_x, self.dim_z, self.dim_x)),
            ):
                val = np.asarray(val)
                if val.shape != shape:
                    raise ConfigError(f"{self.name}: {name} has shape {val.shape}, expected {shape}")
                if np.abs(val).max() > self.bound_m * (1 + 1e-12):
                    raise InvariantViolation(
                        f"{self.name}: |{name}| = {np.abs(val).max():.6g} exceeds M = {self.bound_m} at x = {x}"
                    )


# Smooth saturation used to bound linear coefficients.  The step
# 35t^4 - 84t^5 + 70t^6 - 20t^7 has three continuous derivatives; its
# antiderivative gives a clamp equal to the identity on [-c, c] and constant
# beyond 2c.
def _step(t):
    return t**4 * (35 - 84 * t + 70 * t * t - 20 * t**3)


def _step_integral(t):
    return t**5 * (7 - 14 * t + 10 * t * t - 2.5 * t**3)


STEP_SLOPE_MAX = 35 / 16  # max of the step's derivative, attained at t = 1/2
STEP_CURVE_MAX = 7.52  # bound on |second derivative of the step| (grid max 7.5132)


def smooth_clamp(x, c: float):
    x = np.asarray(x, dtype=float)
    u = np.abs(x)
    t = np.clip((u - c) / c, 0.0, 1.0)
    inside = u <= c
    out = np.where(inside, u, c + c * (t - _step_integral(t)))
    return np.sign(x) * out


def smooth_clamp_slope(x, c: float):
    u = np.abs(np.asarray(x, dtype=float))
    t = np.clip((u - c) / c, 0.0, 1.0)
    return np.where(u <= c, 1.0, 1.0 - _step(t))


def _affine_clamped(name, drift_slope, diff_slope, diff_shift, c, x0):
    """1-d model ``mu = a * clamp(x)``, ``sigma = b * clamp(x) + s``."""
    a, b, s = drift_slope, diff_slope, diff_shift
    sat = 1.5 * c
    bound = max(
        abs(a) * sat,
        abs(b) * sat + abs(s),
        abs(a),
        abs(b),
        abs(b) * STEP_SLOPE_MAX / c,
        abs(a) * STEP_SLOPE_MAX / c,
        abs(b) * STEP_CURVE_MAX / (c * c),
    )
    return SdeModel(
        name=name,
        dim_x=1,
        dim_z=1,
        drift=lambda x: a * smooth_clamp(x, c),
        drift_jacobian=lambda x: (a * smooth_clamp_slope(x, c)).reshape(1, 1),
        diffusion=lambda x: (b * smooth_clamp(x, c) + s).reshape(1, 1),
        diffusion_jacobian=lambda x: (b * smooth_clamp_slope(x, c)).reshape(1, 1, 1),
        bound_m=float(bound),
        x0=np.array([x0], dtype=float),
        trust_radius=c,
    )


def linear_model(clip: float = 2.0) -> SdeModel:
    """Mean-reverting linear SDE with smoothly clipped coefficients."""
    return _affine_clamped("linear", -0.5, 0.3, 0.2, clip, 0.5)


def trig_model() -> SdeModel:
    """Two-dimensional model with trigonometric coefficients (all derivatives <= 1/2)."""

    def drift(x):
        return 0.5 * np.array([np.sin(x[1]), np.cos(x[0])])

    def drift_jac(x):
        return 0.5 * np.array([[0.0, np.cos(x[1])], [-np.sin(x[0]), 0.0]])

    def diffusion(x):
        return 0.5 * np.array([[np.cos(x[0]), 0.5 * np.sin(x[1])], [0.5 * np.sin(x[0]), np.cos(x[1])]])

    def diffusion_jac(x):
        j = np.zeros((2, 2, 2))
        j[0, 0, 0] = -0.5 * np.sin(x[0])
        j[0, 1, 1] = 0.25 * np.cos(x[1])
        j[1, 0, 0] = 0.25 * np.cos(x[0])
        j[1, 1, 1] = -0.5 * np.sin(x[1])
        return j

    return SdeModel("trig-bounded", 2, 2, drift, drift_jac, diffusion, diffusion_jac, 0.5, np.zeros(2))


def localized_linear_family(c: float) -> SdeModel:
    """Truncation of ``dX = X/2 dt + (0.3 X + 0.2) dZ`` agreeing with it on ``|x| <= c``."""
    return _affine_clamped("localized-linear", 0.5, 0.3, 0.2, c, 0.5)


MODELS: dict[str, Callable[[], SdeModel]] = {
    "linear": linear_model,
    "trig-bounded": trig_model,
    "localized-linear": lambda: localized_linear_family(2.0),
}


def get_model(name: str) -> SdeModel:
    try:
        return MODELS[name]()
    except KeyError:
        raise ConfigError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None


def _finite_or_raise(val, what, x, k):
    if not np.all(np.isfinite(val)):
        raise InvariantViolation(f"non-finite {what} at step {k}, state {x}")


def euler_path(model: SdeModel, skeleton: PathSkeleton) -> np.ndarray:
    """Euler recursion on the dyadic grid, shape ``(2**n + 1, d)``."""
    if skeleton.dprime != model.dim_z:
        raise ConfigError(f"skeleton has {skeleton.dprime} components, model needs {model.dim_z}")
    dt = 2.0 ** -skeleton.level
    inc = skeleton.increments
    steps = inc.shape[1]
    out = np.empty((steps + 1, model.dim_x))
    out[0] = model.x0
    for k in range(steps):
        x = out[k]
        mu, sig = model.drift(x), model.diffusion(x)
        _finite_or_raise(mu, "drift", x, k)
        _finite_or_raise(sig, "diffusion", x, k)
        out[k + 1] = x + mu * dt + sig @ inc[:, k]
    return out


def area_euler_path(model: SdeModel, skeleton: PathSkeleton, areas: AreaTable) -> np.ndarray:
    """Euler recursion plus ``sum_{j,l,m} d_l sigma_ij sigma_lm A_mj`` per step."""
    if areas.level != skeleton.level:
        raise ConfigError(f"area table level {areas.level} != skeleton level {skeleton.level}")
    dt = 2.0 ** -skeleton.level
    inc = skeleton.increments
    steps = inc.shape[1]
    out = np.empty((steps + 1, model.dim_x))
    out[0] = model.x0
    for k in range(steps):
        x = out[k]
        sig = model.diffusion(x)
        jac = model.diffusion_jacobian(x)
        corr = np.einsum("ijl,lm,mj->i", jac, sig, areas.entries[:, :, k])
        step = model.drift(x) * dt + sig @ inc[:, k] + corr
        _finite_or_raise(step, "area-Euler step", x, k)
        out[k + 1] = x + step
    return out


@dataclass
class Session:
    """Live state allowing further refinement; owned by exactly one path."""

    state: SessionState
    seed: int
    refinements: int = 0
    owner: int | None = None

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed, self.refinements]))


@dataclass(frozen=True)
class EpsStrongPath:
    level: int
    values: np.ndarray
    epsilon: float
    constants: ErrorConstants
    certificate: HolderCertificate
    seed: int
    model: SdeModel = field(repr=False)
    session: Session | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.values.shape[0] != 2**self.level + 1:
            raise InvariantViolation("path values do not match its level")
        bound = self.constants.g * 2.0 ** (-self.level * (2 * self.constants.alpha - self.constants.beta))
        if not self.epsilon >= bound * (1 - 1e-12):
            raise InvariantViolation(f"epsilon={self.epsilon} below the certified error {bound}")
        if self.session is not None:
            self.session.owner = id(self)

    def times(self) -> np.ndarray:
        return np.arange(2**self.level + 1) / 2**self.level

    def skeleton(self) -> PathSkeleton:
        if self.session is None:
            raise EpsStrongError("path has no lattice attached")
        return PathSkeleton(self.level, self.session.state.lattice.increments(self.level).copy())


def certify_lattice(rng: np.random.Generator, dprime: int, params: Params) -> tuple[SessionState, int, int]:
    """Algorithm-II steps 1-4: returns the session and the levels ``(N1, N2)``.

    On return no Haar coefficient below ``N2`` can exceed its threshold and no
    walk record occurs at any level beyond ``N2``.
    """
    records, lattice = run_algorithm_one(rng, dprime, params.rho)
    n1 = max(r.n1 for r in records)
    if n1 > params.max_level:
        raise IterationGuardError(f"last record breaker at level {n1} beyond guard {params.max_level}")
    state = SessionState(lattice, n1, params)
    while True:
        tables = None
        while tables is None:
            if state.flags:
                try:
                    tables = ld_tables(state.n, 1, dprime, params)
                except InfeasibleTablesError as exc:
                    log.debug("level %d: %s", state.n, exc)
            if tables is None:
                state.advance(rng)
        f, prop = procedure_b(rng, state, tables)
        if not f:
            return state, n1, state.n
        state.n += prop.m
        state.refresh_flags()


def _certificate(state: SessionState, n1: int, n2: int) -> HolderCertificate:
    p = state.params
    k_alpha = k_alpha_bound(state.lattice, n1, p.alpha, p.rho)
    gamma_l, gamma_r, k2 = gamma_bounds(state.lattice, n2, p.alpha, p.beta, k_alpha)
    return HolderCertificate(p.alpha, p.beta, p.alpha_prime, p.gamma, p.eps0, k_alpha, n1, n2, gamma_l, gamma_r, k2)


def _extend_to(rng: np.random.Generator, state: SessionState, level: int) -> None:
    if level > state.params.max_level:
        raise IterationGuardError(f"tolerance needs level {level} beyond guard {state.params.max_level}")
    if level > state.n:
        continue_no_breaker(rng, state, level - state.n)
        state.n = level
        state.refresh_flags()


def _driver_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed]))


def simulate_eps_strong(model: SdeModel, eps: float, params: Params, seed: int) -> EpsStrongPath:
    """Euler path whose sup distance to the true solution is at most ``eps``."""
    if not eps > 0:
        raise ConfigError(f"eps={eps} must be positive")
    rng = _driver_rng(seed)
    state, n1, n2 = certify_lattice(rng, model.dim_z, params)
    cert = _certificate(state, n1, n2)
    consts = procedure_a(
        model.bound_m, cert.k_alpha, cert.k2_alpha, cert.gamma_r,
        model.dim_x, model.dim_z, params.alpha, params.beta,
    )
    session = Session(state, seed)
    level = level_for_tolerance(consts.g, eps, params.alpha, params.beta)
    _extend_to(rng, state, level)
    skel = PathSkeleton(level, state.lattice.increments(level).copy())
    return EpsStrongPath(level, euler_path(model, skel), eps, consts, cert, seed, model, session)


def refine(path: EpsStrongPath, eps_prime: float) -> EpsStrongPath:
    """Same probability space, smaller tolerance; consumes the path's session."""
    if not 0 < eps_prime < path.epsilon:
        raise ConfigError(f"eps'={eps_prime} must lie in (0, {path.epsilon})")
    session = path.session
    if session is None or session.owner != id(path):
        raise EpsStrongError("path session is stale or already consumed")
    session.refinements += 1
    state = session.state
    c = path.constants
    level = max(path.level, level_for_tolerance(c.g, eps_prime, c.alpha, c.beta))
    _extend_to(session.rng(), state, level)
    skel = PathSkeleton(level, state.lattice.increments(level).copy())
    return EpsStrongPath(level, euler_path(path.model, skel), eps_prime, c, path.certificate,
                         path.seed, path.model, session)


def localized_solve(
    family: Callable[[float], SdeModel],
    eps: float,
    params: Params,
    seed: int,
    start: float = 2.0,
    max_doublings: int = 20,
) -> EpsStrongPath:
    """Solve with truncated coefficients, doubling the truncation until the path stays inside.

    The lattice is certified once; each doubling only recomputes ``G`` and the
    level.
    """
    if not eps > 0:
        raise ConfigError(f"eps={eps} must be positive")
    rng = _driver_rng(seed)
    model = family(start)
    state, n1, n2 = certify_lattice(rng, model.dim_z, params)
    cert = _certificate(state, n1, n2)
    c = start
    for _ in range(max_doublings + 1):
        model = family(c)
        consts = procedure_a(
            model.bound_m, cert.k_alpha, cert.k2_alpha, cert.gamma_r,
            model.dim_x, model.dim_z, params.alpha, params.beta,
        )
        level = level_for_tolerance(consts.g, eps, params.alpha, params.beta)
        _extend_to(rng, state, level)
        skel = PathSkeleton(level, state.lattice.increments(level).copy())
        values = euler_path(model, skel)
        if np.abs(values).max() <= model.trust_radius - eps:
            return EpsStrongPath(level, values, eps, consts, cert, seed, model, Session(state, seed))
        c *= 2
    raise IterationGuardError(f"truncation still active after {max_doublings} doublings")


# Estimation -----------------------------------------------------------------


@dataclass(frozen=True)
class Functional:
    """Nonnegative functional of a path with sup-norm Lipschitz constant ``lipschitz``."""

    name: str
    lipschitz: float
    evaluate: Callable[[np.ndarray | None], float]
    needs_path: bool = True


def constant_functional(c: float) -> Functional:
    if c < 0:
        raise ConfigError("functionals must be nonnegative")
    return Functional(f"constant({c})", 0.0, lambda values: c, needs_path=False)


def sup_distance_functional(point: np.ndarray) -> Functional:
    point = np.asarray(point, dtype=float)
    return Functional("sup-distance", 1.0, lambda values: float(np.abs(values - point).max()))


def terminal_clip_functional(coord: int, lo: float, hi: float) -> Functional:
    if not 0 <= lo < hi:
        raise ConfigError("clipping range must satisfy 0 <= lo < hi")
    return Functional("terminal-clip", 1.0, lambda values: float(np.clip(values[-1, coord], lo, hi)))


def exp_density(t: float) -> float:
    return math.exp(-t)


def unbiased_indicator(f_value_eps: float, lipschitz: float, eps: float, t: float, g_density) -> float | None:
    """``1/g(t)`` if ``f(X) > t`` is certain, ``0`` if ``f(X) < t`` is, ``None`` otherwise."""
    margin = lipschitz * eps
    if f_value_eps > t + margin:
        return 1.0 / g_density(t)
    if f_value_eps < t - margin:
        return 0.0
    return None


def estimate_one(
    functional: Functional,
    model: SdeModel,
    eps: float,
    params: Params,
    seed: int,
    max_refinements: int = 30,
) -> float:
    """One unbiased sample of ``E f(X)`` with ``T ~ Exp(1)``."""
    ss = np.random.SeedSequence([seed])
    t_rng, path_seed = np.random.default_rng(ss.spawn(1)[0]), int(ss.generate_state(1)[0])
    t = float(t_rng.exponential())
    if not functional.needs_path:
        z = unbiased_indicator(functional.evaluate(None), 0.0, 0.0, t, exp_density)
        if z is None:
            raise EpsStrongError("constant functional tied with the threshold")
        return z
    path = simulate_eps_strong(model, eps, params, path_seed)
    for _ in range(max_refinements):
        z = unbiased_indicator(functional.evaluate(path.values), functional.lipschitz, path.epsilon, t, exp_density)
        if z is not None:
            return z
        path = refine(path, path.epsilon / 2)
    raise IterationGuardError(f"indicator undecided after {max_refinements} refinements")


def check_walk_records_above(lattice: WaveletLattice, n2: int, params: Params, cap: int) -> int:
    """Count walk-record violations at levels ``n2+1..min(n2+4, cap)`` present in the lattice."""
    top = min(n2 + 4, cap, lattice.depth)
    return sum(level_record_count(lattice, lv, params.alpha, params.beta) for lv in range(n2 + 1, top + 1))
