import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from epsstrong.area_records import SessionState
from epsstrong.dyadic_bm import PathSkeleton, WaveletLattice, free_lattice
from epsstrong.error_constants import procedure_a
from epsstrong.errors import ConfigError, EpsStrongError, InvariantViolation, IterationGuardError
from epsstrong.levy_area import AreaTable, area_truncated
from epsstrong.params import Params
from epsstrong.record_breakers import HolderCertificate
from epsstrong.sde_engine import (
    MODELS,
    EpsStrongPath,
    SdeModel,
    Session,
    area_euler_path,
    check_walk_records_above,
    constant_functional,
    estimate_one,
    euler_path,
    get_model,
    refine,
    simulate_eps_strong,
    smooth_clamp,
    smooth_clamp_slope,
    terminal_clip_functional,
    trig_model,
    unbiased_indicator,
)


def _model(drift, diffusion, jac=None, dim=1):
    return SdeModel(
        "test", dim, dim,
        drift,
        lambda x: np.zeros((dim, dim)),
        diffusion,
        jac or (lambda x: np.zeros((dim, dim, dim))),
        1.0,
        np.ones(dim),
    )


def test_euler_with_unit_diffusion_is_the_path():
    rng = np.random.default_rng(0)
    inc = rng.standard_normal((2, 16)) * 0.25
    m = _model(lambda x: np.zeros(2), lambda x: np.eye(2), dim=2)
    out = euler_path(m, PathSkeleton(4, inc))
    assert np.allclose(out, 1 + np.vstack([np.zeros(2), np.cumsum(inc, axis=1).T]))


def test_euler_with_constant_drift_is_linear():
    m = _model(lambda x: np.array([3.0]), lambda x: np.zeros((1, 1)))
    out = euler_path(m, PathSkeleton(3, np.ones((1, 8))))
    assert np.allclose(out[:, 0], 1 + 3 * np.arange(9) / 8)


def test_euler_dimension_mismatch():
    with pytest.raises(ConfigError):
        euler_path(trig_model(), PathSkeleton(1, np.zeros((1, 2))))


def test_non_finite_step_is_reported():
    m = _model(lambda x: np.array([math.inf]), lambda x: np.zeros((1, 1)))
    with pytest.raises(InvariantViolation, match="non-finite"):
        euler_path(m, PathSkeleton(1, np.zeros((1, 2))))


def test_area_euler_with_zero_areas_is_euler():
    rng = np.random.default_rng(1)
    model = trig_model()
    sk = PathSkeleton(5, rng.standard_normal((2, 32)) * 2**-2.5)
    zero = AreaTable(5, 0, np.zeros((2, 2, 32)))
    assert np.allclose(area_euler_path(model, sk, zero), euler_path(model, sk))


def test_area_correction_improves_on_euler_for_linear_noise():
    # dX = X dZ has X(t) = exp(Z(t) - t/2); the area term is the Milstein correction.
    model = _model(lambda x: np.zeros(1), lambda x: x.reshape(1, 1), jac=lambda x: np.ones((1, 1, 1)))
    rng = np.random.default_rng(2)
    n, depth = 5, 9
    wins = 0
    for _ in range(100):
        lat = free_lattice(rng, 1, n + depth)
        sk = PathSkeleton(n, lat.increments(n))
        z = np.concatenate([[0.0], np.cumsum(sk.increments[0])])
        exact = np.exp(z - np.arange(2**n + 1) / 2 ** (n + 1))
        e_euler = np.abs(euler_path(model, sk)[:, 0] - exact).max()
        e_area = np.abs(area_euler_path(model, sk, area_truncated(lat, n, depth))[:, 0] - exact).max()
        wins += e_area < e_euler
    assert wins >= 90


def test_indicator_cases():
    assert unbiased_indicator(5.0, 1.0, 0.1, 2.0, lambda t: math.exp(-t)) == pytest.approx(math.exp(2))
    assert unbiased_indicator(1.0, 1.0, 0.1, 2.0, lambda t: math.exp(-t)) == 0.0
    assert unbiased_indicator(2.05, 1.0, 0.1, 2.0, lambda t: math.exp(-t)) is None


def test_constant_estimator_mean():
    f = constant_functional(2.0)
    z = np.array([estimate_one(f, trig_model(), 0.05, Params(), s) for s in range(20_000)])
    assert abs(z.mean() - 2.0) < 3 * z.std(ddof=1) / math.sqrt(z.size)
    assert estimate_one(f, trig_model(), 0.05, Params(), 7) == estimate_one(f, trig_model(), 0.05, Params(), 7)


def test_functional_ranges():
    with pytest.raises(ConfigError):
        constant_functional(-1.0)
    with pytest.raises(ConfigError):
        terminal_clip_functional(0, 1.0, 1.0)


@given(st.floats(-100, 100), st.floats(0.1, 10))
def test_clamp_properties(x, c):
    y = float(smooth_clamp(x, c))
    if abs(x) <= c:
        assert y == x
    assert abs(y) <= 1.5 * c * (1 + 1e-15)
    assert math.copysign(1, y) == math.copysign(1, x) or y == 0
    assert 0.0 <= float(smooth_clamp_slope(x, c)) <= 1.0
    if abs(x) >= 2 * c:
        assert abs(y) == pytest.approx(1.5 * c)


def test_clamp_slope_matches_finite_differences():
    x = np.linspace(-5, 5, 1001)
    h = 1e-6
    fd = (smooth_clamp(x + h, 2.0) - smooth_clamp(x - h, 2.0)) / (2 * h)
    assert np.allclose(fd, smooth_clamp_slope(x, 2.0), atol=1e-6)


@pytest.mark.parametrize("name", sorted(MODELS))
def test_models_respect_declared_bound(name):
    get_model(name).spot_check(np.random.default_rng(0), samples=2000)


def test_trig_jacobians_match_finite_differences():
    m = trig_model()
    rng = np.random.default_rng(3)
    h = 1e-6
    for x in rng.uniform(-4, 4, (20, 2)):
        for l in range(2):
            e = np.zeros(2)
            e[l] = h
            assert np.allclose((m.drift(x + e) - m.drift(x - e)) / (2 * h), m.drift_jacobian(x)[:, l], atol=1e-8)
            assert np.allclose((m.diffusion(x + e) - m.diffusion(x - e)) / (2 * h),
                               m.diffusion_jacobian(x)[:, :, l], atol=1e-8)


def test_spot_check_catches_understated_bound():
    m = SdeModel("bad", 1, 1, lambda x: 2 * x, lambda x: np.full((1, 1), 2.0),
                 lambda x: np.ones((1, 1)), lambda x: np.zeros((1, 1, 1)), 1.0, np.zeros(1))
    with pytest.raises(InvariantViolation):
        m.spot_check(np.random.default_rng(0))


def test_unknown_model():
    with pytest.raises(ConfigError, match="unknown model"):
        get_model("heston")


def test_driver_stops_at_level_guard():
    with pytest.raises(IterationGuardError):
        simulate_eps_strong(trig_model(), 0.05, Params(max_level=8), seed=0)


def _path(eps, level, session=None):
    consts = procedure_a(0.5, 1, 1, 1, 2, 2, 0.4, 0.65)
    cert = HolderCertificate(0.4, 0.65, 0.45, 0.25, 0.25, 1.0, 0, 0, 0.0, 1.0, 1.0)
    return EpsStrongPath(level, np.zeros((2**level + 1, 2)), eps, consts, cert, 0, trig_model(), session)


def test_path_rejects_epsilon_below_certified_error():
    consts = procedure_a(0.5, 1, 1, 1, 2, 2, 0.4, 0.65)
    level = 3
    bound = consts.g * 2.0 ** (-level * 0.15)
    _path(bound, level)
    with pytest.raises(InvariantViolation):
        _path(bound / 2, level)
    with pytest.raises(InvariantViolation):
        EpsStrongPath(level, np.zeros((4, 2)), bound, consts, _path(bound, level).certificate, 0, trig_model())


def test_refine_rejects_consumed_or_missing_session():
    consts = procedure_a(0.5, 1, 1, 1, 2, 2, 0.4, 0.65)
    bound = consts.g * 2.0 ** (-2 * 0.15)
    path = _path(bound, 2)
    with pytest.raises(EpsStrongError, match="stale"):
        refine(path, bound / 2)
    with pytest.raises(ConfigError):
        refine(path, 2 * bound)
    state = SessionState(free_lattice(np.random.default_rng(0), 2, 2), 2, Params())
    owned = _path(bound, 2, Session(state, 0))
    _path(bound, 2, owned.session)  # a second owner takes the session over
    with pytest.raises(EpsStrongError, match="stale"):
        refine(owned, bound / 2)


def test_walk_record_scan_on_quiet_lattice():
    lat = WaveletLattice(np.zeros(2))
    for h in range(6):
        lat.append_level(np.zeros((2, 2**h)))
    assert check_walk_records_above(lat, 1, Params(), 14) == 0
