import itertools
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy import stats

from epsstrong.area_records import pair_sum_flag, small_increment_flag, theta0_select
from epsstrong.dyadic_bm import free_lattice, midpoint_scale
from epsstrong.errors import ConfigError, InvariantViolation
from epsstrong.params import Params
from epsstrong.tilting import (
    QuadraticTilt,
    TiltDomainError,
    build_schedule,
    level_one_diagonal,
    level_one_tilt,
    log_psi,
    phi_quadratic,
    recurse_schedule,
    sample_tilted_window,
)

from tilt_oracles import log_mean_exp, quadrature_phi, refine_many, walk_increment


def test_identity_tilt():
    value, law = phi_quadratic(QuadraticTilt(0, 0, 0, 0, 0))
    assert value == 1.0
    assert np.array_equal(law.mean, [0, 0])
    assert np.array_equal(law.covariance, np.eye(2))


@pytest.mark.parametrize("chi", [0.1, 0.5, -0.9])
def test_pure_cross_term(chi):
    value, _ = phi_quadratic(QuadraticTilt(0, 0, chi, 0, 0))
    assert value == pytest.approx((1 - chi * chi) ** -0.5, rel=1e-14)


def test_example_against_quadrature():
    t = QuadraticTilt(0.3, -0.2, 0.1, 0.2, 0.1)
    value, law = phi_quadratic(t)
    ref, mean, cov = quadrature_phi(0.3, -0.2, 0.1, 0.2, 0.1)
    assert abs(value - ref) < 1e-8
    assert np.allclose(law.mean, mean, atol=1e-8)
    assert np.allclose(law.covariance, cov, atol=1e-8)


def test_example_against_monte_carlo():
    rng = np.random.default_rng(0)
    y, z = rng.standard_normal((2, 400_000))
    e = np.exp(0.3 * y - 0.2 * z + 0.1 * y * z + 0.2 * y * y + 0.1 * z * z)
    value, _ = phi_quadratic(QuadraticTilt(0.3, -0.2, 0.1, 0.2, 0.1))
    assert abs(e.mean() - value) < 3 * e.std(ddof=1) / math.sqrt(e.size)


@settings(max_examples=60)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-0.9, 0.9), st.floats(-0.25, 0.2), st.floats(-0.25, 0.2))
def test_phi_matches_quadrature_property(a1, a2, bfrac, c1, c2):
    s1, s2 = 1 - 2 * c1, 1 - 2 * c2
    b = bfrac * min(s1 * s2, math.sqrt(s1 * s2))
    value, law = phi_quadratic(QuadraticTilt(a1, a2, b, c1, c2))
    ref, mean, cov = quadrature_phi(a1, a2, b, c1, c2)
    assert value == pytest.approx(ref, rel=1e-8)
    assert np.allclose(law.mean, mean, atol=1e-7)


def test_domain_errors_name_the_inequality():
    with pytest.raises(TiltDomainError, match=r"\|2 c1\| < 1"):
        QuadraticTilt(0, 0, 0, 0.5, 0)
    with pytest.raises(TiltDomainError, match=r"\|2 c2\| < 1"):
        QuadraticTilt(0, 0, 0, 0, -0.6)
    with pytest.raises(TiltDomainError, match=r"\|b\| < \(1 - 2 c1\)\(1 - 2 c2\)"):
        QuadraticTilt(0, 0, 0.5, 0.2, 0.2)
    # |b| < s1 s2 holds here but the form is not integrable: b^2 = 1.96 > s1 s2 = 1.69
    with pytest.raises(TiltDomainError, match=r"b\^2 <"):
        QuadraticTilt(0, 0, 1.4, -0.15, -0.15)


def test_level_one_examples():
    assert level_one_tilt(0.0, 0.3) == (0.0, 0.0, 0.0)
    theta1, eta1, lognorm = level_one_tilt(1.0, 0.25)
    assert theta1 == pytest.approx(4 / 15, rel=1e-15)
    assert eta1 == pytest.approx(1 * 0.25 / (8 * (15 / 16)), rel=1e-15)
    assert lognorm == pytest.approx(-0.5 * math.log(1 - 1 / 16), rel=1e-15)
    with pytest.raises(TiltDomainError):
        level_one_tilt(4.0, 0.25)


@given(st.floats(0.01, 0.6))
def test_level_one_ratio_identity(x):
    # 2 theta1^2 delta / eta1 = 1 / (1 - x), x = (theta0 delta)^2
    delta = 0.125
    theta0 = math.sqrt(x) / delta
    theta1, eta1, _ = level_one_tilt(theta0, delta)
    assert 2 * theta1**2 * delta / eta1 == pytest.approx(1 / (1 - x), rel=1e-12)


def test_level_one_ratio_outside_corrected_range_raises():
    delta = 0.125
    with pytest.raises(InvariantViolation):
        level_one_tilt(math.sqrt(0.7) / delta, delta)


def test_level_one_matches_quadrature():
    # one walk step at the finest level: children U/2 + s w_i, V/2 - s w_j (same slot)
    theta0, s2 = 2.0, 0.125
    theta1, eta1, lognorm = level_one_tilt(theta0, s2)
    s = math.sqrt(s2)
    for u, v in [(0.3, -0.7), (1.2, 0.4), (0.0, 0.0)]:
        # (U/2 + s w_i)(V/2 - s w_j) expanded around the Gaussian pair (w_i, w_j)
        ref, _, _ = quadrature_phi(theta0 * s * v / 2, -theta0 * s * u / 2, -theta0 * s2, 0, 0)
        got = theta1 * u * v + eta1 * (u * u + v * v) + lognorm
        assert got == pytest.approx(math.log(ref) + theta0 * u * v / 4, abs=1e-10)


def test_level_one_diagonal_matches_quadrature():
    theta0, s2 = 1.5, 0.125
    kappa, lognorm = level_one_diagonal(theta0, s2)
    s = math.sqrt(s2)
    for u in [0.0, 0.4, -1.1]:
        # (U/2 + s w)(U/2 - s w) = U^2/4 - s^2 w^2
        ref, _, _ = quadrature_phi(0, 0, 0, -theta0 * s2, 0)
        assert kappa * u * u + lognorm == pytest.approx(math.log(ref) + theta0 * u * u / 4, abs=1e-12)


def test_zero_forms_recurse_to_zero():
    theta, eta, lc = recurse_schedule(np.zeros(8), np.zeros(8), 3)
    assert not theta.any() and not eta.any() and lc == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2), st.integers(1, 4), st.data())
def test_width_one_window_support(n, m, data):
    slots = 2 ** (n + m - 1)
    k = data.draw(st.integers(0, slots - 1))
    theta0 = theta0_select(m, k, k + 1, n, 0.25, 0.45)
    sched = build_schedule(n, m, (k, k + 1), theta0, (0, 1))
    for l, (th, et) in enumerate(zip(sched.theta, sched.eta), start=1):
        assert np.count_nonzero(th > 0) <= 2
        assert np.all(th >= 0) and np.all(et >= 0)
        if l > 1:
            assert th.max() <= sched.theta[l - 2].max()


def test_theta_zero_gives_zero_psi():
    sched = build_schedule(1, 2, (0, 3), 0.0, (0, 1))
    rng = np.random.default_rng(1)
    assert log_psi(sched, rng.standard_normal((2, 2))) == 0.0


def test_zero_skeleton_psi_is_normalisers_only():
    sched = build_schedule(2, 2, (1, 5), 3.0, (0, 1))
    psi = log_psi(sched, np.zeros((2, 4)))
    assert psi == pytest.approx(sched.log_c + 4 * sched.level_one_log_norm, rel=1e-15)


def test_psi_level_mismatch():
    sched = build_schedule(2, 1, (0, 1), 1.0, (0, 1))
    with pytest.raises(ConfigError):
        log_psi(sched, np.zeros((2, 8)))


def test_negative_theta_flips_cross_form_only():
    a = build_schedule(1, 3, (1, 3), 2.0, (0, 1))
    b = build_schedule(1, 3, (1, 3), -2.0, (0, 1))
    for ta, tb, ea, eb in zip(a.theta, b.theta, a.eta, b.eta):
        assert np.allclose(ta, -tb) and np.allclose(ea, eb)
    assert a.log_c == pytest.approx(b.log_c)


@pytest.mark.parametrize("pair", [(0, 1), (1, 1)])
@pytest.mark.parametrize("n,m,window", [(1, 1, (0, 1)), (2, 2, (1, 4)), (0, 3, (0, 2))])
def test_psi_matches_monte_carlo(pair, n, m, window):
    rng = np.random.default_rng(hash((pair, n, m)) % 2**32)
    base = free_lattice(rng, 2, n).increments(n)
    theta0 = theta0_select(m, *window, n, 0.25, 0.45)
    sched = build_schedule(n, m, window, theta0, pair)
    fine = refine_many(rng, base, n, m, 200_000)
    est, se = log_mean_exp(theta0 * walk_increment(fine, pair, window))
    assert abs(est - log_psi(sched, base)) < 3 * se


@pytest.mark.parametrize("pair", [(0, 1), (0, 0)])
def test_tilted_mean_matches_psi_derivative(pair):
    n, m, window = 1, 2, (0, 2)
    rng = np.random.default_rng(7)
    lat = free_lattice(rng, 2, n)
    base = lat.increments(n)
    theta0, h = 2.0, 1e-4
    dpsi = (log_psi(build_schedule(n, m, window, theta0 + h, pair), base)
            - log_psi(build_schedule(n, m, window, theta0 - h, pair), base)) / (2 * h)
    sched = build_schedule(n, m, window, theta0, pair)
    draws = np.empty(20_000)
    for r in range(draws.size):
        work = lat.copy()
        sample_tilted_window(rng, sched, work)
        draws[r] = walk_increment(work.increments(n + m)[None], pair, window)[0]
    assert abs(draws.mean() - dpsi) < 3 * draws.std(ddof=1) / math.sqrt(draws.size)


def test_zero_tilt_sampling_is_free_refinement():
    rng = np.random.default_rng(9)
    n, m = 1, 2
    lat = free_lattice(rng, 2, n)
    sched = build_schedule(n, m, (0, 2), 0.0, (0, 1))
    coeffs = []
    for _ in range(5000):
        work = lat.copy()
        sample_tilted_window(rng, sched, work)
        coeffs.append(np.concatenate([c.ravel() for c in work.coeffs[n:]]))
    coeffs = np.array(coeffs)
    for col in coeffs.T:
        assert stats.kstest(col, "norm").pvalue > 1e-3


def test_likelihood_ratio_identity():
    n, m, window, pair = 1, 2, (1, 3), (0, 1)
    rng = np.random.default_rng(12)
    lat = free_lattice(rng, 2, n)
    base = lat.increments(n)
    theta0 = theta0_select(m, *window, n, 0.25, 0.45)
    sched = build_schedule(n, m, window, theta0, pair)
    psi = log_psi(sched, base)

    def box(inc):
        return (inc[:, 0, 0] > 0) & (inc[:, 1, 3] < 0.2)

    free = refine_many(rng, base, n, m, 100_000)
    h_free = box(free).astype(float)
    reps = 20_000
    vals = np.empty(reps)
    for r in range(reps):
        work = lat.copy()
        sample_tilted_window(rng, sched, work)
        inc = work.increments(n + m)[None]
        vals[r] = math.exp(-theta0 * walk_increment(inc, pair, window)[0] + psi) * box(inc)[0]
    se = math.hypot(vals.std(ddof=1) / math.sqrt(reps), h_free.std(ddof=1) / math.sqrt(h_free.size))
    assert abs(vals.mean() - h_free.mean()) < 3 * se


def test_sampler_requires_matching_depth():
    rng = np.random.default_rng(0)
    sched = build_schedule(1, 1, (0, 1), 1.0, (0, 1))
    with pytest.raises(ConfigError):
        sample_tilted_window(rng, sched, free_lattice(rng, 2, 2))


def _flagged_skeletons(rng, n, dprime, p, count):
    """Gaussian skeletons shrunk until both small-increment flags hold."""
    out = []
    while len(out) < count:
        inc = rng.standard_normal((dprime, 2**n)) * 2.0 ** (-n / 2) * rng.uniform(0.01, 1.0)
        if small_increment_flag(inc, p.alpha_prime) and pair_sum_flag(inc, p.beta, p.eps0, p.alpha_prime):
            out.append(inc)
    return out


@pytest.mark.parametrize("n", [2, 3, 4])
def test_psi_cap_when_flags_hold(n):
    p = Params()
    rng = np.random.default_rng(n)
    for inc in _flagged_skeletons(rng, n, 2, p, 10):
        for m in (1, 2, 3):
            slots = 2 ** (n + m - 1)
            for k, kp in itertools.combinations(range(slots + 1), 2):
                theta0 = theta0_select(m, k, kp, n, p.gamma, p.alpha_prime)
                for pair in [(0, 1), (1, 0), (0, 0)]:
                    sched = build_schedule(n, m, (k, kp), theta0, pair)
                    log_psi(sched, inc, (p.eps0, p.gamma, p.beta))
