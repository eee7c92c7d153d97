import math

import numpy as np
import pytest
from scipy import integrate as scipy_integrate

from sdelab.scale_oracle import (
    BumpSpec,
    ExitQuery,
    QuadratureError,
    adaptive_simpson,
    bm_occupation_oracle,
    canonical_bump,
    exit_prob_oracle,
    integrate,
    limit_c,
    log_weight,
)


def test_adaptive_simpson_polynomial_and_sine():
    assert adaptive_simpson(lambda x: x * x, 0.0, 1.0) == pytest.approx(1.0 / 3.0, abs=1e-12)
    assert adaptive_simpson(math.sin, 0.0, math.pi) == pytest.approx(2.0, abs=1e-9)
    assert adaptive_simpson(lambda x: x, 1.0, 1.0) == 0.0


def test_integrate_orientation_and_knots():
    f = lambda x: abs(x)
    forward = integrate(f, -1.0, 1.0, knots=(0.0,))
    assert forward == pytest.approx(1.0, abs=1e-10)
    assert integrate(f, 1.0, -1.0, knots=(0.0,)) == pytest.approx(-1.0, abs=1e-10)


def test_canonical_bump_mass_and_shape():
    bump = canonical_bump(4)
    bump.validate()
    assert bump.support == (-0.25, 0.25)
    assert bump.phi_n(0.0) == pytest.approx(4.0 * 15.0 / 16.0)
    assert bump.phi_n(0.3) == 0.0
    # derivative consistent with a central difference
    for u in (-0.2, -0.05, 0.08, 0.21):
        fd = (bump.phi_n(u + 1e-6) - bump.phi_n(u - 1e-6)) / 2e-6
        assert bump.dphi_n(u) == pytest.approx(fd, rel=1e-4, abs=1e-4)


def test_bump_spec_rejects_bad_bumps():
    with pytest.raises(ValueError):
        canonical_bump(0)
    half_mass = BumpSpec(
        lambda x: 0.5 * (15.0 / 16.0) * (1.0 - x * x) ** 2 if abs(x) < 1 else 0.0,
        lambda x: -0.5 * (15.0 / 4.0) * x * (1.0 - x * x) if abs(x) < 1 else 0.0,
        1,
    )
    with pytest.raises(ValueError):
        half_mass.validate()


def test_log_weight_of_pure_bump_is_twice_bump_height():
    # with b = 0 and sigma = 1 the exponent at y is 2 phi_n(y) - 2 phi_n(l)
    bump = canonical_bump(4)
    assert log_weight(None, None, bump, -1.0, 0.0) == pytest.approx(2.0 * bump.phi_n(0.0), abs=1e-8)
    assert log_weight(None, None, bump, -1.0, 1.0) == pytest.approx(0.0, abs=1e-8)


def test_log_weight_constant_drift():
    # exponent is -2 b (y - l) for constant b and unit sigma
    b = lambda z: 1.0
    assert log_weight(b, None, None, -1.0, 0.5) == pytest.approx(-3.0, abs=1e-8)


def test_exit_prob_oracle_brownian_is_linear():
    assert exit_prob_oracle(ExitQuery(-1.0, 0.0, 1.0)) == pytest.approx(0.5, abs=1e-10)
    assert exit_prob_oracle(ExitQuery(-1.0, -0.5, 1.0)) == pytest.approx(0.25, abs=1e-10)


def test_exit_prob_oracle_constant_drift_closed_form():
    # p(x) = (1 - exp(-2b(x-l)/s^2)) / (1 - exp(-2b(r-l)/s^2))
    def closed(b, s, l, x, r):
        k = 2.0 * b / (s * s)
        return math.expm1(-k * (x - l)) / math.expm1(-k * (r - l))

    q = ExitQuery(-1.0, 0.0, 1.0)
    got = exit_prob_oracle(q, b=lambda z: 1.0)
    assert got == pytest.approx(closed(1.0, 1.0, -1.0, 0.0, 1.0), abs=1e-9)
    assert got == pytest.approx(0.8807970779778824, abs=1e-6)
    got2 = exit_prob_oracle(q, b=lambda z: -1.0, sigma=lambda z: 2.0)
    assert got2 == pytest.approx(closed(-1.0, 2.0, -1.0, 0.0, 1.0), abs=1e-9)


def test_exit_prob_oracle_penalty_suppresses_crossing():
    q = ExitQuery(-1.0, -0.3, 1.0)
    values = [exit_prob_oracle(q, bump=canonical_bump(n)) for n in (1, 4, 16, 64)]
    assert all(a > b for a, b in zip(values, values[1:]))
    assert values[-1] < 1e-40  # the n = 64 barrier is essentially impenetrable


def test_exit_prob_oracle_monotone_in_start():
    q_lo = ExitQuery(-1.0, -0.5, 1.0)
    q_hi = ExitQuery(-1.0, 0.5, 1.0)
    bump = canonical_bump(2)
    assert exit_prob_oracle(q_lo, bump=bump) < exit_prob_oracle(q_hi, bump=bump)


def test_exit_query_validation():
    with pytest.raises(ValueError):
        ExitQuery(0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        ExitQuery(-1.0, 2.0, 1.0)


def test_limit_c_values():
    assert limit_c(-1.0, -0.5) == pytest.approx(0.5, abs=1e-8)
    expected = (1.0 - math.exp(-1.0)) / (1.0 - math.exp(-2.0))
    assert limit_c(-1.0, -0.5, b=lambda z: 1.0) == pytest.approx(expected, abs=1e-6)
    with pytest.raises(ValueError):
        limit_c(-1.0, 0.5)


def test_limit_c_is_the_small_bump_limit_of_the_oracle():
    # the penalized exit probability at x < 0 factorizes through c_{l,x}
    # in the n -> infinity limit; at large n the oracle's left-exit mass
    # ratio approaches the penalty-free scale ratio truncated at 0
    c = limit_c(-1.0, -0.5)
    p64 = exit_prob_oracle(ExitQuery(-1.0, -0.5, 1.0), bump=canonical_bump(64))
    # exit-at-right is essentially 0, so exit-at-left ~ 1 and the start
    # x = -0.5 sits at fraction c of the way from l to the barrier
    assert p64 < 1e-30
    assert c == pytest.approx(0.5)


def test_bm_occupation_oracle_matches_scipy_quadrature():
    def band_prob(t, eps):
        return math.erf(eps / math.sqrt(2.0 * t))

    for eps, T in ((0.1, 1.0), (0.3, 2.0)):
        expected, _ = scipy_integrate.quad(band_prob, 0.0, T, args=(eps,))
        assert bm_occupation_oracle(eps, T) == pytest.approx(expected, abs=1e-8)


def test_bm_occupation_oracle_frozen_value():
    # golden value for the acceptance band (eps = 0.1, T = 1)
    assert bm_occupation_oracle(0.1, 1.0) == pytest.approx(0.14984274079496943, abs=1e-9)


def test_bm_occupation_oracle_validation():
    with pytest.raises(ValueError):
        bm_occupation_oracle(0.0, 1.0)
    with pytest.raises(ValueError):
        bm_occupation_oracle(0.1, -1.0)


def test_quadrature_error_surfaces():
    # a discontinuous integrand with a pathological tolerance cannot converge
    f = lambda x: 0.0 if x < 0.5 else 1.0
    with pytest.raises(QuadratureError):
        adaptive_simpson(f, 0.0, 1.0, rel_tol=1e-16)


def test_oracle_probability_bounds():
    rng = np.random.default_rng(11)
    for _ in range(10):
        l, r = sorted(rng.uniform(-2.0, 2.0, size=2))
        if r - l < 0.1:
            continue
        x = rng.uniform(l + 0.01, r - 0.01)
        p = exit_prob_oracle(ExitQuery(l, x, r), b=lambda z: math.sin(z))
        assert 0.0 <= p <= 1.0
