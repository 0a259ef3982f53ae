import math

import mpmath
import numpy as np
import pytest
from numpy.polynomial import polynomial as P

from koshelev.inequalities import (
    GOLDEN_HI,
    GOLDEN_LO,
    check_triangle_estimate,
    check_v_young,
    check_vfunc_equiv,
    corrected_upper_constant,
    line_integral,
    sweep_triangle,
    sweep_vfunc,
    sweep_young,
    triangle_ratio_extremes,
    vfunc_constants,
    young_constant,
)


def poly_oracle(mu, gamma, xi, eta):
    """Exact integral for integer gamma via polynomial antiderivatives."""
    xi, eta = np.ravel(xi), np.ravel(eta)
    d = xi - eta
    q = np.array([mu * mu + eta @ eta, 2 * d @ eta, d @ d])
    poly = P.polypow(q, gamma)
    anti = P.polyint(poly)
    return P.polyval(1.0, anti) - P.polyval(0.0, anti)


def mp_oracle(mu, gamma, xi, eta):
    xi, eta = np.ravel(xi), np.ravel(eta)
    mpmath.mp.dps = 30

    def f(t):
        r = [mpmath.mpf(e) + t * (mpmath.mpf(x) - mpmath.mpf(e)) for x, e in zip(xi, eta)]
        return (mpmath.mpf(mu) ** 2 + sum(c * c for c in r)) ** gamma

    d = xi - eta
    qa = d @ d
    t0 = -(d @ eta) / qa if qa > 0 else 0.0
    pts = [0, t0, 1] if 0 < t0 < 1 else [0, 1]
    return float(mpmath.quad(f, pts))


def test_line_integral_trivial_cases():
    assert line_integral(1.0, 0.0, [1, 2], [3, 4]) == 1.0
    assert line_integral(0.0, 1.0, [1, 0], [1, 0]) == pytest.approx(1.0, abs=1e-12)
    assert line_integral(0.0, 1.0, [1, 0], [0, 0]) == pytest.approx(1 / 3, abs=1e-12)


@pytest.mark.parametrize("gamma", [1, 2])
def test_line_integral_polynomial_closed_form(rng, gamma):
    for _ in range(50):
        mu = rng.uniform(0, 3)
        xi, eta = rng.uniform(-3, 3, (2, 6))
        exact = poly_oracle(mu, gamma, xi, eta)
        assert line_integral(mu, float(gamma), xi, eta) == pytest.approx(exact, rel=1e-11, abs=1e-11)


@pytest.mark.parametrize("gamma", [-0.49, -0.3, -0.1, 0.37, 1.5, 4.2])
def test_line_integral_matches_high_precision_quadrature(rng, gamma):
    for _ in range(8):
        mu = rng.choice([0.0, rng.uniform(0, 2)])
        xi, eta = rng.uniform(-3, 3, (2, 4))
        assert line_integral(mu, gamma, xi, eta) == pytest.approx(mp_oracle(mu, gamma, xi, eta), rel=1e-9)


def test_line_integral_through_origin_closed_form():
    # |2t - 1|^(2 gamma) integrates to 1/(2 gamma + 1)
    g = -0.45
    assert line_integral(0.0, g, [1, 0], [-1, 0]) == pytest.approx(1 / (2 * g + 1), rel=1e-13)


def test_line_integral_rejects_bad_input():
    with pytest.raises(ValueError):
        line_integral(0.0, -0.5, [1, 0], [0, 1])
    with pytest.raises(ValueError):
        line_integral(0.0, -0.2, [0, 0], [0, 0])


def test_vfunc_equalities_at_gamma_zero(rng):
    assert vfunc_constants(0.0) == (1.0, 1.0)
    r = check_vfunc_equiv(1.3, 0.0, rng.standard_normal(4), rng.standard_normal(4))
    assert r.lower_ok and r.upper_ok
    assert r.lower == pytest.approx(r.integral) and r.upper == pytest.approx(r.integral)


def test_vfunc_worked_example():
    r = check_vfunc_equiv(0.0, 1.0, [1, 0], [0, 0])
    assert r.integral == pytest.approx(1 / 3)
    assert r.lower == pytest.approx(1 / 18) and r.upper == pytest.approx(2.0)
    assert r.lower_ok and r.upper_ok


def test_negative_gamma_upper_constant_counterexample():
    # the stated upper constant 1/(4^gamma (gamma+1)) stays bounded as gamma -> -1/2,
    # while the integral for a segment through the origin blows up like 1/(2 gamma + 1)
    r = check_vfunc_equiv(0.0, -0.45, [1, 0], [-1, 0])
    assert r.integral == pytest.approx(10.0, rel=1e-12)
    assert not r.upper_ok
    assert r.lower_ok
    assert r.integral <= corrected_upper_constant(-0.45) * (0 + 1 + 4) ** -0.45 * (1 + 1e-12)


def test_young_constant_values():
    assert young_constant(2, 1) == pytest.approx(0.25)
    assert young_constant(1, 1) == pytest.approx(1.0)
    assert young_constant(3, 2) == pytest.approx(0.125)
    with pytest.raises(ValueError):
        young_constant(0.5, 1)
    with pytest.raises(ValueError):
        young_constant(2, 0)


def test_young_trivial_cases(rng):
    x = rng.standard_normal((3, 3))
    assert check_v_young(np.zeros((3, 3)), x, 0.5, 3.0, 0.1)
    assert check_v_young(x, np.zeros((3, 3)), 0.0, 1.5, 0.1)


def test_triangle_estimate_examples():
    assert check_triangle_estimate(np.zeros(2), np.zeros(2))
    assert check_triangle_estimate(np.zeros(2), np.array([1.0, 0.0]))
    # extremal directions: b = phi a with the golden ratio attain the bounds
    phi = (1 + math.sqrt(5)) / 2
    a = np.array([1.0, 0.0])
    for b in (phi * a, -a / phi):
        assert check_triangle_estimate(a, b)


def test_triangle_extremes_recovered():
    lo, hi = triangle_ratio_extremes(seed=3)
    assert abs(lo - GOLDEN_LO) < 1e-3 and abs(hi - GOLDEN_HI) < 1e-3


def test_sweeps_small():
    pos = sweep_vfunc("positive", 500, 7)
    assert pos.violations == 0
    neg = sweep_vfunc("negative", 500, 8, stress=True)
    assert neg.extra["lower_violations"] == 0
    assert sweep_young(2000, 9).violations == 0
    tri = sweep_triangle(2000, 10)
    assert tri.passed


def test_sweeps_are_seed_deterministic():
    a = sweep_vfunc("negative", 200, 5)
    b = sweep_vfunc("negative", 200, 5)
    assert a == b
