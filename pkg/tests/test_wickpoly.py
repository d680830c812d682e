from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial import hermite_e
from scipy.special import eval_genlaguerre

from wickgibbs.errors import DomainError
from wickgibbs.wickpoly import (
    WickContext,
    double_factorial,
    generalized_laguerre,
    hermite,
    laguerre_coefficients,
    laguerre_scaled,
    monomial_to_hermite,
    wick_abs_power,
    wick_hermite_split,
    wick_odd_power,
)

reals = st.floats(-6, 6, allow_nan=False)
variances = st.floats(0.05, 20.0)


def exp_moment_mean(poly_coef, sigma):
    # |g|^2 ~ Exp(mean sigma), so E[(|g|^2)^k] = k! sigma^k
    return sum(c * factorial(k) * sigma**k for k, c in enumerate(poly_coef))


def test_hermite_unit_variance_matches_numpy():
    x = np.linspace(-4, 4, 41)
    for k in range(12):
        ref = hermite_e.hermeval(x, [0] * k + [1])
        assert np.allclose(hermite(k, x), ref, rtol=1e-12, atol=1e-9)


def test_hermite_small_orders():
    x, s = 1.7, 0.6
    assert hermite(0, x, s) == pytest.approx(1.0)
    assert hermite(2, x, s) == pytest.approx(x * x - s)
    assert hermite(3, x, s) == pytest.approx(x**3 - 3 * s * x)


@given(st.integers(0, 10), st.integers(0, 3), st.floats(0, 30))
def test_generalized_laguerre_matches_scipy(m, alpha, x):
    assert generalized_laguerre(m, alpha, x) == pytest.approx(eval_genlaguerre(m, alpha, x), rel=1e-9, abs=1e-9)


def test_laguerre_coefficients_explicit():
    assert np.allclose(laguerre_coefficients(2).coef, [1, -2, 0.5])
    assert np.allclose(laguerre_coefficients(1, 1).coef, [2, -1])


@given(reals, reals, variances, st.integers(1, 5))
def test_wick_split_equals_laguerre(a, b, s, m):
    ctx = WickContext(m, s)
    z = complex(a, b)
    x, y = wick_abs_power(z, ctx), wick_hermite_split(z, ctx)
    assert x == pytest.approx(y, rel=1e-10, abs=1e-10 * max(1.0, s) ** m)


@given(st.floats(0.0, 50.0), variances, st.floats(0.1, 4.0), st.integers(1, 6))
def test_laguerre_scaled_homogeneous(x, s, lam, m):
    lhs = laguerre_scaled(m, lam * x, lam * s)
    assert lhs == pytest.approx(lam**m * laguerre_scaled(m, x, s), rel=1e-9, abs=1e-9 * (lam * max(1, s, x)) ** m)


@pytest.mark.parametrize("s", [0.5, 1.0, 3.0])
def test_wick_orthogonality_exact(s):
    # E[:|g|^2m: :|g|^2k:] = delta_mk m!^2 s^2m for complex g with E|g|^2 = s
    for m in range(0, 5):
        pm = (-1) ** m * factorial(m) * laguerre_coefficients(m).coef * np.array([s ** (m - j) for j in range(m + 1)])
        for k in range(0, 5):
            pk = (-1) ** k * factorial(k) * laguerre_coefficients(k).coef * np.array([s ** (k - j) for j in range(k + 1)])
            prod = np.polynomial.polynomial.polymul(pm, pk)
            want = factorial(m) ** 2 * s ** (2 * m) if m == k else 0.0
            assert exp_moment_mean(prod, s) == pytest.approx(want, abs=1e-9 * max(1, s) ** (m + k))


def test_wick_odd_is_derivative():
    # :|z|^{2(m-1)} z: = (1/m) d/d conj(z) :|z|^{2m}:, checked by central differences
    z, s, h = 0.7 - 1.3j, 1.4, 1e-6
    for m in range(1, 5):
        ctx = WickContext(m, s)
        dx = (wick_abs_power(z + h, ctx) - wick_abs_power(z - h, ctx)) / (2 * h)
        dy = (wick_abs_power(z + 1j * h, ctx) - wick_abs_power(z - 1j * h, ctx)) / (2 * h)
        dbar = 0.5 * (dx + 1j * dy)
        assert wick_odd_power(z, ctx) == pytest.approx(dbar / m, rel=1e-6)


def test_wick_odd_low_orders():
    z, s = 1.1 + 0.4j, 2.0
    assert wick_odd_power(z, WickContext(1, s)) == pytest.approx(z)
    assert wick_odd_power(z, WickContext(2, s)) == pytest.approx((abs(z) ** 2 - 2 * s) * z)


@given(st.floats(-5, 5), st.floats(0.1, 5), st.integers(0, 9))
@settings(max_examples=50)
def test_monomial_expansion(x, s, k):
    assert monomial_to_hermite(k, x, s) == pytest.approx(x**k, rel=1e-8, abs=1e-8 * max(1, abs(x), s) ** k)


def test_double_factorial():
    assert [double_factorial(n) for n in (-1, 0, 1, 5, 6)] == [1, 1, 1, 15, 48]


def test_variance_field_broadcasts():
    z = np.array([0.3 + 0.1j, 2.0 - 1.0j])
    s = np.array([1.0, 4.0])
    out = wick_abs_power(z, WickContext(2, s))
    ref = [wick_abs_power(zi, WickContext(2, si)) for zi, si in zip(z, s)]
    assert np.allclose(out, ref)


@pytest.mark.parametrize(
    "call",
    [
        lambda: WickContext(0, 1.0),
        lambda: WickContext(2, 0.0),
        lambda: WickContext(2, np.array([1.0, -1.0])),
        lambda: hermite(-1, 0.0),
        lambda: hermite(500, 0.0),
        lambda: generalized_laguerre(2, -1, 0.0),
    ],
)
def test_domain_errors(call):
    with pytest.raises(DomainError):
        call()



def test_laguerre_recurrence_matches_closed_sum():
    # L_m(x) = sum_k binom(m, k) (-x)^k / k!, summed exactly in rationals
    from fractions import Fraction
    from math import comb

    for m in range(13):
        for x in np.linspace(-50, 50, 41):
            xf = Fraction(float(x))
            ref = float(sum(Fraction(comb(m, k)) * (-xf) ** k / factorial(k) for k in range(m + 1)))
            got = float(generalized_laguerre(m, 0, x))
            assert got == pytest.approx(ref, rel=1e-12, abs=1e-300)


@pytest.mark.parametrize("k", [1, 2, 3, 5, 8])
def test_hermite_derivative_rule(k):
    x, s, h = np.linspace(-3, 3, 13), 1.7, 1e-5
    fd = (hermite(k, x + h, s) - hermite(k, x - h, s)) / (2 * h)
    assert np.allclose(fd, k * hermite(k - 1, x, s), rtol=1e-6, atol=1e-6)


@pytest.mark.parametrize("m,alpha", [(1, 0), (2, 0), (3, 1), (5, 1), (7, 2)])
def test_laguerre_derivative_rule(m, alpha):
    x, h = np.linspace(0.1, 6, 13), 1e-5
    fd = (generalized_laguerre(m, alpha, x + h) - generalized_laguerre(m, alpha, x - h)) / (2 * h)
    assert np.allclose(fd, -generalized_laguerre(m - 1, alpha + 1, x), rtol=1e-6, atol=1e-6)


@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_wick_power_zero_mean_mc(m):
    # E :|g|^{2m}: = 0 and E :|g|^{2m}:^2 = (m!)^2 exactly, so the stderr is known
    rng = np.random.Generator(np.random.Philox(key=[17, m]))
    n = 10**6
    z = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2)
    vals = wick_abs_power(z, WickContext(m, 1.0))
    assert abs(vals.mean()) <= 4 * factorial(m) / np.sqrt(n)
