"""Hermite, Laguerre and generalized Laguerre polynomials with a variance
parameter, and Wick-ordered powers of complex Gaussians.

Everything is evaluated by forward three-term recurrences on the standardized
variable; the variance enters only through the scalings

    H_k(x; s) = s^{k/2} H_k(x / sqrt(s)),      L_m(x; s) = s^m L_m(x / s).

All functions broadcast over numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb, factorial
from typing import Union

import numpy as np
from numpy.polynomial import Polynomial

from .errors import DomainError

ArrayLike = Union[float, complex, np.ndarray]

# L_m for m above this overflows nothing in float64, but the forward
# recurrence loses all digits long before; keep callers honest.
MAX_DEGREE = 200


def _check_degree(k: int, name: str = "degree") -> int:
    k = int(k)
    if k < 0:
        raise DomainError(f"{name} must be >= 0, got {k}")
    if k > MAX_DEGREE:
        raise DomainError(f"{name} {k} exceeds MAX_DEGREE={MAX_DEGREE}")
    return k


def _check_variance(sigma) -> np.ndarray:
    s = np.asarray(sigma, dtype=float)
    if not np.all(s > 0):
        raise DomainError("variance must be strictly positive")
    return s


@dataclass(frozen=True)
class WickContext:
    """Order m and variance (scalar, or an array broadcastable against the
    evaluation points for an x-dependent variance field)."""

    order: int
    variance: ArrayLike

    def __post_init__(self):
        if int(self.order) < 1:
            raise DomainError(f"Wick order must be >= 1, got {self.order}")
        _check_variance(self.variance)


def _hermite_std(k: int, y: np.ndarray) -> np.ndarray:
    h_prev = np.ones_like(y)
    if k == 0:
        return h_prev
    h = y.copy()
    for j in range(1, k):
        h_prev, h = h, y * h - j * h_prev
    return h


def hermite(k: int, x: ArrayLike, sigma: ArrayLike = 1.0) -> np.ndarray:
    """H_k(x; sigma), generated by exp(t x - sigma t^2 / 2)."""
    k = _check_degree(k)
    s = _check_variance(sigma)
    y = np.asarray(x, dtype=float) / np.sqrt(s)
    return s ** (k / 2) * _hermite_std(k, np.asarray(y, dtype=float))


def generalized_laguerre(m: int, alpha: int, x: ArrayLike) -> np.ndarray:
    """L_m^{(alpha)}(x) for integer alpha >= 0."""
    m = _check_degree(m)
    alpha = int(alpha)
    if alpha < 0:
        raise DomainError(f"alpha must be >= 0, got {alpha}")
    x = np.asarray(x, dtype=float)
    l_prev = np.ones_like(x)
    if m == 0:
        return l_prev
    l_cur = 1.0 + alpha - x
    for j in range(1, m):
        l_prev, l_cur = l_cur, ((2 * j + 1 + alpha - x) * l_cur - (j + alpha) * l_prev) / (j + 1)
    return l_cur


def laguerre(m: int, x: ArrayLike) -> np.ndarray:
    return generalized_laguerre(m, 0, x)


def laguerre_scaled(m: int, x: ArrayLike, sigma: ArrayLike) -> np.ndarray:
    """L_m(x; sigma) = sigma^m L_m(x / sigma), homogeneous of degree m."""
    s = _check_variance(sigma)
    return s**m * laguerre(m, np.asarray(x, dtype=float) / s)


def laguerre_coefficients(m: int, alpha: int = 0) -> Polynomial:
    """Power-basis coefficients of L_m^{(alpha)} from the explicit sum."""
    m = _check_degree(m)
    coef = [(-1) ** l * comb(m + alpha, m - l) / factorial(l) for l in range(m + 1)]
    return Polynomial(coef)


def wick_abs_power(z: ArrayLike, ctx: WickContext) -> np.ndarray:
    """:|z|^{2m}: = (-1)^m m! L_m(|z|^2; sigma)."""
    m = int(ctx.order)
    return (-1) ** m * factorial(m) * laguerre_scaled(m, np.abs(z) ** 2, ctx.variance)


def wick_hermite_split(z: ArrayLike, ctx: WickContext) -> np.ndarray:
    """Same quantity through the real/imaginary Hermite expansion

        sum_l C(m, l) H_{2l}(Re z; sigma/2) H_{2m-2l}(Im z; sigma/2).
    """
    m = int(ctx.order)
    half = _check_variance(ctx.variance) / 2
    z = np.asarray(z, dtype=complex)
    re, im = z.real, z.imag
    total = np.zeros(np.broadcast(re, half).shape)
    for l in range(m + 1):
        total = total + comb(m, l) * hermite(2 * l, re, half) * hermite(2 * m - 2 * l, im, half)
    return total


def wick_odd_power(z: ArrayLike, ctx: WickContext) -> np.ndarray:
    """:|z|^{2(m-1)} z: = (-1)^{m+1} (m-1)! sigma^{m-1} L_{m-1}^{(1)}(|z|^2/sigma) z.

    This is (1/m) times the conj(z)-derivative of :|z|^{2m}:.
    """
    m = int(ctx.order)
    s = _check_variance(ctx.variance)
    z = np.asarray(z, dtype=complex)
    factor = (-1) ** (m + 1) * factorial(m - 1) * s ** (m - 1)
    return factor * generalized_laguerre(m - 1, 1, np.abs(z) ** 2 / s) * z


def double_factorial(n: int) -> int:
    """n!!, with (-1)!! = 1."""
    out = 1
    while n > 1:
        out *= n
        n -= 2
    return out


def monomial_to_hermite(k: int, x: ArrayLike, sigma: ArrayLike = 1.0) -> np.ndarray:
    """Right-hand side of x^k = sum_j C(k, 2j) (2j-1)!! sigma^j H_{k-2j}(x; sigma)."""
    k = _check_degree(k)
    s = _check_variance(sigma)
    x = np.asarray(x, dtype=float)
    total = np.zeros(np.broadcast(x, s).shape)
    for j in range(k // 2 + 1):
        total = total + comb(k, 2 * j) * double_factorial(2 * j - 1) * s**j * hermite(k - 2 * j, x, s)
    return total
