"""Dirichlet square [0, pi]^2 with the explicit eigenbasis

    phi_jk(x, y) = (2/pi) sin(jx) sin(ky),   lambda^2 = j^2 + k^2,  j, k >= 1,

x-dependent variance sigma_N(x), spectral bands, truncated covariances and
the domain versions of G_N, F_N and their exact L^2(mu) norms.

Integrals use plain Lebesgue measure on the square.  Quadrature is the
interior trapezoid rule x_i = i pi / K, i = 1..K-1, weight pi / K per axis.
Every integrand here is a product of sines with at least one sine factor in
each variable, so it vanishes on the boundary and expands into cosines; the
rule is exact for cos(px) with |p| < 2K.  A product of sines of total
frequency D therefore needs K > D / 2.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import factorial

import numpy as np

from . import torus
from .dynamics import IntegratorConfig, integrate_rotating
from .errors import AliasingError, DomainError, RangeError
from .wickpoly import laguerre_coefficients

BLOCK = 512


# ------------------------------------------------------------------ basis


@lru_cache(maxsize=64)
def _modes(N: int) -> np.ndarray:
    j, k = np.meshgrid(np.arange(1, N + 1), np.arange(1, N + 1), indexing="ij")
    j, k = j.ravel(), k.ravel()
    keep = j * j + k * k <= N * N
    j, k = j[keep], k[keep]
    order = np.lexsort((k, j, j * j + k * k))  # eigenvalue, then j, then k
    out = np.stack([j[order], k[order]], axis=1)
    out.setflags(write=False)
    return out


def weyl_count(N: int) -> int:
    """#{(j, k): j, k >= 1, j^2 + k^2 <= N^2}."""
    if N < 1:
        raise RangeError("N must be >= 1")
    return len(_modes(N))


def min_quadrature(degree: int) -> int:
    """Smallest K integrating sine products of total frequency ``degree``."""
    return degree // 2 + 1


@dataclass(frozen=True)
class DomainBasis:
    cutoff: int
    K: int  # quadrature: interior nodes i pi / K, i = 1..K-1

    @property
    def modes(self) -> np.ndarray:
        return _modes(self.cutoff)

    @property
    def eigenvalues(self) -> np.ndarray:
        m = self.modes
        return (m[:, 0] ** 2 + m[:, 1] ** 2).astype(float)

    @property
    def nodes(self) -> np.ndarray:
        return np.pi * np.arange(1, self.K) / self.K

    @property
    def weight(self) -> float:
        """Weight of one 2-d node."""
        return (np.pi / self.K) ** 2

    def sines(self) -> np.ndarray:
        """sqrt(2/pi) sin(j x_i): (N, K-1), so phi_jk = S[j] (x) S[k]."""
        return _sines(self.cutoff, self.K)

    def eigenfunctions(self) -> np.ndarray:
        """phi_n at the 2-d nodes: (n_modes, (K-1)^2), x index slow."""
        S = self.sines()
        m = self.modes
        return (S[m[:, 0] - 1][:, :, None] * S[m[:, 1] - 1][:, None, :]).reshape(len(m), -1)

    def gram(self) -> np.ndarray:
        P = self.eigenfunctions()
        return self.weight * (P @ P.T)


def make_basis(N: int, K: int | None = None, degree: int | None = None) -> DomainBasis:
    need = min_quadrature(degree if degree is not None else 2 * N)
    if K is None:
        K = need
    if K < need:
        raise AliasingError(f"K={K} too small; need K >= {need}")
    return DomainBasis(N, K)


@lru_cache(maxsize=64)
def _sines(N: int, K: int) -> np.ndarray:
    x = np.pi * np.arange(1, K) / K
    S = np.sqrt(2 / np.pi) * np.sin(np.outer(np.arange(1, N + 1), x))
    S.setflags(write=False)
    return S


def phi(n, x, y) -> np.ndarray:
    j, k = n
    return (2 / np.pi) * np.sin(j * np.asarray(x)) * np.sin(k * np.asarray(y))


def _coef_square(N: int, values: np.ndarray) -> np.ndarray:
    """Scatter per-mode values into an (..., N, N) array indexed (j-1, k-1)."""
    m = _modes(N)
    out = np.zeros(values.shape[:-1] + (N, N), dtype=values.dtype)
    out[..., m[:, 0] - 1, m[:, 1] - 1] = values
    return out


def _kernel_coeffs(s: float, N: int) -> np.ndarray:
    m = _modes(N)
    return (1.0 + m[:, 0] ** 2 + m[:, 1] ** 2) ** (-s / 2)


# --------------------------------------------------------------- variance


@dataclass(frozen=True)
class VarianceField:
    basis: DomainBasis
    values: np.ndarray = field(repr=False)  # (K-1, K-1), axes (x, y)


def sigma_at(N: int, x, y) -> np.ndarray:
    """sigma_N(x, y) = sum_{lambda <= N} phi_n(x, y)^2 / (1 + lambda^2)."""
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    c = _coef_square(N, _kernel_coeffs(2, N))
    j = np.arange(1, N + 1)
    sx = np.sin(np.multiply.outer(x, j)) ** 2
    sy = np.sin(np.multiply.outer(y, j)) ** 2
    return (4 / np.pi**2) * np.einsum("...j,jk,...k->...", sx, c, sy)


def sigma_field(N: int, K: int | None = None) -> VarianceField:
    if N < 2:
        raise RangeError("N must be >= 2")
    b = make_basis(N, K)
    S2 = b.sines() ** 2
    c = _coef_square(N, _kernel_coeffs(2, N))
    return VarianceField(b, S2.T @ c @ S2)


# ------------------------------------------------------- kernels and bands


def spectral_band(j: int, x, y) -> np.ndarray:
    """pi_j(x, y) = sum over lambda_n in (j-1, j] of phi_n(x) phi_n(y); x, y are
    points of the square given as (..., 2) arrays."""
    if j < 0:
        raise RangeError("j must be >= 0")
    return spectral_bands(j, x, y)[..., j]


def spectral_bands(j_max: int, x, y) -> np.ndarray:
    """All bands j = 0..j_max at once: (..., j_max + 1)."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    m = _modes(j_max) if j_max >= 1 else np.zeros((0, 2), int)
    band = np.ceil(np.sqrt(m[:, 0] ** 2 + m[:, 1] ** 2) - 1e-12).astype(int)
    px = phi((m[:, 0], m[:, 1]), x[..., None, 0], x[..., None, 1])
    py = phi((m[:, 0], m[:, 1]), y[..., None, 0], y[..., None, 1])
    prod = px * py
    out = np.zeros(prod.shape[:-1] + (j_max + 1,))
    for b in np.unique(band):
        out[..., b] = prod[..., band == b].sum(axis=-1)
    return out


def gamma_s_domain(s: float, N: int, x, y) -> np.ndarray:
    """gamma_{s,N}(x, y) = sum_{lambda <= N} phi_n(x) phi_n(y) / (1 + lambda^2)^{s/2};
    x, y are (..., 2) point arrays."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    m = _modes(N)
    c = _kernel_coeffs(s, N)
    px = phi((m[:, 0], m[:, 1]), x[..., None, 0], x[..., None, 1])
    py = phi((m[:, 0], m[:, 1]), y[..., None, 0], y[..., None, 1])
    return np.sum(c * px * py, axis=-1)


def _check_lp(s: float, p: float):
    if p < 2:
        raise DomainError(f"p={p} below 2")
    if s <= 2 and s > 0 and not np.isinf(p):
        if s < 2 and p >= 2 / (2 - s):
            raise DomainError(f"p={p} outside [2, {2 / (2 - s)}) for s={s}")
    if s <= 0:
        raise DomainError("s must be positive")


def gamma_lp_distance(s: float, p: float, N: int, M: int) -> float:
    """||gamma_{s,M} - gamma_{s,N}||_{L^p([0,pi]^2 x [0,pi]^2)}.

    p = 2 is Parseval (sum over N < lambda <= M of (1+lambda^2)^{-s}); other
    even integers use exact tensor quadrature.  Non-even p is rejected since
    the quadrature would no longer be exact.
    """
    _check_lp(s, p)
    if M < N:
        raise RangeError("need M >= N")
    if M == N:
        return 0.0
    cm = _kernel_coeffs(s, M)
    cm[: len(_modes(N))] = 0.0  # modes are sorted by eigenvalue
    if p == 2:
        return float(np.sqrt(np.sum(cm**2)))
    if p != int(p) or int(p) % 2:
        raise DomainError("only even integer p is supported")
    p = int(p)
    b = make_basis(M, degree=p * M)
    val = _separable_double_integral(lambda g: g**p, [_coef_square(M, cm)], b.K)
    return val ** (1 / p)


# --------------------------------------------------------------- fields


@dataclass(frozen=True)
class DomainField:
    """Coefficients over the eigenmodes with lambda <= cutoff: (..., n_modes)."""

    cutoff: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape[-1] != len(_modes(self.cutoff)):
            raise ValueError("coefficient length does not match the mode count")
        object.__setattr__(self, "coeffs", c)

    def restrict(self, N: int) -> np.ndarray:
        if N > self.cutoff:
            raise RangeError(f"N={N} exceeds cutoff {self.cutoff}")
        return self.coeffs[..., : len(_modes(N))]

    def evaluate(self, x, y) -> np.ndarray:
        """Field at arbitrary points (broadcast x, y); shape batch + point shape."""
        m = _modes(self.cutoff)
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        P = phi((m[:, 0], m[:, 1]), x[..., None], y[..., None])  # (..., n_modes)
        return np.tensordot(self.coeffs, np.moveaxis(P, -1, 0), axes=(-1, 0))


def sample_domain_gff(seed: int, N: int, n_samples: int, start: int = 0) -> DomainField:
    """u = sum g_n phi_n / sqrt(1 + lambda_n^2), g_n standard complex Gaussian.

    Separate Philox channel from the torus sampler; draws follow the
    eigenvalue order so smaller cutoffs see a prefix of the same draws.
    """
    K = len(_modes(N))
    z = torus.counter_normals(seed, n_samples, 2 * K, start, channel=4)
    g = (z[:, 0::2] + 1j * z[:, 1::2]) * np.sqrt(0.5)
    return DomainField(N, g * _kernel_coeffs(1, N))


def grid_values(coeffs: np.ndarray, N: int, K: int) -> np.ndarray:
    """Field values at the interior nodes: (..., K-1, K-1), axes (x, y)."""
    S = _sines(N, K)
    C = _coef_square(N, np.asarray(coeffs, dtype=complex))
    return S.T @ C @ S


def g_functional_domain(f: DomainField, N: int, m: int, K: int | None = None):
    """G_N(u) = (1/2m) int (-1)^m m! L_m(|u_N(x)|^2; sigma_N(x)) dx."""
    b = make_basis(N, K, degree=2 * m * N)
    c = f.restrict(N)
    sig = sigma_field(N, b.K).values
    u = grid_values(c, N, b.K)
    w = _wick_abs(u, m, sig)
    return w.sum(axis=(-2, -1)) * b.weight / (2 * m)


def _wick_abs(u: np.ndarray, m: int, sig: np.ndarray) -> np.ndarray:
    # L_m(a; s) = sum_l c_l a^l s^{m-l}; written out because s -> 0 on the
    # boundary and the scaled recurrence would divide by it
    coef = laguerre_coefficients(m).coef
    a = u.real**2 + u.imag**2
    out = np.zeros_like(a)
    for l in range(m, -1, -1):
        out = out * a + coef[l] * sig ** (m - l)
    return (-1) ** m * factorial(m) * out


def _wick_odd(u: np.ndarray, m: int, sig: np.ndarray) -> np.ndarray:
    coef = laguerre_coefficients(m - 1, 1).coef
    a = u.real**2 + u.imag**2
    out = np.zeros_like(a)
    for l in range(m - 1, -1, -1):
        out = out * a + coef[l] * sig ** (m - 1 - l)
    return (-1) ** (m + 1) * factorial(m - 1) * out * u


def f_functional_domain(f: DomainField, N: int, m: int, K: int | None = None) -> DomainField:
    """<:|u_N|^{2(m-1)} u_N:, phi_n> for lambda_n <= N, by exact quadrature."""
    b = make_basis(N, K, degree=2 * m * N)
    c = f.restrict(N)
    sig = sigma_field(N, b.K).values
    w = _wick_odd(grid_values(c, N, b.K), m, sig)
    S = b.sines()
    hat = S @ w @ S.T * b.weight  # (..., j, k)
    md = _modes(N)
    return DomainField(N, hat[..., md[:, 0] - 1, md[:, 1] - 1])


def mass_domain(f: DomainField, N: int):
    return np.sum(np.abs(f.restrict(N)) ** 2, axis=-1)


# ------------------------------------------------------------ exact norms


def _pair_table(N: int, K: int):
    """T[j, p] = S_j(a) S_j(b) over node pairs a <= b of one axis, with the
    symmetry weights (1 on the diagonal, 2 off it)."""
    S = _sines(N, K)
    a, b = np.triu_indices(K - 1)
    return S[:, a] * S[:, b], np.where(a == b, 1.0, 2.0)


def _separable_double_integral(fn, coeff_squares, K: int, project: bool = False):
    """int int fn(gamma_1, gamma_2, ...) over the square x square, where each
    gamma(x, y) = sum_jk C[j, k] S_j(x1) S_j(y1) S_k(x2) S_k(y2).

    The kernel factors through per-axis node pairs, so the 4-d sum becomes
    T^T C T blocks; both axes fold over the x <-> y symmetry.  With
    ``project`` the integrand is also tested against every
    S_j(x1) S_j(y1) S_k(x2) S_k(y2) and the (N, N) matrix is returned.
    """
    N = coeff_squares[0].shape[0]
    T, w = _pair_table(N, K)
    left = [(C.T @ T).T for C in coeff_squares]  # (pairs, N) for axis 2
    Tw = T * w
    total = np.zeros((N, N)) if project else 0.0
    for i in range(0, T.shape[1], BLOCK):
        g = [L[i : i + BLOCK] @ T for L in left]
        v = fn(*g)
        if project:
            total += Tw[:, i : i + BLOCK] @ (v @ Tw.T)
        else:
            total += float(w[i : i + BLOCK] @ v @ w)
    return total * (np.pi / K) ** 4


def g_l2_distance_exact_domain(m: int, N: int, M: int, K: int | None = None) -> float:
    """||G_M - G_N||_{L^2(mu)} = (m!/(2m)) (int int gamma_M^{2m} - gamma_N^{2m})^{1/2}."""
    if M < N:
        raise RangeError("need M >= N")
    if M == N:
        return 0.0
    b = make_basis(M, K, degree=2 * m * M)
    cm = _kernel_coeffs(2, M)
    cn = cm.copy()
    cn[len(_modes(N)) :] = 0.0
    C = [_coef_square(M, cm), _coef_square(M, cn)]
    val = _separable_double_integral(lambda gm, gn: gm ** (2 * m) - gn ** (2 * m), C, b.K)
    return factorial(m) / (2 * m) * np.sqrt(max(val, 0.0))


def j_coefficients(m: int, N: int, M: int | None = None, K: int | None = None) -> np.ndarray:
    """J_{N,n} = m!(m-1)! int int gamma_N^{2m-1}(x, y) phi_n(x) phi_n(y), for the
    modes lambda_n <= M (M defaults to N; entries with lambda_n > N are the
    projections of the product and are zero only after P_N)."""
    M = N if M is None else M
    L = max(N, M)
    b = make_basis(L, K, degree=2 * m * L)
    c = np.zeros(len(_modes(L)))
    c[: len(_modes(N))] = _kernel_coeffs(2, N)
    J = _separable_double_integral(lambda g: g ** (2 * m - 1), [_coef_square(L, c)], b.K, project=True)
    md = _modes(M)
    return factorial(m) * factorial(m - 1) * J[md[:, 0] - 1, md[:, 1] - 1]


def f_hminus_surrogate(m: int, N: int, M: int, eps: float = 0.5) -> float:
    """sum_n (1 + lambda_n^2)^{-eps} (J_{M,n} - 1_{lambda_n <= N} J_{N,n})."""
    jm = j_coefficients(m, M)
    jn = j_coefficients(m, N, M)
    jn[len(_modes(N)) :] = 0.0
    lam = make_basis(M).eigenvalues
    return float(np.sum((1 + lam) ** (-eps) * (jm - jn)))


# ------------------------------------------------------------- dynamics


def evolve_domain(f: DomainField, N: int, m: int, t_final: float, config=None, times=None):
    """Truncated Wick NLS on the square: the torus integrator with the
    eigenbasis transform.  Returns (times, coefficients (T, ..., n_modes))."""
    cfg = config or IntegratorConfig()
    times = np.linspace(0.0, t_final, 11) if times is None else np.asarray(times, float)
    c = f.restrict(N)
    flat = c.reshape(-1, c.shape[-1])
    lam = make_basis(N).eigenvalues
    out = integrate_rotating(flat, lam, lambda u: f_functional_domain(DomainField(N, u), N, m).coeffs, times, cfg)
    return times, out.reshape((len(times),) + c.shape)
