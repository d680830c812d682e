"""Renormalized energy G_N, Wick nonlinearity F_N, their exact L^2(mu) norms,
and the brute-force Fourier-side decomposition of 6 G_N for m = 3.

Exact norms reduce to Fourier coefficients of powers of the covariance kernel
gamma_N = sum_{|n|<=N} e_n / (1+|n|^2):

    (2m)^2 ||G_M - G_N||^2 = (m!)^2 (c(M) - c(N)),   c(K) = int gamma_K^{2m},
    ||<F_N, e_n>||^2       = m! (m-1)! F[gamma_N^{2m-1}](n),  |n| <= N.

Both are evaluated on grids large enough that the trigonometric polynomials
involved are integrated (or their coefficients extracted) without aliasing.
"""
from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field
from math import factorial

import numpy as np
from scipy.fft import next_fast_len

from . import torus
from .errors import AliasingError, RangeError, ResourceError
from .torus import SpectralField
from .wickpoly import WickContext, laguerre_coefficients, wick_abs_power, wick_odd_power

MAX_GRID = 4096
CHUNK = 256
# grid points per block; small blocks keep the synthesized grids in cache
GRID_BLOCK = 80000


def _context(ctx, N: int) -> WickContext:
    if isinstance(ctx, WickContext):
        return ctx
    return WickContext(int(ctx), torus.sigma_n(N))


def quadrature_grid(degree: int, grid: int | None = None) -> int:
    """Grid size integrating trig polynomials of the given degree exactly."""
    need = degree + 1
    if grid is None:
        grid = next_fast_len(need)
    if grid < need:
        raise AliasingError(f"grid {grid} too small for degree {degree}; need >= {need}")
    if grid > MAX_GRID:
        raise ResourceError(f"grid {grid} exceeds MAX_GRID={MAX_GRID}")
    return grid


def _low_coeffs(f: SpectralField, N: int) -> np.ndarray:
    if N > f.cutoff:
        raise RangeError(f"N={N} exceeds field cutoff {f.cutoff}")
    return torus.restrict(f.coeffs, f.cutoff, N)


def _chunks(coeffs: np.ndarray):
    flat = coeffs.reshape(-1, coeffs.shape[-1])
    for i in range(0, len(flat), CHUNK):
        yield flat[i : i + CHUNK]


def _abs_moments(block: np.ndarray, N: int, G: int, top: int, single: bool = False) -> np.ndarray:
    """Grid means of |u|^{2l}, l = 0..top, per sample: shape (B, top + 1).

    ``single`` synthesizes in complex64 (means still accumulate in float64);
    roughly twice as fast, relative error around 1e-6.
    """
    if single:
        E = torus._synthesis_matrix(N, G).astype(np.complex64)
        sq = torus._square(block, N).astype(np.complex64)
        u = np.swapaxes(sq @ E, -1, -2) @ E
    else:
        u = torus.grid_values(block, N, G)
    a = u.real * u.real
    a += u.imag * u.imag
    out = np.empty((len(block), top + 1))
    out[:, 0] = 1.0
    p = a
    for l in range(1, top + 1):
        if l > 1:
            p = p * a
        out[:, l] = p.mean(axis=(-2, -1), dtype=np.float64)
    return out


def g_functionals(f: SpectralField, N: int, orders, grid: int | None = None, single: bool = False) -> dict:
    """G_N(u) for several Wick orders from a single grid synthesis.

    Uses linearity: mean of L_m(|u|^2; sigma) is a fixed combination of the
    grid means of |u|^{2l}, so only the powers of |u|^2 touch the grid.
    """
    orders = sorted({int(m) for m in orders})
    top = max(orders)
    G = quadrature_grid(2 * top * N, grid)
    sigma = torus.sigma_n(N)
    c = _low_coeffs(f, N)
    flat = c.reshape(-1, c.shape[-1])
    step = max(1, GRID_BLOCK // (G * G))
    mom = np.concatenate([_abs_moments(flat[i : i + step], N, G, top, single) for i in range(0, len(flat), step)])
    out = {}
    for m in orders:
        coef = laguerre_coefficients(m).coef
        w = np.array([coef[l] * sigma ** (m - l) for l in range(m + 1)])
        g = (-1) ** m * factorial(m) * (mom[:, : m + 1] @ w) / (2 * m)
        out[m] = g.reshape(c.shape[:-1]) if c.ndim > 1 else float(g[0])
    return out


def g_functional(f: SpectralField, N: int, ctx, grid: int | None = None):
    """G_N(u) = (1/2m) int :|P_N u|^{2m}: dx (normalized measure).

    ``ctx`` is a WickContext or just the order m (variance sigma_N).
    """
    ctx = _context(ctx, N)
    m = int(ctx.order)
    if np.ndim(ctx.variance) == 0 and float(ctx.variance) == torus.sigma_n(N):
        return g_functionals(f, N, (m,), grid)[m]
    G = quadrature_grid(2 * m * N, grid)
    c = _low_coeffs(f, N)
    vals = [torus.grid_mean(wick_abs_power(torus.grid_values(b, N, G), ctx)) / (2 * m) for b in _chunks(c)]
    vals = np.concatenate(vals)
    return vals.reshape(c.shape[:-1]) if c.ndim > 1 else float(vals[0])


def f_functional(f: SpectralField, N: int, ctx, grid: int | None = None) -> SpectralField:
    """F_N(u) = P_N(:|P_N u|^{2(m-1)} P_N u:) as a field with cutoff N.

    The product has degree (2m-1)N; reading its coefficients on |n| <= N
    without aliasing needs a grid of at least 2mN + 1 points per axis.
    """
    ctx = _context(ctx, N)
    m = int(ctx.order)
    G = quadrature_grid(2 * m * N, grid)
    c = _low_coeffs(f, N)
    modes = torus.lattice(N)
    out = []
    for block in _chunks(c):
        u = torus.grid_values(block, N, G)  # axes (x2, x1)
        w = wick_odd_power(u, ctx)
        hat = np.fft.fft2(w, axes=(-2, -1)) / (G * G)
        out.append(hat[:, modes[:, 1] % G, modes[:, 0] % G])
    out = np.concatenate(out).reshape(c.shape)
    return SpectralField(N, out)


# ------------------------------------------------------- convolution tables


@dataclass(frozen=True)
class ConvolutionTable:
    """Fourier coefficients of gamma_N^k on the square [-kN, kN]^2.

    values[n1 + kN, n2 + kN] = sum over Gamma_k(n), |n_j| <= N, of
    prod_j 1 / (1 + |n_j|^2).
    """

    order: int
    cutoff: int
    values: np.ndarray = field(repr=False)

    @property
    def radius(self) -> int:
        return self.order * self.cutoff

    def at(self, n) -> float:
        r = self.radius
        n1, n2 = int(n[0]), int(n[1])
        if abs(n1) > r or abs(n2) > r:
            return 0.0
        return float(self.values[n1 + r, n2 + r])

    def on_lattice(self, N: int) -> np.ndarray:
        """Values over lattice(N) (lexicographic)."""
        modes = torus.lattice(N)
        r = self.radius
        out = np.zeros(len(modes))
        inside = np.all(np.abs(modes) <= r, axis=1)
        out[inside] = self.values[modes[inside, 0] + r, modes[inside, 1] + r]
        return out


def _gamma_on_grid(N: int, G: int) -> np.ndarray:
    return torus.grid_values(1.0 / torus.bracket_sq(N), N, G).real


def power_table(k: int, N: int, grid: int | None = None) -> ConvolutionTable:
    """k-fold autocorrelation of the gamma_N coefficients via zero-padded FFT."""
    k = int(k)
    if k < 1:
        raise ValueError("k must be >= 1")
    r = k * N
    # coefficients up to radius r must not alias onto each other
    G = quadrature_grid(2 * r, grid)
    g = _gamma_on_grid(N, G)  # axes (x2, x1)
    hat = np.fft.fft2(g**k) / (G * G)
    idx = np.arange(-r, r + 1) % G
    vals = hat[np.ix_(idx, idx)].real.T  # back to (n1, n2)
    return ConvolutionTable(k, N, np.ascontiguousarray(vals))


def convolution_table(m: int, N: int, kind: str = "even", grid: int | None = None) -> ConvolutionTable:
    """gamma^{2m} ('even') or |gamma|^{2m-2} gamma = gamma^{2m-1} ('odd')."""
    if kind == "even":
        return power_table(2 * m, N, grid)
    if kind == "odd":
        return power_table(2 * m - 1, N, grid)
    raise ValueError(f"kind must be 'even' or 'odd', not {kind!r}")


def gamma_sum_bruteforce(k: int, N: int, n=(0, 0)) -> float:
    """Nested-loop sum over Gamma_k(n) = {n_1 - n_2 + n_3 - ... = n}, |n_j| <= N,
    of prod 1/(1+|n_j|^2).  The last index is solved from the constraint."""
    modes = [tuple(map(int, p)) for p in torus.lattice(N)]
    w = {p: 1.0 / (1 + p[0] ** 2 + p[1] ** 2) for p in modes}
    sign_last = 1 if k % 2 == 1 else -1
    total = 0.0
    for head in itertools.product(modes, repeat=k - 1):
        s0 = s1 = 0
        prod = 1.0
        for j, p in enumerate(head):
            sg = 1 if j % 2 == 0 else -1
            s0 += sg * p[0]
            s1 += sg * p[1]
            prod *= w[p]
        last = (sign_last * (n[0] - s0), sign_last * (n[1] - s1))
        wl = w.get(last)
        if wl is not None:
            total += prod * wl
    return total


# ------------------------------------------------------------ exact norms


def g_l2_distance_exact(m: int, N: int, M: int, grid: int | None = None) -> float:
    """||G_M - G_N||_{L^2(mu)} = m! sqrt(c(M) - c(N)) / (2m)."""
    if M < N:
        raise ValueError("need M >= N")
    if m < 2:
        raise ValueError("need m >= 2")
    if M == N:
        return 0.0
    G = quadrature_grid(2 * m * M, grid)
    gm = _gamma_on_grid(M, G)
    gn = _gamma_on_grid(N, G)
    diff = float(np.mean(gm ** (2 * m) - gn ** (2 * m)))
    return factorial(m) * np.sqrt(max(diff, 0.0)) / (2 * m)


def g_l2_norm_exact(m: int, N: int, grid: int | None = None) -> float:
    """||G_N||_{L^2(mu)} = m! sqrt(c(N)) / (2m)."""
    G = quadrature_grid(2 * m * N, grid)
    return factorial(m) * np.sqrt(float(np.mean(_gamma_on_grid(N, G) ** (2 * m)))) / (2 * m)


def f_coeff_l2_exact(m: int, N: int, n, table: ConvolutionTable | None = None) -> float:
    """||<F_N(u), e_n>||^2_{L^2(mu)} = m!(m-1)! F[gamma_N^{2m-1}](n); zero for |n| > N."""
    if n[0] ** 2 + n[1] ** 2 > N * N:
        return 0.0
    table = table or convolution_table(m, N, "odd")
    return factorial(m) * factorial(m - 1) * table.at(n)


def f_coeff_l2_distance_exact(m: int, N: int, M: int, tables=None) -> np.ndarray:
    """||<F_M - F_N, e_n>||^2 over lattice(M):
    C_m (1_{|n|<=M} T_M(n) - 1_{|n|<=N} T_N(n))."""
    tm, tn = tables or (convolution_table(m, M, "odd"), convolution_table(m, N, "odd"))
    cm = factorial(m) * factorial(m - 1)
    out = tm.on_lattice(M)
    out[torus._ball_mask(N, M)] -= tn.on_lattice(N)
    return cm * out


def f_hs_distance_exact(m: int, N: int, M: int, s: float) -> float:
    """(sum_n <n>^{2s} ||<F_M - F_N, e_n>||^2)^{1/2}, the H^s(T^2) distance in L^2(mu)."""
    d = f_coeff_l2_distance_exact(m, N, M)
    return float(np.sqrt(np.sum(torus.bracket_sq(M) ** s * d)))


def hausdorff_young_check(m: int, N: int) -> tuple[float, float]:
    """(||gamma_N||_{L^{4m-2}}^{2m-1}, lattice-sum bound) for the kernel power bound."""
    p = 4 * m - 2
    G = quadrature_grid(p * N)
    lhs = float(np.mean(_gamma_on_grid(N, G) ** p)) ** ((2 * m - 1) / p)
    q = p / (p - 1)
    rhs = float(np.sum(torus.bracket_sq(N) ** (-q))) ** ((4 * m - 3) / 2)
    return lhs, rhs


# ------------------------------------------------- Monte Carlo convergence


def mc_g_distance(m: int, N: int, M: int, n_samples: int, seed: int):
    """Sample G_M - G_N under mu.  Returns (sqrt(E d^2) estimate, stderr, d)."""
    f = torus.sample_gff(seed, M, n_samples)
    d = g_functional(f, M, m) - g_functional(f, N, m)
    d2 = d**2
    est = float(np.sqrt(d2.mean()))
    se_sq = float(d2.std(ddof=1) / np.sqrt(n_samples))
    return est, se_sq / (2 * est) if est > 0 else 0.0, d


def convergence_rows(m: int, n_list, n_samples: int = 0, seed: int = 0, factor: int = 2):
    """Rows (N, M, exact_distance, mc_estimate, stderr) with M = factor * N."""
    rows = []
    for N in n_list:
        M = factor * N
        exact = g_l2_distance_exact(m, N, M)
        if n_samples:
            est, se, _ = mc_g_distance(m, N, M, n_samples, seed)
        else:
            est, se = float("nan"), float("nan")
        rows.append((N, M, exact, est, se))
    return rows


def fit_loglog_slope(xs, ys) -> float:
    slope, _ = np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)
    return float(slope)


def rows_to_csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


# --------------------------------------------------- Fourier-side, m = 3


@dataclass
class AppendixTerms:
    """Per-sample terms of the m = 3 Fourier-side expansion of 6 G_N.

    Brute-force pieces come from enumerating Gamma_6(0) and classifying each
    tuple by its odd/even pairings; the rest are the closed forms obtained by
    regrouping.  All arrays have one entry per sample.
    """

    I: np.ndarray
    II: np.ndarray
    III: np.ndarray
    IV: np.ndarray
    I1: np.ndarray
    I2: np.ndarray
    I3: np.ndarray
    I31: np.ndarray
    I32: np.ndarray
    I33: np.ndarray
    I2_regrouped: np.ndarray
    II1: np.ndarray
    II2: np.ndarray
    II3: np.ndarray
    I321: np.ndarray
    I331: np.ndarray
    I332: np.ndarray
    S1: np.ndarray
    S2: np.ndarray
    S3: np.ndarray
    sigma: float

    @property
    def combined(self) -> np.ndarray:
        """(I + II + III + IV) / 6, which is G_N for m = 3."""
        return (self.I + self.II + self.III + self.IV) / 6

    def identities(self) -> dict:
        """name -> (lhs, rhs) arrays."""
        s, S1, S2, S3 = self.sigma, self.S1, self.S2, self.S3
        return {
            "partition I=I1+I2+I3": (self.I, self.I1 + self.I2 + self.I3),
            "three pairs I3=I31+I32+I33": (self.I3, self.I31 + self.I32 + self.I33),
            "I31 closed form": (self.I31, S3),
            "I32 = I321 - 9 S3": (self.I32, self.I321 - 9 * S3),
            "I33 = I331 + I332 + 12 S3": (self.I33, self.I331 + self.I332 + 12 * S3),
            "II3 + I321 + I332 = 9(sigma - S1) S2": (self.II3 + self.I321 + self.I332, 9 * (s - S1) * S2),
            "III + IV + II2 + I331 = 6(S1 - sigma)^3": (self.III + self.IV + self.II2 + self.I331, 6 * (S1 - s) ** 3),
            "II = II1 + II2 + II3 - I2_regrouped": (self.II, self.II1 + self.II2 + self.II3 - self.I2_regrouped),
        }

    def regrouping_defect(self) -> np.ndarray:
        """I2 (brute force) minus the regrouped 9 S1 * (pair-free Gamma_4 sum).

        Non-zero whenever one index is paired with two others of the opposite
        parity; the regrouped form counts such tuples once per pairing.
        """
        return self.I2 - self.I2_regrouped


@dataclass(frozen=True)
class _Gamma6:
    idx: np.ndarray  # (T, 6) lattice indices
    matching: np.ndarray  # max odd/even matching size per tuple
    odd_type: np.ndarray  # 1 all equal, 2 two equal, 3 distinct (odd entries)


def _index_map(N: int):
    modes = torus.lattice(N)
    off = 6 * N
    table = -np.ones((2 * off + 1, 2 * off + 1), dtype=np.int64)
    table[modes[:, 0] + off, modes[:, 1] + off] = np.arange(len(modes))
    return modes, table, off


def _enumerate_gamma(k: int, N: int) -> np.ndarray:
    """All tuples in Gamma_k(0) with |n_j| <= N, as (T, k) lattice indices."""
    modes, table, off = _index_map(N)
    K = len(modes)
    head = np.indices((K,) * (k - 1)).reshape(k - 1, -1).T
    signs = np.array([1 if j % 2 == 0 else -1 for j in range(k - 1)])
    partial = (modes[head] * signs[None, :, None]).sum(axis=1)  # (T, 2)
    sign_last = 1 if k % 2 == 1 else -1
    last = -sign_last * partial  # n_k from constraint sum = 0
    last_idx = table[last[:, 0] + off, last[:, 1] + off]
    ok = last_idx >= 0
    return np.concatenate([head[ok], last_idx[ok, None]], axis=1)


def _gamma6(N: int) -> _Gamma6:
    idx = _enumerate_gamma(6, N)
    odd, even = idx[:, 0::2], idx[:, 1::2]
    eq = odd[:, :, None] == even[:, None, :]  # (T, 3, 3)
    any_edge = eq.any(axis=(1, 2))
    perfect = np.zeros(len(idx), dtype=bool)
    for perm in itertools.permutations(range(3)):
        perfect |= eq[:, 0, perm[0]] & eq[:, 1, perm[1]] & eq[:, 2, perm[2]]
    matching = np.where(perfect, 3, np.where(any_edge, 1, 0))
    n_distinct = np.array([len(set(r)) for r in odd.tolist()])
    return _Gamma6(idx, matching, n_distinct)


def _tuple_products(u: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """prod_j u*(n_j) with u* = u on odd positions (1-based), conj(u) on even."""
    prod = np.ones((u.shape[0], len(idx)), dtype=complex)
    for j in range(idx.shape[1]):
        col = u[:, idx[:, j]]
        prod *= col if j % 2 == 0 else np.conj(col)
    return prod


def appendix_decomposition_m3(f: SpectralField, N: int) -> AppendixTerms:
    """Brute-force evaluation of every labelled term for m = 3, N <= 2."""
    if N > 2:
        raise ResourceError("brute-force Gamma_6(0) enumeration is limited to N <= 2")
    u = np.atleast_2d(_low_coeffs(f, N))
    sigma = torus.sigma_n(N)
    g6 = _gamma6(N)
    p6 = _tuple_products(u, g6.idx)
    I = p6.sum(axis=1).real
    I1 = p6[:, g6.matching == 0].sum(axis=1).real
    I2 = p6[:, g6.matching == 1].sum(axis=1).real
    three = g6.matching == 3
    I3 = p6[:, three].sum(axis=1).real
    I31 = p6[:, three & (g6.odd_type == 1)].sum(axis=1).real
    I32 = p6[:, three & (g6.odd_type == 2)].sum(axis=1).real
    I33 = p6[:, three & (g6.odd_type == 3)].sum(axis=1).real

    idx4 = _enumerate_gamma(4, N)
    p4 = _tuple_products(u, idx4)
    T4 = p4.sum(axis=1).real
    free4 = (idx4[:, 0] != idx4[:, 1]) & (idx4[:, 0] != idx4[:, 3])
    T4_free = p4[:, free4].sum(axis=1).real

    a2 = np.abs(u) ** 2
    S1, S2, S3 = a2.sum(axis=1), (a2**2).sum(axis=1), (a2**3).sum(axis=1)
    return AppendixTerms(
        I=I,
        II=-9 * sigma * T4,
        III=18 * sigma**2 * S1,
        IV=np.full_like(S1, -6 * sigma**3),
        I1=I1,
        I2=I2,
        I3=I3,
        I31=I31,
        I32=I32,
        I33=I33,
        I2_regrouped=9 * S1 * T4_free,
        II1=9 * (S1 - sigma) * T4_free,
        II2=-18 * sigma * S1**2,
        II3=9 * sigma * S2,
        I321=9 * S2 * S1,
        I331=6 * S1**3,
        I332=-18 * S1 * S2,
        S1=S1,
        S2=S2,
        S3=S3,
        sigma=sigma,
    )
