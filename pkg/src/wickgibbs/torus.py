"""Truncated Gaussian free field on the 2-torus.

Conventions
-----------
* Integrals over T^2 use the normalized Haar measure dx / (2 pi)^2, so the
  characters e_n(x) = exp(i n.x) are orthonormal and Parseval reads
  <f, h> = sum_n f(n) conj(h(n)).
* Standard complex Gaussians have independent real and imaginary parts of
  variance 1/2 (E|g|^2 = 1).
* The truncation {|n| <= N} is the Euclidean ball.  Coefficient arrays are
  stored in lexicographic (n1, n2) order; ``lattice(N)`` gives the modes.

Sampling is counter based: the Gaussians of sample ``index`` under ``seed``
come from a Philox stream keyed by ``seed`` whose counter is offset by
``index``.  Inside one stream the modes are consumed in shell order
(|n|^2, n1, n2), so a ball of radius N is always a prefix and the value of
g_n does not depend on the cutoff it was drawn with.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from numpy.random import Generator, Philox

from .errors import AliasingError, RangeError

MAGIC = b"WGF1"
_HEADER = struct.Struct("<4sII")
_RECORD = struct.Struct("<iidd")


# ---------------------------------------------------------------- lattice


@lru_cache(maxsize=None)
def _lattice(N: int) -> np.ndarray:
    r = np.arange(-N, N + 1)
    n1, n2 = np.meshgrid(r, r, indexing="ij")
    keep = n1**2 + n2**2 <= N * N
    modes = np.stack([n1[keep], n2[keep]], axis=-1).astype(np.int64)
    modes.setflags(write=False)
    return modes


def lattice(N: int) -> np.ndarray:
    """Modes n in Z^2 with |n| <= N, shape (K, 2), lexicographic order."""
    N = int(N)
    if N < 0:
        raise RangeError(f"cutoff must be >= 0, got {N}")
    return _lattice(N)


@lru_cache(maxsize=None)
def _shell_order(N: int) -> np.ndarray:
    """Permutation taking shell order to lexicographic order."""
    modes = _lattice(N)
    order = np.lexsort((modes[:, 1], modes[:, 0], (modes**2).sum(axis=1)))
    order.setflags(write=False)
    return order


@lru_cache(maxsize=None)
def _ball_mask(N: int, M: int) -> np.ndarray:
    """Boolean mask over lattice(M) selecting |n| <= N."""
    mask = (_lattice(M) ** 2).sum(axis=1) <= N * N
    mask.setflags(write=False)
    return mask


def norm_sq(N: int) -> np.ndarray:
    """|n|^2 over lattice(N)."""
    return (lattice(N) ** 2).sum(axis=1)


def bracket_sq(N: int) -> np.ndarray:
    """1 + |n|^2 over lattice(N)."""
    return 1.0 + norm_sq(N)


def mode_index(N: int, n: Sequence[int]) -> int:
    modes = lattice(N)
    hit = np.nonzero((modes[:, 0] == n[0]) & (modes[:, 1] == n[1]))[0]
    if hit.size == 0:
        raise RangeError(f"mode {tuple(n)} outside |n| <= {N}")
    return int(hit[0])


# ------------------------------------------------------------ data types


@dataclass(frozen=True)
class SpectralField:
    """Coefficients u(n), |n| <= cutoff.  ``coeffs`` has shape (..., K);
    leading axes index independent samples."""

    cutoff: int
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        K = len(lattice(self.cutoff))
        if c.shape[-1:] != (K,):
            raise RangeError(f"expected trailing axis {K} for cutoff {self.cutoff}, got {c.shape}")
        object.__setattr__(self, "coeffs", c)

    @property
    def modes(self) -> np.ndarray:
        return lattice(self.cutoff)

    @property
    def batch_shape(self) -> tuple:
        return self.coeffs.shape[:-1]

    def __getitem__(self, n) -> complex:
        return self.coeffs[..., mode_index(self.cutoff, n)]

    def __len__(self):
        return self.coeffs.shape[0] if self.coeffs.ndim > 1 else 1

    def sample(self, i: int) -> "SpectralField":
        return SpectralField(self.cutoff, self.coeffs[i])

    def mass(self) -> np.ndarray:
        return np.sum(np.abs(self.coeffs) ** 2, axis=-1)

    @classmethod
    def zeros(cls, cutoff: int, batch_shape: tuple = ()) -> "SpectralField":
        return cls(cutoff, np.zeros(batch_shape + (len(lattice(cutoff)),), dtype=complex))

    @classmethod
    def from_modes(cls, cutoff: int, values: dict) -> "SpectralField":
        f = np.zeros(len(lattice(cutoff)), dtype=complex)
        for n, v in values.items():
            f[mode_index(cutoff, n)] = v
        return cls(cutoff, f)

    # serialization -------------------------------------------------

    def to_bytes(self) -> bytes:
        if self.coeffs.ndim != 1:
            raise ValueError("serialize one field at a time")
        # lattice(N) is already lexicographic
        out = [_HEADER.pack(MAGIC, self.cutoff, len(self.coeffs))]
        for (n1, n2), c in zip(self.modes, self.coeffs):
            out.append(_RECORD.pack(int(n1), int(n2), c.real, c.imag))
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "SpectralField":
        magic, cutoff, count = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        f = cls.zeros(cutoff)
        coeffs = f.coeffs.copy()
        off = _HEADER.size
        for _ in range(count):
            n1, n2, re, im = _RECORD.unpack_from(data, off)
            off += _RECORD.size
            coeffs[mode_index(cutoff, (n1, n2))] = complex(re, im)
        return cls(cutoff, coeffs)

    def to_json(self) -> str:
        if self.coeffs.ndim != 1:
            raise ValueError("serialize one field at a time")
        modes = [[int(n1), int(n2), c.real, c.imag] for (n1, n2), c in zip(self.modes, self.coeffs)]
        return json.dumps({"cutoff": self.cutoff, "modes": modes}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SpectralField":
        obj = json.loads(text)
        return cls.from_modes(obj["cutoff"], {(a, b): complex(re, im) for a, b, re, im in obj["modes"]})


@dataclass(frozen=True)
class CovarianceKernel:
    s: float
    cutoff: int
    coeffs: np.ndarray = field(repr=False)

    def as_field(self) -> SpectralField:
        return SpectralField(self.cutoff, self.coeffs.astype(complex))


@dataclass(frozen=True)
class NoiseVector:
    """Standard complex Gaussians g_n, |n| <= cutoff, for one or many samples."""

    seed: int
    cutoff: int
    gaussians: np.ndarray = field(repr=False)

    def as_field(self) -> SpectralField:
        return SpectralField(self.cutoff, self.gaussians)


# --------------------------------------------------------------- sampling


def _stream(seed: int, index: int, channel: int = 0) -> Generator:
    return Generator(Philox(key=[int(seed) & 0xFFFFFFFFFFFFFFFF, channel], counter=[0, 0, 0, int(index)]))


def counter_normals(seed: int, n_samples: int, dim: int, start: int = 0, channel: int = 0) -> np.ndarray:
    """(n_samples, dim) standard normals; row i is the head of stream
    (seed, channel, start + i), so rows never depend on the batch layout."""
    z = np.empty((n_samples, dim))
    gen = _stream(seed, start, channel)
    bg = gen.bit_generator
    base = bg.state
    for i in range(n_samples):
        if i:
            # rewinding the counter of one generator is much cheaper than
            # constructing a fresh Philox per sample, and yields the same stream
            st = dict(base)
            st["state"] = {"counter": base["state"]["counter"].copy(), "key": base["state"]["key"]}
            st["state"]["counter"][3] = start + i
            bg.state = st
        gen.standard_normal(out=z[i])
    return z


def _draw(seed: int, index: int, N: int) -> np.ndarray:
    K = len(lattice(N))
    z = _stream(seed, index).standard_normal(2 * K)
    g_shell = (z[0::2] + 1j * z[1::2]) * np.sqrt(0.5)
    g = np.empty(K, dtype=complex)
    g[_shell_order(N)] = g_shell
    return g


def sample_noise(seed: int, N: int, n_samples: int | None = None, start: int = 0) -> NoiseVector:
    """Standard complex Gaussians on |n| <= N.

    With ``n_samples=None`` a single vector (stream ``start``) is returned,
    otherwise an (n_samples, K) array from streams start, start+1, ...
    Modes take their draws in shell order, so the draws for a smaller
    cutoff are a prefix of those for a larger one.
    """
    K = len(lattice(N))
    if n_samples is None:
        return NoiseVector(seed, N, _draw(seed, start, N))
    z = counter_normals(seed, n_samples, 2 * K, start)
    g = np.empty((n_samples, K), dtype=complex)
    g[:, _shell_order(N)] = (z[:, 0::2] + 1j * z[:, 1::2]) * np.sqrt(0.5)
    return NoiseVector(seed, N, g)


def gff_from_noise(noise: NoiseVector) -> SpectralField:
    return SpectralField(noise.cutoff, noise.gaussians / np.sqrt(bracket_sq(noise.cutoff)))


def sample_gff(seed: int, N_max: int, n_samples: int | None = None, start: int = 0) -> SpectralField:
    """u(n) = g_n / sqrt(1 + |n|^2) for |n| <= N_max."""
    return gff_from_noise(sample_noise(seed, N_max, n_samples, start))


# ------------------------------------------------------ projections, kernels


def restrict(coeffs: np.ndarray, M: int, N: int) -> np.ndarray:
    """Coefficients over lattice(M) -> coefficients over lattice(N), N <= M."""
    if N > M:
        raise RangeError(f"cannot restrict cutoff {M} to larger {N}")
    return coeffs[..., _ball_mask(N, M)]


def extend(coeffs: np.ndarray, N: int, M: int) -> np.ndarray:
    """Zero-pad coefficients over lattice(N) to lattice(M), M >= N."""
    if N > M:
        raise RangeError(f"cannot extend cutoff {N} to smaller {M}")
    out = np.zeros(coeffs.shape[:-1] + (len(lattice(M)),), dtype=complex)
    out[..., _ball_mask(N, M)] = coeffs
    return out


def project(f: SpectralField, N: int) -> SpectralField:
    """P_N: zero outside |n| <= N; the cutoff of the result is unchanged."""
    if N > f.cutoff:
        raise RangeError(f"projection cutoff {N} exceeds field cutoff {f.cutoff}")
    return SpectralField(f.cutoff, np.where(_ball_mask(N, f.cutoff), f.coeffs, 0))


def sigma_n(N: int) -> float:
    """sigma_N = sum_{|n| <= N} 1 / (1 + |n|^2)."""
    return float(np.sum(1.0 / bracket_sq(N)))


def gamma_kernel(s: float, N: int) -> CovarianceKernel:
    return CovarianceKernel(float(s), int(N), bracket_sq(N) ** (-s / 2))


def gamma_eval(kernel: CovarianceKernel, x) -> np.ndarray:
    """sum_n (1 + |n|^2)^{-s/2} exp(i n.x) at points x of shape (..., 2)."""
    x = np.asarray(x, dtype=float)
    phase = x @ lattice(kernel.cutoff).T.astype(float)
    return np.exp(1j * phase) @ kernel.coeffs


def inner(f: SpectralField, h: SpectralField) -> np.ndarray:
    """<f, h> in L^2(T^2, normalized measure)."""
    M = max(f.cutoff, h.cutoff)
    return np.sum(extend(f.coeffs, f.cutoff, M) * np.conj(extend(h.coeffs, h.cutoff, M)), axis=-1)


def white_noise_functional(f: SpectralField, noise: NoiseVector) -> np.ndarray:
    """W_f = sum_n f(n) conj(g_n)."""
    if f.cutoff > noise.cutoff:
        tail = ~_ball_mask(noise.cutoff, f.cutoff)
        if np.any(f.coeffs[..., tail] != 0):
            raise RangeError("f has support outside the noise mode set")
        fc = restrict(f.coeffs, f.cutoff, noise.cutoff)
    else:
        fc = extend(f.coeffs, f.cutoff, noise.cutoff)
    return np.sum(fc * np.conj(noise.gaussians), axis=-1)


def eta_n(x, N: int) -> SpectralField:
    """Coefficients of eta_N(x) = sigma_N^{-1/2} sum conj(e_n(x)) / sqrt(1+|n|^2) e_n."""
    x = np.asarray(x, dtype=float)
    phase = x @ lattice(N).T.astype(float)
    return SpectralField(N, np.exp(-1j * phase) / np.sqrt(bracket_sq(N)) / np.sqrt(sigma_n(N)))


# ------------------------------------------------------------- transforms


def default_grid(N: int) -> int:
    """Smallest power of two >= 2N + 2."""
    g = 2
    while g < 2 * N + 2:
        g *= 2
    return g


@lru_cache(maxsize=64)
def _synthesis_matrix(N: int, G: int) -> np.ndarray:
    x = 2 * np.pi * np.arange(G) / G
    E = np.exp(1j * np.outer(np.arange(-N, N + 1), x))
    E.setflags(write=False)
    return E


def _square(coeffs: np.ndarray, N: int) -> np.ndarray:
    """Scatter ball coefficients into a dense (..., 2N+1, 2N+1) array."""
    modes = lattice(N)
    sq = np.zeros(coeffs.shape[:-1] + (2 * N + 1, 2 * N + 1), dtype=complex)
    sq[..., modes[:, 0] + N, modes[:, 1] + N] = coeffs
    return sq


def grid_values(coeffs: np.ndarray, N: int, G: int) -> np.ndarray:
    """u(x_j) on the G x G grid x_j = 2 pi j / G for coefficients over lattice(N).

    Separable synthesis: two dense products with the (2N+1) x G character
    matrix, cheaper than a padded FFT when 2N+1 is well below G.
    """
    if G < 2 * N + 1:
        raise AliasingError(f"grid {G} cannot carry modes up to |n| = {N}; need >= {2 * N + 1}")
    E = _synthesis_matrix(N, G)
    sq = _square(coeffs, N)
    t = sq @ E  # (..., n1, x2)
    # axes come back as (x2, x1); grid means do not care, to_physical swaps
    return np.swapaxes(t, -1, -2) @ E


def to_physical(f: SpectralField, G: int | None = None) -> np.ndarray:
    """Values on the uniform G x G grid, axes (x1, x2)."""
    G = default_grid(f.cutoff) if G is None else int(G)
    return np.swapaxes(grid_values(f.coeffs, f.cutoff, G), -1, -2)


def to_spectral(values: np.ndarray, N: int) -> SpectralField:
    """Discrete Fourier coefficients of grid values, restricted to |n| <= N."""
    values = np.asarray(values, dtype=complex)
    G = values.shape[-1]
    if values.shape[-2] != G:
        raise ValueError("grid must be square")
    if G < 2 * N + 1:
        raise AliasingError(f"grid {G} aliases modes up to |n| = {N}; need >= {2 * N + 1}")
    hat = np.fft.fft2(values, axes=(-2, -1)) / (G * G)
    modes = lattice(N)
    return SpectralField(N, hat[..., modes[:, 0] % G, modes[:, 1] % G])


def grid_mean(values: np.ndarray) -> np.ndarray:
    """Normalized-measure integral of grid samples."""
    return values.mean(axis=(-2, -1))
