"""Truncated Gibbs measure dP = Z^{-1} exp(-c G_N) dmu: Nelson bounds,
self-normalized importance sampling, a pCN Metropolis chain and tail curves.

``coupling`` is the factor c in front of G_N (1 by default).  c = 0 gives the
Gaussian measure itself and is kept as a test hook.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import factorial
from typing import Callable

import numpy as np
from numpy.random import Generator, Philox
from scipy.special import logsumexp
from scipy.stats import binomtest

from . import torus
from .errors import EstimationError, RangeError
from .functionals import g_functional, g_functionals
from .torus import SpectralField
from .wickpoly import laguerre_coefficients

CHUNK = 1024
# relative distance to the Nelson bound below which screened samples are
# recomputed in double precision; single-precision error is ~1e-5 of the bound
SCREEN_MARGIN = 1e-3


# ---------------------------------------------------------------- Nelson


def nelson_constant(m: int) -> float:
    """a_m = -min_{t >= 0} (-1)^m L_m(t).

    Critical points are the real nonnegative roots of the derivative
    polynomial; the endpoint t = 0 is added.  (-1)^m L_m grows like
    t^m / m! so the minimum is attained.
    """
    m = int(m)
    if m < 1:
        raise RangeError("m must be >= 1")
    p = (-1) ** m * laguerre_coefficients(m)
    r = p.deriv().roots() if m > 1 else np.array([])
    r = r[np.abs(np.imag(r)) < 1e-9].real
    cand = np.concatenate([[0.0], r[r >= 0]])
    return float(-np.min(p(cand)))


@dataclass(frozen=True)
class NelsonBound:
    order: int
    a_m: float

    @classmethod
    def for_order(cls, m: int) -> "NelsonBound":
        return cls(int(m), nelson_constant(m))

    def bound_value(self, N: int) -> float:
        """(m!/(2m)) a_m sigma_N^m, an upper bound for -G_N(u) for every u."""
        m = self.order
        return factorial(m) / (2 * m) * self.a_m * torus.sigma_n(N) ** m


def nelson_scan(orders, N: int, n_samples: int, seed: int, chunk: int = CHUNK, screen: bool = True) -> dict:
    """Check -G_N <= bound on n_samples GFF draws.

    Returns per order: violations, max of -G_N, bound.  Samples are drawn in
    chunks so memory stays bounded.  With ``screen`` the energies are first
    computed in single precision; every sample within SCREEN_MARGIN of the
    bound, and the top few of each chunk, are recomputed in double precision,
    so violation counts and the reported maximum are double-precision values.
    """
    bounds = {m: NelsonBound.for_order(m).bound_value(N) for m in orders}
    a_m = {m: nelson_constant(m) for m in orders}
    worst = {m: -np.inf for m in orders}
    viol = {m: 0 for m in orders}
    for start in range(0, n_samples, chunk):
        n = min(chunk, n_samples - start)
        f = torus.sample_gff(seed, N, n, start=start)
        g = g_functionals(f, N, orders, single=screen)
        for m in orders:
            neg = -np.atleast_1d(g[m])
            if screen:
                near = neg > (1 - SCREEN_MARGIN) * bounds[m]
                near[np.argsort(neg)[-4:]] = True
                idx = np.nonzero(near)[0]
                exact = -np.atleast_1d(g_functionals(SpectralField(N, f.coeffs[idx]), N, (m,))[m])
                neg = neg.copy()
                neg[idx] = exact
                viol[m] += int(np.sum(exact > bounds[m]))
                worst[m] = max(worst[m], float(exact.max()))
            else:
                viol[m] += int(np.sum(neg > bounds[m]))
                worst[m] = max(worst[m], float(neg.max()))
    return {m: {"violations": viol[m], "max_neg_g": worst[m], "bound": bounds[m], "a_m": a_m[m]} for m in orders}


# --------------------------------------------------------------- weights


def log_weight(f: SpectralField, N: int, m: int, coupling: float = 1.0):
    return -coupling * g_functional(f, N, m)


def density_weight(f: SpectralField, N: int, m: int, coupling: float = 1.0):
    """R_N(u) = exp(-G_N(u)) (to the power ``coupling``)."""
    return np.exp(log_weight(f, N, m, coupling))


def normalized_weights(log_w: np.ndarray) -> np.ndarray:
    log_w = np.asarray(log_w, dtype=float)
    if log_w.size == 0 or not np.any(np.isfinite(log_w)):
        raise EstimationError("degenerate weights: no finite log-weight")
    return np.exp(log_w - logsumexp(log_w))


def effective_sample_size(log_w) -> float:
    w = normalized_weights(log_w)
    return float(1.0 / np.sum(w**2))


def weighted_mean_stderr(values, log_w):
    """Self-normalized mean and delta-method stderr; values (n,) or (n, k)."""
    w = normalized_weights(log_w)
    x = np.asarray(values, dtype=float)
    wv = w if x.ndim == 1 else w[:, None]
    mean = np.sum(wv * x, axis=0)
    se = np.sqrt(np.sum(wv**2 * (x - mean) ** 2, axis=0))
    return mean, se


def batch_means_stderr(x, n_batches: int | None = None):
    """Stderr of a correlated chain average by non-overlapping batch means."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    b = n_batches or max(2, int(np.sqrt(n)))
    size = n // b
    if size < 1:
        raise EstimationError("chain too short for batch means")
    means = x[: b * size].reshape((b, size) + x.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(b)


# ----------------------------------------------------------- SampleBatch


@dataclass
class SampleBatch:
    """Fields with log-weights (importance mode) or unit weights (chain mode).

    ``observables`` maps a name to one value per sample.
    """

    seed: int
    m: int
    N: int
    mode: str
    fields: SpectralField
    log_weights: np.ndarray
    observables: dict = field(default_factory=dict)
    acceptance: float | None = None
    coupling: float = 1.0

    def __post_init__(self):
        self.log_weights = np.asarray(self.log_weights, dtype=float)

    @property
    def n(self) -> int:
        return len(self.log_weights)

    @property
    def weights(self) -> np.ndarray:
        return normalized_weights(self.log_weights)

    @property
    def ess(self) -> float:
        if self.mode == "pcn":
            return float(self.n)
        return effective_sample_size(self.log_weights)

    def add(self, name: str, fn: Callable[[SpectralField], np.ndarray]):
        self.observables[name] = np.asarray(fn(self.fields), dtype=float).reshape(self.n)
        return self

    def estimate(self, name: str):
        x = self.observables[name]
        if self.mode == "pcn":
            return float(np.mean(x)), float(batch_means_stderr(x))
        mean, se = weighted_mean_stderr(x, self.log_weights)
        return float(mean), float(se)

    def summary(self) -> dict:
        return {k: self.estimate(k) for k in self.observables}

    def report(self, nelson_violations: int = 0) -> dict:
        obs = [{"name": k, "mean": mu, "stderr": se} for k, (mu, se) in self.summary().items()]
        out = {
            "m": self.m,
            "N": self.N,
            "sampler": self.mode,
            "n": self.n,
            "ess": self.ess,
            "observables": obs,
            "nelson_violations": nelson_violations,
        }
        if self.acceptance is not None:
            out["acceptance"] = self.acceptance
        return out

    def to_json(self, **extra) -> str:
        d = self.report()
        d.update(extra)
        return json.dumps(d, sort_keys=True, indent=2)


def default_observables(N: int, m: int, modes=((0, 0), (1, 0), (1, 1))) -> dict:
    obs = {}
    for n in modes:
        if n[0] ** 2 + n[1] ** 2 <= N * N:
            i = torus.mode_index(N, n)
            obs[f"abs2_{n[0]}_{n[1]}"] = lambda f, i=i: np.abs(f.coeffs[..., i]) ** 2
    obs["G_N"] = lambda f: g_functional(f, N, m)
    obs["mass"] = lambda f: f.mass()
    return obs


def importance_batch(N: int, m: int, n_samples: int, seed: int, observables: dict | None = None, coupling: float = 1.0, start: int = 0) -> SampleBatch:
    """Draw from mu_N, weight by exp(-coupling G_N)."""
    if n_samples < 1:
        raise RangeError("n_samples must be positive")
    f = torus.sample_gff(seed, N, n_samples, start=start)
    g = np.atleast_1d(g_functional(f, N, m))
    b = SampleBatch(seed, m, N, "importance", f, -coupling * g, coupling=coupling)
    b.observables["G_N"] = g
    for name, fn in (observables or {}).items():
        if name not in b.observables:
            b.add(name, fn)
    return b


def importance_estimate(observable: Callable, N: int, m: int, n_samples: int, seed: int, coupling: float = 1.0):
    """Self-normalized importance estimate of E_P[O]: (mean, stderr, ess)."""
    if n_samples < 100:
        raise RangeError("n_samples must be >= 100")
    b = importance_batch(N, m, n_samples, seed, coupling=coupling)
    b.add("obs", observable)
    mean, se = b.estimate("obs")
    return mean, se, b.ess


# ------------------------------------------------------------------- pCN


def pcn_chain(N: int, m: int, steps: int, beta: float, seed: int, coupling: float = 1.0, burn_in: float = 0.1, observables: dict | None = None, thin: int = 1) -> SampleBatch:
    """Preconditioned Crank-Nicolson chain targeting exp(-coupling G_N) dmu_N.

    Proposal sqrt(1-beta^2) u + beta xi, xi ~ mu_N; accept with probability
    min(1, exp(coupling (G(u) - G(u')))).  GFF stream ``seed`` supplies the
    initial state (index 0) and proposals; acceptance uniforms come from a
    separate Philox key.  Every ``thin``-th state after burn-in is kept.
    """
    if not 0 < beta <= 1:
        raise RangeError("beta must lie in (0, 1]")
    if steps < 10:
        raise RangeError("steps must be >= 10")
    xi = torus.sample_gff(seed, N, steps + 1).coeffs
    unif = Generator(Philox(key=[int(seed) & 0xFFFFFFFFFFFFFFFF, 1])).random(steps)
    rho = np.sqrt(1.0 - beta**2)
    cur = xi[0].copy()
    g_cur = g_functional(SpectralField(N, cur), N, m)
    states = np.empty((steps, cur.size), dtype=complex)
    gs = np.empty(steps)
    accepted = 0
    for k in range(steps):
        prop = rho * cur + beta * xi[k + 1]
        g_prop = g_functional(SpectralField(N, prop), N, m)
        if np.log(unif[k]) < coupling * (g_cur - g_prop):
            cur, g_cur = prop, g_prop
            accepted += 1
        states[k] = cur
        gs[k] = g_cur
    keep = slice(int(burn_in * steps), steps, thin)
    f = SpectralField(N, states[keep])
    b = SampleBatch(seed, m, N, "pcn", f, np.zeros(len(gs[keep])), acceptance=accepted / steps, coupling=coupling)
    b.observables["G_N"] = gs[keep]
    for name, fn in (observables or {}).items():
        if name not in b.observables:
            b.add(name, fn)
    return b


def pcn_ensemble(N: int, m: int, n_chains: int, steps: int, beta: float, seed: int, coupling: float = 1.0, observables: dict | None = None) -> SampleBatch:
    """n_chains independent pCN chains advanced in lockstep; the final states
    are returned as unit-weight samples (one per chain).

    Chain j starts from GFF draw j of stream ``seed``.  Step k draws all
    proposal noise from its own Philox counter block.
    """
    if not 0 < beta <= 1:
        raise RangeError("beta must lie in (0, 1]")
    K = len(torus.lattice(N))
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, 3]
    scale = np.sqrt(0.5 / torus.bracket_sq(N))[torus._shell_order(N)]
    cur = torus.sample_gff(seed, N, n_chains).coeffs
    g_cur = np.atleast_1d(g_functional(SpectralField(N, cur), N, m))
    rho = np.sqrt(1.0 - beta**2)
    accepted = 0
    order = torus._shell_order(N)
    for k in range(steps):
        gen = Generator(Philox(key=key, counter=[0, 0, 0, k]))
        z = gen.standard_normal((n_chains, 2 * K))
        xi = np.empty((n_chains, K), dtype=complex)
        xi[:, order] = (z[:, 0::2] + 1j * z[:, 1::2]) * scale
        prop = rho * cur + beta * xi
        g_prop = np.atleast_1d(g_functional(SpectralField(N, prop), N, m))
        acc = np.log(gen.random(n_chains)) < coupling * (g_cur - g_prop)
        cur[acc] = prop[acc]
        g_cur[acc] = g_prop[acc]
        accepted += int(acc.sum())
    f = SpectralField(N, cur)
    b = SampleBatch(seed, m, N, "pcn-ensemble", f, np.zeros(n_chains), acceptance=accepted / max(1, steps * n_chains), coupling=coupling)
    b.observables["G_N"] = g_cur
    for name, fn in (observables or {}).items():
        if name not in b.observables:
            b.add(name, fn)
    return b


def pool_chains(batches) -> SampleBatch:
    """Concatenate chains in seed order (stderr then treats them as one run)."""
    batches = sorted(batches, key=lambda b: b.seed)
    first = batches[0]
    f = SpectralField(first.N, np.concatenate([b.fields.coeffs for b in batches]))
    obs = {k: np.concatenate([b.observables[k] for b in batches]) for k in first.observables}
    acc = float(np.mean([b.acceptance for b in batches]))
    return SampleBatch(first.seed, first.m, first.N, "pcn", f, np.zeros(f.coeffs.shape[0]), obs, acc, first.coupling)


# ------------------------------------------------------------------ tails


@dataclass
class TailCurve:
    lambdas: np.ndarray
    prob: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n: int

    def rows(self):
        return list(zip(self.lambdas, self.prob, self.lower, self.upper))


def survival_curve(values, lambdas, confidence: float = 0.95) -> TailCurve:
    """Empirical P(X > lambda) with Wilson score intervals."""
    x = np.sort(np.asarray(values, dtype=float))
    lam = np.asarray(lambdas, dtype=float)
    n = len(x)
    counts = n - np.searchsorted(x, lam, side="right")
    lo, hi = [], []
    for k in counts:
        ci = binomtest(int(k), n).proportion_ci(confidence, method="wilson")
        lo.append(ci.low)
        hi.append(ci.high)
    return TailCurve(lam, counts / n, np.array(lo), np.array(hi), n)


def tail_curve(m: int, N: int, M: int, n_samples: int, seed: int = 0, lambdas=None, n_points: int = 25) -> TailCurve:
    """lambda -> P(|G_M - G_N| > lambda) under mu."""
    if M < N:
        raise RangeError("need M >= N")
    f = torus.sample_gff(seed, M, n_samples)
    d = np.abs(np.atleast_1d(g_functional(f, M, m) - g_functional(f, N, m)))
    if lambdas is None:
        lambdas = np.linspace(0.0, np.quantile(d, 0.999), n_points)
    return survival_curve(d, lambdas)


def lp_norm_weight(N: int, m: int, p: float, n_samples: int, seed: int) -> tuple[float, float]:
    """(E R_N^p)^{1/p} under mu, with a delta-method stderr."""
    f = torus.sample_gff(seed, N, n_samples)
    lw = p * np.atleast_1d(log_weight(f, N, m))
    lmean = logsumexp(lw) - np.log(n_samples)
    w = np.exp(lw - lmean)
    rel = w.std(ddof=1) / np.sqrt(n_samples)
    val = np.exp(lmean / p)
    return float(val), float(val * rel / p)
