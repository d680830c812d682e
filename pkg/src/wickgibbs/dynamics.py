"""Truncated Wick-ordered NLS on T^2:

    i d/dt u + Delta u + V u = P_N(:|P_N u|^{2(m-1)} P_N u:)

Low modes |n| <= N are integrated in the rotating frame w = e^{i|n|^2 t} u(n)
so the linear part is exact; modes |n| > N only rotate.  V is an optional
constant potential (0 by default) used for gauge checks.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from functools import lru_cache, partial
from math import factorial

import numpy as np
from numpy.random import Generator, Philox
from scipy.integrate import solve_ivp

from . import torus
from .errors import RangeError, StiffnessError
from .functionals import g_functional
from .gibbs import importance_batch, normalized_weights, pcn_ensemble, weighted_mean_stderr
from .torus import SpectralField
from .wickpoly import laguerre_coefficients


@dataclass(frozen=True)
class IntegratorConfig:
    # Dormand-Prince 8(5,3) in the rotating frame; "RK45" is also accepted.
    # The 5(4) pair at 1e-10/1e-9 drifts past 1e-8 in mass for m = 3.
    method: str = "DOP853"
    abs_tol: float = 1e-12
    rel_tol: float = 1e-11
    max_step: float = np.inf

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise RangeError("tolerances must be positive")


def mass_low(f: SpectralField, N: int):
    """sum_{|n|<=N} |u(n)|^2."""
    c = torus.restrict(f.coeffs, f.cutoff, N)
    return np.sum(np.abs(c) ** 2, axis=-1)


def hamiltonian_wick(f: SpectralField, N: int, m: int):
    """(1/2) sum_{|n|<=N} |n|^2 |u(n)|^2 + G_N(u)."""
    c = torus.restrict(f.coeffs, f.cutoff, N)
    kin = 0.5 * np.sum(torus.norm_sq(N) * np.abs(c) ** 2, axis=-1)
    return kin + g_functional(f, N, m)


class WickRHS:
    """F_N on coefficient rows via separable synthesis/analysis matrices.

    The grid has at least 2mN + 1 points per axis, so the coefficients of
    the degree-(2m-1)N product are read on |n| <= N without aliasing.
    """

    def __init__(self, N: int, m: int):
        self.N, self.m = N, m
        # plain matrix products, so the smallest alias-free grid is best
        G = 2 * m * N + 1
        self.E = torus._synthesis_matrix(N, G)
        self.A = np.conj(self.E).T / G
        modes = torus.lattice(N)
        self.i1, self.i2 = modes[:, 0] + N, modes[:, 1] + N
        sigma = torus.sigma_n(N)
        # :|u|^{2(m-1)} u: = u * sum_l p_l |u|^{2l}
        lag = laguerre_coefficients(m - 1, 1).coef
        scale = (-1) ** (m + 1) * factorial(m - 1) * sigma ** (m - 1)
        self.poly = [scale * lag[l] / sigma**l for l in range(m)]
        # the u-linear part p_0 u is a constant potential (sigma_N is flat on T^2)
        self.linear = self.poly[0]

    def __call__(self, c: np.ndarray, linear: bool = True) -> np.ndarray:
        N = self.N
        poly = self.poly if linear else [0.0] + self.poly[1:]
        sq = np.zeros(c.shape[:-1] + (2 * N + 1, 2 * N + 1), dtype=complex)
        sq[..., self.i1, self.i2] = c
        u = np.swapaxes(sq @ self.E, -1, -2) @ self.E  # (x2, x1)
        a = u.real * u.real + u.imag * u.imag
        p = poly[-1]
        for coef in poly[-2::-1]:
            p = p * a + coef
        w = u * p
        hat = np.swapaxes(w @ self.A, -1, -2) @ self.A  # (n1, n2)
        return hat[..., self.i1, self.i2]


@lru_cache(maxsize=32)
def _rhs(N: int, m: int) -> WickRHS:
    return WickRHS(N, m)


def nonlinearity(c: np.ndarray, N: int, m: int) -> np.ndarray:
    """F_N coefficients for coefficient rows c (..., K) on lattice(N)."""
    return _rhs(N, m)(c)


@dataclass
class Trajectory:
    times: np.ndarray
    states: SpectralField  # coeffs (T, ..., K)
    N: int
    m: int
    mass: np.ndarray = field(default=None)
    hamiltonian: np.ndarray = field(default=None)
    monitor_modes: tuple = ()
    mode_abs: dict = field(default_factory=dict)

    def state(self, k: int) -> SpectralField:
        return SpectralField(self.states.cutoff, self.states.coeffs[k])

    @property
    def final(self) -> SpectralField:
        return self.state(-1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = [f"abs_u_{a}_{b}" for a, b in self.monitor_modes]
        w.writerow(["t", "mass_low", "hamiltonian"] + names)
        mass = np.asarray(self.mass)
        ham = np.asarray(self.hamiltonian)
        for k, t in enumerate(self.times):
            row = [t, mass[k], ham[k]] + [self.mode_abs[n][k] for n in self.monitor_modes]
            w.writerow([repr(float(np.ravel(x)[0])) for x in row])
        return buf.getvalue()


def integrate_rotating(w0: np.ndarray, lam: np.ndarray, nonlin, times: np.ndarray, cfg: IntegratorConfig) -> np.ndarray:
    """Solve i d/dt c = lam c + nonlin(c) for rows c of w0 (B, K) in the
    rotating frame w = e^{i lam t} c.  Returns c at ``times``: (T, B, K)."""
    B, K = w0.shape

    def rhs(t, y):
        ph = np.exp(-1j * lam * t)
        u = y.reshape(B, K) * ph
        return (-1j * nonlin(u) * ph.conj()).ravel()

    t_end = float(times[-1])
    if t_end == 0.0 or not np.any(w0):
        w = np.broadcast_to(w0, (len(times), B, K)).copy()
    else:
        sol = solve_ivp(
            rhs,
            (0.0, t_end),
            w0.ravel().astype(complex),
            method=cfg.method,
            t_eval=times,
            rtol=cfg.rel_tol,
            atol=cfg.abs_tol,
            max_step=cfg.max_step,
        )
        if sol.status != 0:
            raise StiffnessError(f"integrator stopped at t={sol.t[-1] if sol.t.size else 0.0}: {sol.message}")
        w = sol.y.T.reshape(len(times), B, K)
    return w * np.exp(-1j * lam[None, None, :] * times[:, None, None])


def evolve(
    f: SpectralField,
    N: int,
    m: int,
    t_final: float,
    config: IntegratorConfig | None = None,
    times=None,
    potential: float = 0.0,
    monitor_modes=(),
    chunk: int = 1000,
) -> Trajectory:
    """Evolve the truncated flow from f (single field or batch) to t_final.

    ``times`` are output times between 0 and t_final (default 11 evenly
    spaced).  A batch is integrated as one stacked system per chunk.
    """
    cfg = config or IntegratorConfig()
    if N > f.cutoff:
        raise RangeError(f"N={N} exceeds field cutoff {f.cutoff}")
    times = np.linspace(0.0, t_final, 11) if times is None else np.asarray(times, dtype=float)
    if times[0] != 0.0:
        times = np.concatenate([[0.0], times])
    steps = np.diff(times)
    if not (np.all(steps > 0) or np.all(steps < 0)):
        raise RangeError("output times must be strictly monotone from 0")

    coeffs = f.coeffs
    single = coeffs.ndim == 1
    flat = coeffs.reshape(-1, coeffs.shape[-1])
    low = torus._ball_mask(N, f.cutoff)
    out = np.empty((len(times),) + flat.shape, dtype=complex)
    # constant potentials are pure phases, so they join the Laplacian: the
    # external one and the linear part of the Wick nonlinearity on |n| <= N
    rhs = _rhs(N, m)
    lam = torus.norm_sq(N).astype(float) - potential + rhs.linear
    nonlin = partial(rhs, linear=False)
    for i in range(0, len(flat), chunk):
        out[:, i : i + chunk, low] = integrate_rotating(flat[i : i + chunk, low], lam, nonlin, times, cfg)
    # high modes: exact phase rotation
    hi = ~low
    if np.any(hi):
        lam_hi = torus.norm_sq(f.cutoff)[hi].astype(float) - potential
        out[:, :, hi] = flat[None, :, hi] * np.exp(-1j * lam_hi[None, None, :] * times[:, None, None])
    out = out[:, 0] if single else out.reshape((len(times),) + coeffs.shape)
    states = SpectralField(f.cutoff, out)
    traj = Trajectory(times, states, N, m, monitor_modes=tuple(tuple(n) for n in monitor_modes))
    traj.mass = mass_low(states, N)
    traj.hamiltonian = hamiltonian_wick(states, N, m)
    for n in traj.monitor_modes:
        traj.mode_abs[n] = np.abs(out[..., torus.mode_index(f.cutoff, n)])
    return traj


# ---------------------------------------------------- invariance experiment


def weighted_ks(x, y, w) -> float:
    """sup |F_x - F_y| for weighted ECDFs sharing one weight vector."""
    return float(_ks_stats(np.asarray(x, float), np.asarray(y, float), normalized_weights(np.log(w)), None)[0])


def _ks_stats(x, y, w, flips):
    """KS distances for the observed labelling and for each row of ``flips``
    (True swaps the pre/post labels of that sample)."""
    n = len(x)
    vals = np.concatenate([x, y])
    order = np.argsort(vals, kind="stable")
    owner = np.concatenate([np.arange(n), np.arange(n)])[order]
    base = np.concatenate([w, -w])[order]
    # collapse ties so the ECDF is only compared between distinct values
    last = np.append(vals[order][1:] != vals[order][:-1], True)
    stats = [np.max(np.abs(np.cumsum(base)[last]))]
    if flips is not None:
        for rows in np.array_split(flips, max(1, len(flips) // 50)):
            sign = np.where(rows[:, owner], -1.0, 1.0)
            c = np.cumsum(base[None, :] * sign, axis=1)[:, last]
            stats.extend(np.max(np.abs(c), axis=1))
    return np.array(stats)


def ks_permutation_test(x, y, log_w, n_perm: int = 1000, seed: int = 0):
    """Weighted two-sample KS for paired samples (x_i, y_i) with common weights.

    Null distribution by random within-pair label swaps, which is exact when
    (x_i, y_i) is exchangeable, e.g. a reversible stationary flow.
    Returns (distance, p_value).
    """
    w = normalized_weights(log_w)
    rng = Generator(Philox(key=[int(seed) & 0xFFFFFFFFFFFFFFFF, 2]))
    flips = rng.random((n_perm, len(w))) < 0.5
    stats = _ks_stats(np.asarray(x, float), np.asarray(y, float), w, flips)
    d, null = stats[0], stats[1:]
    # small tolerance so float noise in cumsums does not count as exceedance
    p = (1 + np.sum(null >= d - 1e-12)) / (1 + n_perm)
    return float(d), float(p)


def _observable_table(f: SpectralField, N: int, m: int, modes) -> dict:
    out = {}
    for n in modes:
        if n[0] ** 2 + n[1] ** 2 > N * N:
            continue
        out[f"abs2_{n[0]}_{n[1]}"] = np.abs(f.coeffs[..., torus.mode_index(f.cutoff, n)]) ** 2
    out["G_N"] = np.atleast_1d(g_functional(f, N, m))
    out["mass"] = np.atleast_1d(mass_low(f, N))
    return out


def invariance_experiment(
    N: int,
    m: int,
    t_final: float,
    n_samples: int,
    seed: int,
    modes=((0, 0), (1, 0), (1, 1)),
    coupling: float = 2.0,
    n_perm: int = 1000,
    config: IntegratorConfig | None = None,
    sampler: str = "pcn-ensemble",
    burn_in: int = 3000,
    beta: float = 0.2,
) -> dict:
    """Samples of the Gibbs measure exp(-c G_N) dmu, evolved to t_final.

    ``sampler`` is "pcn-ensemble" (independent chains, unit weights) or
    "importance" (draws from mu weighted by exp(-c G_N)).  Pre and post
    weighted means use the same weights.  ``joint_stderr`` is
    sqrt(se_pre^2 + se_post^2); ``paired_stderr`` is the stderr of the
    per-sample difference.

    With unit-variance Gaussians the flow conserves mass and
    sum |n|^2 |u|^2 + 2 G_N, so c = 2 is the exactly invariant coupling.
    """
    if n_samples < 1000:
        raise RangeError("n_samples must be >= 1000")
    if sampler == "importance":
        batch = importance_batch(N, m, n_samples, seed, coupling=coupling)
    elif sampler == "pcn-ensemble":
        batch = pcn_ensemble(N, m, n_samples, burn_in, beta, seed, coupling=coupling)
    else:
        raise RangeError(f"unknown sampler {sampler!r}")
    traj = evolve(batch.fields, N, m, t_final, config, times=[0.0, t_final] if t_final != 0 else [0.0])
    pre = _observable_table(traj.state(0), N, m, modes)
    post = _observable_table(traj.final, N, m, modes)
    lw = batch.log_weights
    rows = []
    for name in pre:
        mu0, se0 = weighted_mean_stderr(pre[name], lw)
        mu1, se1 = weighted_mean_stderr(post[name], lw)
        _, sed = weighted_mean_stderr(post[name] - pre[name], lw)
        d, p = ks_permutation_test(pre[name], post[name], lw, n_perm, seed)
        joint = float(np.hypot(se0, se1))
        rows.append(
            {
                "name": name,
                "pre_mean": float(mu0),
                "pre_stderr": float(se0),
                "post_mean": float(mu1),
                "post_stderr": float(se1),
                "joint_stderr": joint,
                "paired_stderr": float(sed),
                "z": float(abs(mu1 - mu0) / joint) if joint > 0 else 0.0,
                "ks_distance": d,
                "p_value": p,
            }
        )
    return {
        "m": m,
        "N": N,
        "t": t_final,
        "sampler": sampler,
        "coupling": coupling,
        "n": n_samples,
        "ess": batch.ess,
        "observables": rows,
        "nelson_violations": 0,
        "max_mass_drift": float(np.max(np.abs(traj.mass[-1] - traj.mass[0]) / traj.mass[0])),
        "max_hamiltonian_drift": float(np.max(np.abs(traj.hamiltonian[-1] - traj.hamiltonian[0]) / np.abs(traj.hamiltonian[0]))),
    }


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2)
