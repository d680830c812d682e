"""Command line experiment runner.

    wickgibbs <subcommand> [flags] [--config FILE] [--output PATH] [--format csv|json]

Exit codes: 0 success, 1 runtime error, 2 validation error.  The artifact
goes to --output (stdout when omitted); a one-line summary is printed last
(to stderr when the artifact itself went to stdout).
"""
from __future__ import annotations

import argparse
import json
import sys
from contextlib import nullcontext
from math import factorial

import numpy as np
import scipy.fft

from . import domain, dynamics, functionals, gibbs, torus, wickpoly
from .errors import AliasingError, DomainError, RangeError, WickGibbsError

SCHEMAS = {
    "wick-identities": "JSON {orders: [{m, max_rel_error}], expansions_match, points}; CSV m,max_rel_error",
    "gff-stats": "JSON {N, n, modes: [{n1, n2, mean_abs2, expected, stderr}], pointwise_variance, sigma_N}",
    "g-convergence": "CSV N,M,exact_distance,mc_estimate,stderr then '# slope_exact=..,slope_mc=..'",
    "f-convergence": "CSV N,M,exact_hs_distance,mc_estimate,stderr then '# slope_exact=..'",
    "gibbs-sample": "JSON {m, N, sampler, n, ess, observables: [{name, mean, stderr}], nelson_violations}",
    "tail-curve": "CSV lambda,prob,wilson_low,wilson_high",
    "evolve": "CSV t,mass_low,hamiltonian,abs_u_<n1>_<n2>...",
    "invariance": "JSON gibbs schema plus per-observable pre/post means, ks_distance, p_value",
    "domain-covariance": "CSV N,weyl_count,weyl_ratio,max_sigma_over_logN,gamma_lp_distance,g_l2_distance_exact; JSON adds basis",
    "appendix-check": "JSON {N, n, max_relative_residual: {identity: value}, regrouping_defect_max}",
}


class ValidationError(Exception):
    pass


def _ints(text: str):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _modes(text: str):
    out = []
    for part in str(text).split(";"):
        if part.strip():
            a, b = part.split(",")
            out.append((int(a), int(b)))
    return out


def _common(p: argparse.ArgumentParser, seed_required: bool = True):
    p.add_argument("--seed", type=int, required=False, default=None, help="RNG seed (mandatory)" if seed_required else "unused")
    p.add_argument("--output", default=None, help="artifact path (default stdout)")
    p.add_argument("--format", choices=["csv", "json"], default=None)
    p.add_argument("--config", default=None, help="key=value file; flags override")
    p.add_argument("--threads", type=int, default=None, help="cap on FFT workers")
    p.set_defaults(_seed_required=seed_required)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wickgibbs", description="Wick-ordered Gibbs measures and truncated NLS experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help_, seed=True):
        p = sub.add_parser(name, help=help_, description=f"{help_}\n\nOutput: {SCHEMAS[name]}", formatter_class=argparse.RawDescriptionHelpFormatter)
        _common(p, seed)
        return p

    p = add("wick-identities", "Hermite split vs Laguerre form of :|z|^{2m}:")
    p.add_argument("--m", type=int, default=3, help="largest order checked")
    p.add_argument("--samples", type=int, default=10000, help="random evaluation points")

    p = add("gff-stats", "Empirical GFF second moments")
    p.add_argument("--N", type=int, default=8)
    p.add_argument("--samples", type=int, default=10000)

    p = add("g-convergence", "Exact and Monte Carlo ||G_M - G_N||, M = 2N")
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--n-list", type=_ints, default=[4, 8, 16, 32])
    p.add_argument("--samples", type=int, default=1000)

    p = add("f-convergence", "Exact and Monte Carlo H^s distance of F_M - F_N, M = 2N")
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--n-list", type=_ints, default=[4, 8, 16])
    p.add_argument("--s", type=float, default=-0.5)
    p.add_argument("--samples", type=int, default=200)

    p = add("gibbs-sample", "Sample the truncated Gibbs measure")
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--N", type=int, default=2)
    p.add_argument("--samples", type=int, default=10000, help="samples (importance, ensemble) or steps (pcn)")
    p.add_argument("--sampler", choices=["importance", "pcn", "pcn-ensemble"], default="importance")
    p.add_argument("--beta", type=float, default=0.3)
    p.add_argument("--burn-in", type=int, default=2000, help="ensemble steps")
    p.add_argument("--coupling", type=float, default=1.0)

    p = add("tail-curve", "Empirical survival function of |G_M - G_N|")
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--N", type=int, default=4)
    p.add_argument("--M", type=int, default=8)
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--points", type=int, default=25)

    p = add("evolve", "Truncated Wick NLS from a GFF sample")
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--N", type=int, default=4)
    p.add_argument("--cutoff", type=int, default=None, help="field cutoff (>= N; high modes rotate)")
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=10, help="output intervals")
    p.add_argument("--modes", type=_modes, default=[(0, 0), (1, 0)], help="monitored modes 'a,b;c,d'")
    p.add_argument("--abs-tol", type=float, default=1e-12)
    p.add_argument("--rel-tol", type=float, default=1e-11)

    p = add("invariance", "Gibbs invariance experiment")
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--N", type=int, default=3)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--sampler", choices=["importance", "pcn-ensemble"], default="pcn-ensemble")
    p.add_argument("--burn-in", type=int, default=3000)
    p.add_argument("--beta", type=float, default=0.2)
    p.add_argument("--coupling", type=float, default=2.0)
    p.add_argument("--perms", type=int, default=1000)

    p = add("domain-covariance", "Dirichlet square: Weyl counts, sigma_N, gamma and G distances", seed=False)
    p.add_argument("--n-list", type=_ints, default=[4, 8, 16])
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--s", type=float, default=2.0)
    p.add_argument("--p", type=float, default=2.0)

    p = add("appendix-check", "Fourier-side identities for m = 3")
    p.add_argument("--N", type=int, default=2)
    p.add_argument("--samples", type=int, default=100)
    return ap


def _read_config(path: str) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"config line without '=': {line!r}")
            k, v = line.split("=", 1)
            out[k.strip().replace("-", "_")] = v.strip()
    return out


def parse(argv) -> argparse.Namespace:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.config:
        cfg = _read_config(args.config)
        # re-parse with file values as defaults so explicit flags still win
        sub = ap._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        defaults = {}
        for k, v in cfg.items():
            if k not in known or k in ("config", "help"):
                raise ValidationError(f"unknown config key {k!r}")
            act = known[k]
            defaults[k] = act.type(v) if act.type else v
        sub.set_defaults(**defaults)
        args = ap.parse_args(argv)
    if args._seed_required and args.seed is None:
        raise ValidationError("--seed is required (no wall-clock seeding)")
    return args


# ---------------------------------------------------------------- runners


def _csv(header, rows, trailer=None) -> str:
    return functionals.rows_to_csv(rows, header) + (trailer + "\n" if trailer else "")


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def run_wick_identities(a):
    rng = np.random.Generator(np.random.Philox(key=[a.seed, 5]))
    z = (rng.standard_normal(a.samples) + 1j * rng.standard_normal(a.samples)) * rng.uniform(0.1, 3.0, a.samples)
    sig = rng.uniform(0.2, 5.0, a.samples)
    orders = []
    for m in range(1, a.m + 1):
        ctx = wickpoly.WickContext(m, sig)
        x, y = wickpoly.wick_abs_power(z, ctx), wickpoly.wick_hermite_split(z, ctx)
        err = float(np.max(np.abs(x - y) / np.maximum(1.0, np.abs(x))))
        orders.append({"m": m, "max_rel_error": err})
    # displayed expansions with sigma = 1: |g|^2 - 1, |g|^4 - 4|g|^2 + 2, |g|^6 - 9|g|^4 + 18|g|^2 - 6
    shown = {1: [-1, 1], 2: [2, -4, 1], 3: [-6, 18, -9, 1]}
    match = all(
        np.allclose((-1) ** m * factorial(m) * wickpoly.laguerre_coefficients(m).coef, c, rtol=0, atol=1e-12)
        for m, c in shown.items()
    )
    worst = max(o["max_rel_error"] for o in orders)
    if a.format == "csv":
        art = _csv(["m", "max_rel_error"], [(o["m"], o["max_rel_error"]) for o in orders])
    else:
        art = _json({"orders": orders, "expansions_match": bool(match), "points": a.samples})
    return art, f"wick-identities: max relative error {worst:.3e}, displayed expansions {'match' if match else 'DIFFER'}", worst <= 1e-11 and match


def run_gff_stats(a):
    f = torus.sample_gff(a.seed, a.N, a.samples)
    a2 = np.abs(f.coeffs) ** 2
    rows = []
    for n in [(0, 0), (1, 0), (1, 1), (0, a.N)]:
        i = torus.mode_index(a.N, n)
        rows.append({"n1": n[0], "n2": n[1], "mean_abs2": float(a2[:, i].mean()), "expected": 1.0 / (1 + n[0] ** 2 + n[1] ** 2), "stderr": float(a2[:, i].std(ddof=1) / np.sqrt(a.samples))})
    u0 = f.coeffs.sum(axis=-1)  # u at x = 0
    pv = float(np.mean(np.abs(u0) ** 2))
    out = {"N": a.N, "n": a.samples, "modes": rows, "pointwise_variance": pv, "sigma_N": torus.sigma_n(a.N)}
    if a.format == "csv":
        art = _csv(["n1", "n2", "mean_abs2", "expected", "stderr"], [(r["n1"], r["n2"], r["mean_abs2"], r["expected"], r["stderr"]) for r in rows])
    else:
        art = _json(out)
    return art, f"gff-stats: pointwise variance {pv:.4f} vs sigma_N {torus.sigma_n(a.N):.4f}", True


def run_g_convergence(a):
    rows = functionals.convergence_rows(a.m, a.n_list, a.samples, a.seed)
    ns = [r[0] for r in rows]
    se = functionals.fit_loglog_slope(ns, [r[2] for r in rows])
    sm = functionals.fit_loglog_slope(ns, [r[3] for r in rows]) if a.samples else float("nan")
    if a.format == "json":
        art = _json({"m": a.m, "rows": [dict(zip(["N", "M", "exact_distance", "mc_estimate", "stderr"], r)) for r in rows], "slope_exact": se, "slope_mc": sm})
    else:
        art = _csv(["N", "M", "exact_distance", "mc_estimate", "stderr"], rows, f"# slope_exact={se!r},slope_mc={sm!r}")
    return art, f"g-convergence: m={a.m} fitted slope {se:.3f}", True


def run_f_convergence(a):
    rows = []
    for N in a.n_list:
        M = 2 * N
        exact = functionals.f_hs_distance_exact(a.m, N, M, a.s)
        est = se = float("nan")
        if a.samples:
            f = torus.sample_gff(a.seed, M, a.samples)
            fm = functionals.f_functional(f, M, a.m).coeffs
            fn = torus.extend(functionals.f_functional(f, N, a.m).coeffs, N, M)
            q = np.sum(torus.bracket_sq(M) ** a.s * np.abs(fm - fn) ** 2, axis=-1)
            est = float(np.sqrt(q.mean()))
            se = float(q.std(ddof=1) / np.sqrt(a.samples) / (2 * est))
        rows.append((N, M, exact, est, se))
    slope = functionals.fit_loglog_slope([r[0] for r in rows], [r[2] for r in rows])
    if a.format == "json":
        art = _json({"m": a.m, "s": a.s, "rows": [dict(zip(["N", "M", "exact_hs_distance", "mc_estimate", "stderr"], r)) for r in rows], "slope_exact": slope})
    else:
        art = _csv(["N", "M", "exact_hs_distance", "mc_estimate", "stderr"], rows, f"# slope_exact={slope!r}")
    return art, f"f-convergence: m={a.m} s={a.s} fitted slope {slope:.3f}", True


def run_gibbs_sample(a):
    obs = gibbs.default_observables(a.N, a.m)
    if a.sampler == "importance":
        b = gibbs.importance_batch(a.N, a.m, a.samples, a.seed, obs, coupling=a.coupling)
    elif a.sampler == "pcn":
        b = gibbs.pcn_chain(a.N, a.m, a.samples, a.beta, a.seed, coupling=a.coupling, observables=obs)
    else:
        b = gibbs.pcn_ensemble(a.N, a.m, a.samples, a.burn_in, a.beta, a.seed, coupling=a.coupling, observables=obs)
    bound = gibbs.NelsonBound.for_order(a.m).bound_value(a.N)
    viol = int(np.sum(-b.observables["G_N"] > bound))
    rep = b.report(nelson_violations=viol)
    art = _json(rep)
    return art, f"gibbs-sample: {a.sampler} n={b.n} ess={b.ess:.1f} nelson_violations={viol}", viol == 0


def run_tail_curve(a):
    tc = gibbs.tail_curve(a.m, a.N, a.M, a.samples, a.seed, n_points=a.points)
    if a.format == "json":
        art = _json({"m": a.m, "N": a.N, "M": a.M, "n": tc.n, "rows": [dict(zip(["lambda", "prob", "wilson_low", "wilson_high"], r)) for r in tc.rows()]})
    else:
        art = _csv(["lambda", "prob", "wilson_low", "wilson_high"], tc.rows())
    return art, f"tail-curve: {len(tc.lambdas)} points from {tc.n} samples", True


def run_evolve(a):
    cutoff = a.cutoff if a.cutoff is not None else a.N
    if cutoff < a.N:
        raise ValidationError("--cutoff must be >= --N")
    f = torus.sample_gff(a.seed, cutoff, 1).sample(0)
    cfg = dynamics.IntegratorConfig(abs_tol=a.abs_tol, rel_tol=a.rel_tol)
    tr = dynamics.evolve(f, a.N, a.m, a.t, cfg, times=np.linspace(0, a.t, a.steps + 1), monitor_modes=a.modes)
    dm = float(np.max(np.abs(tr.mass - tr.mass[0])) / tr.mass[0])
    dh = float(np.max(np.abs(tr.hamiltonian - tr.hamiltonian[0])) / abs(tr.hamiltonian[0]))
    if a.format == "json":
        art = _json({"m": a.m, "N": a.N, "t": list(map(float, tr.times)), "mass_low": list(map(float, tr.mass)), "hamiltonian": list(map(float, tr.hamiltonian))})
    else:
        art = tr.to_csv()
    return art, f"evolve: mass drift {dm:.2e}, hamiltonian drift {dh:.2e}", True


def run_invariance(a):
    rep = dynamics.invariance_experiment(a.N, a.m, a.t, a.samples, a.seed, coupling=a.coupling, n_perm=a.perms, sampler=a.sampler, burn_in=a.burn_in, beta=a.beta)
    zmax = max(o["z"] for o in rep["observables"])
    pmin = min(o["p_value"] for o in rep["observables"])
    return _json(rep), f"invariance: max |z| {zmax:.2f}, min KS p-value {pmin:.3f}", True


def run_domain_covariance(a):
    rows = []
    for N in a.n_list:
        w = domain.weyl_count(N)
        sig = domain.sigma_field(N).values.max() / np.log(N)
        gl = domain.gamma_lp_distance(a.s, a.p, N, 2 * N)
        gd = domain.g_l2_distance_exact_domain(a.m, N, 2 * N)
        rows.append((N, w, w / N**2, float(sig), gl, gd))
    header = ["N", "weyl_count", "weyl_ratio", "max_sigma_over_logN", "gamma_lp_distance", "g_l2_distance_exact"]
    if a.format == "json":
        art = _json({"basis": "dirichlet-square", "m": a.m, "s": a.s, "p": a.p, "rows": [dict(zip(header, r)) for r in rows]})
    else:
        art = _csv(header, rows)
    return art, f"domain-covariance: {len(rows)} cutoffs", True


def run_appendix_check(a):
    f = torus.sample_gff(a.seed, a.N, a.samples)
    terms = functionals.appendix_decomposition_m3(f, a.N)
    g = np.atleast_1d(functionals.g_functional(f, a.N, 3))
    res = {"(I+II+III+IV)/6 = G_N": float(np.max(np.abs(terms.combined - g) / np.maximum(1.0, np.abs(g))))}
    for name, (lhs, rhs) in terms.identities().items():
        res[name] = float(np.max(np.abs(lhs - rhs) / np.maximum(1.0, np.abs(rhs))))
    worst = max(res.values())
    defect = float(np.max(np.abs(terms.regrouping_defect())))
    art = _json({"N": a.N, "n": a.samples, "max_relative_residual": res, "regrouping_defect_max": defect})
    ok = worst <= 1e-9
    rel = "<=" if ok else ">"
    return art, f"appendix-check: max relative residual {worst:.2e} {rel} 1e-9", ok


RUNNERS = {
    "wick-identities": run_wick_identities,
    "gff-stats": run_gff_stats,
    "g-convergence": run_g_convergence,
    "f-convergence": run_f_convergence,
    "gibbs-sample": run_gibbs_sample,
    "tail-curve": run_tail_curve,
    "evolve": run_evolve,
    "invariance": run_invariance,
    "domain-covariance": run_domain_covariance,
    "appendix-check": run_appendix_check,
}


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse(argv)
    except SystemExit as e:  # argparse already printed usage
        return int(e.code) if e.code is not None else 2
    except (ValidationError, argparse.ArgumentTypeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    ctx = scipy.fft.set_workers(args.threads) if args.threads else nullcontext()
    try:
        with ctx:
            art, summary, ok = RUNNERS[args.command](args)
    except (ValidationError, RangeError, DomainError, AliasingError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (WickGibbsError, MemoryError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    if args.output:
        with open(args.output, "w", newline="") as fh:
            fh.write(art)
        print(summary)
    else:
        sys.stdout.write(art)
        print(summary, file=sys.stderr)
    return 0 if ok else 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
