"""End-to-end experiment drivers shared by the CLI and the acceptance suite.

Random streams are keyed by (seed, purpose, indices) through
numpy SeedSequence spawn keys, so every quantity is reproducible on its own
and does not depend on evaluation order or thread count. The same noise
draw r is reused across noise levels eps (common random numbers), so the
eps dependence of each run is not blurred by independent draws.
"""
from dataclasses import dataclass

import numpy as np

from . import bayes, fredholm, forward, phase_retrieval as pr, sources
from .geometry import build_geometry

STREAM_SIM, STREAM_NOISE, STREAM_INV_NOISE, STREAM_CHAIN, STREAM_PIPE, \
    STREAM_PIPE_NOISE = range(1, 7)

LABELS = (
    ("f^eps_{1,k}", "f1", "mean", 1),
    ("f^eps_{2,k}", "f2", "mean", 2),
    ("F^eps_{k,1,1}", "F11", "variance", (1, 1)),
    ("F^eps_{k,2,2}", "F22", "variance", (2, 2)),
    ("F^eps_{k,1,2}", "F12", "variance", (1, 2)),
)


def rng_for(seed, *key):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(key)))


def seed_for(seed, *key):
    return int(np.random.SeedSequence(int(seed), spawn_key=tuple(key)).generate_state(1)[0])


def make_grid(a, n):
    return forward.Grid(float(a), int(n[0]), int(n[1]))


def _field(grid, name, role):
    return forward.SourceField.from_function(grid, sources.REGISTRY[name], role)


# -- phase retrieval tables ---------------------------------------------------

@dataclass(eq=False)
class PRCase:
    k: float
    geom: object
    sim: forward.Simulator
    exact: forward.Moments
    truth: pr.RetrievedStats


def pr_setup(ec):
    grid = make_grid(ec.a, ec.sim["grid"])
    g = _field(grid, ec.sim.get("source_g", "g"), "g")
    s = _field(grid, ec.sim.get("source_sigma", "sigma"), "sigma")
    cases = []
    for k in ec.retrieval_ks():
        geom = build_geometry(ec.geometry_config(), k)
        sim = forward.Simulator(g, s, geom, ec.dt())
        ex = sim.exact()
        cases.append(PRCase(geom.k, geom, sim, ex, pr.truth_from_moments(ex, geom)))
    return cases


def pr_bundles(ec, case, ki, run, closed_loop=False, threads=1):
    """Noiseless bundle and one perturbed bundle per configured eps."""
    if closed_loop:
        mom = case.exact
    else:
        mom = case.sim.run(int(ec.sim["n_mc"]), ec.seed, (STREAM_SIM, ki, run),
                           int(ec.sim.get("block", 250)), threads)
    Eu = np.hypot(mom.mean[..., 1], mom.mean[..., 2])
    c = pr.scaling_factors(Eu, case.geom, ec.ret.get("scaling", "unit"))
    st = forward.stats_from_moments(mom, case.geom, c)
    out = {}
    for eps in ec.ret["epsilons"]:
        out[float(eps)] = forward.perturb(st, float(eps),
                                          rng_for(ec.seed, STREAM_NOISE, ki, run))
    return st, out


def pr_errors(st, case, variant="f"):
    rs = pr.run_pr(st, case.geom, variant)
    return rs, pr.relative_errors(rs, case.truth)


def pr_table(ec, cases=None, closed_loop=False, threads=1, n_runs=None,
             keep=None):
    """Errors array (n_runs, n_eps, n_k, 2) of (E_err, Var_err)."""
    cases = cases or pr_setup(ec)
    eps = [float(e) for e in ec.ret["epsilons"]]
    n_runs = int(ec.ret.get("n_runs", 1)) if n_runs is None else n_runs
    variant = ec.ret.get("variant", "f")
    err = np.empty((n_runs, len(eps), len(cases), 2))
    for ki, case in enumerate(cases):
        for r in range(n_runs):
            _, bundles = pr_bundles(ec, case, ki, r, closed_loop, threads)
            for ei, e in enumerate(eps):
                rs, ee = pr_errors(bundles[e], case, variant)
                err[r, ei, ki] = ee
                if keep is not None:
                    keep(ki, r, e, bundles[e], rs)
    return err


# -- inversion ----------------------------------------------------------------

@dataclass(eq=False)
class InversionSetup:
    geoms: list
    inv_grid: forward.Grid
    sim_grid: forward.Grid
    truth_g: np.ndarray
    truth_s: np.ndarray
    clean: dict              # short label -> list of per-k data vectors
    ops: dict                # short label -> stacked DiscreteOperator


def _clean_data(geom, sim_grid, gvals, svals):
    G = forward.green_matrix(geom, sim_grid)
    w = sim_grid.weights().ravel()
    Y1, J1, Y2, J2 = (q.ravel() for q in pr.coefficients(geom))
    ig = (G.real @ (w * gvals), G.imag @ (w * gvals))
    iv = ((G.real ** 2) @ (w * svals), (G.imag ** 2) @ (w * svals),
          (G.real * G.imag) @ (w * svals))
    out = {"f1": Y1 * ig[0] - J1 * ig[1], "f2": Y2 * ig[0] - J2 * ig[1]}
    for short, (a, b) in (("F11", (1, 1)), ("F22", (2, 2)), ("F12", (1, 2))):
        Ya, Ja = (Y1, J1) if a == 1 else (Y2, J2)
        Yb, Jb = (Y1, J1) if b == 1 else (Y2, J2)
        out[short] = Ya * Yb * iv[0] + Ja * Jb * iv[1] - (Ya * Jb + Yb * Ja) * iv[2]
    return out


def inversion_setup(ec, labels=None):
    labels = labels or [s for _, s, _, _ in LABELS]
    inv = ec.inv
    gc = ec.geometry_config(int(inv.get("n_per_arc", ec.raw["geometry"]["n_per_arc"])))
    geoms = [build_geometry(gc, k) for k in ec.inversion_ks()]
    sg = make_grid(ec.a, ec.sim["grid"])
    ig = make_grid(ec.a, inv["grid"])
    gname = inv.get("source_g", "g1")
    sname = inv.get("source_sigma_sq", "sigma1")
    gs = _field(sg, gname, "g").flat()
    ss = _field(sg, sname, "sigma_sq").flat()
    clean = {s: [] for s in labels}
    if inv.get("data_route", "operator") == "operator":
        for geom in geoms:
            d = _clean_data(geom, sg, gs, ss)
            for s in labels:
                clean[s].append(d[s])
    ops = {}
    for _, short, kind, which in LABELS:
        if short not in labels:
            continue
        if kind == "mean":
            ops[short] = fredholm.stack([fredholm.assemble_mean_operator(g, ig, which)
                                         for g in geoms])
        else:
            ops[short] = fredholm.stack([fredholm.assemble_variance_operator(g, ig, *which)
                                         for g in geoms])
    return InversionSetup(geoms, ig, sg, _field(ig, gname, "g").values,
                          _field(ig, sname, "sigma_sq").values, clean, ops)


def inversion_data(ec, setup, short, eps, threads=1):
    """Noisy stacked data vector for one label and noise level."""
    li = [s for _, s, _, _ in LABELS].index(short)
    route = ec.inv.get("data_route", "operator")
    if route == "operator":
        parts = []
        for ki, d in enumerate(setup.clean[short]):
            r = rng_for(ec.seed, STREAM_INV_NOISE, li, ki).standard_normal(d.shape)
            parts.append(d * (1.0 + eps * r))
        return np.concatenate(parts)
    # pipeline: Monte Carlo statistics -> perturb -> phaseless combinations
    sg = setup.sim_grid
    g = _field(sg, ec.inv.get("source_g", "g1"), "g")
    s = forward.SourceField(sg, np.sqrt(_field(sg, ec.inv.get("source_sigma_sq", "sigma1"),
                                               "sigma_sq").values), "sigma")
    kind = dict((sh, (kd, wh)) for _, sh, kd, wh in LABELS)[short]
    parts = []
    for ki, geom in enumerate(setup.geoms):
        mom = forward.Simulator(g, s, geom, ec.dt()).run(
            int(ec.inv.get("n_mc", ec.sim["n_mc"])), ec.seed, (STREAM_PIPE, ki),
            int(ec.sim.get("block", 250)), threads)
        st = forward.stats_from_moments(mom, geom, 1.0)
        st = forward.perturb(st, eps, rng_for(ec.seed, STREAM_PIPE_NOISE, ki))
        if kind[0] == "mean":
            parts.append(pr.rhs_expectation(st, geom)[..., kind[1] - 1].ravel())
        else:
            idx = fredholm.PAIRS.index(kind[1])
            parts.append(pr.rhs_variance(st, geom)[..., idx].ravel())
    return np.concatenate(parts)


def chain_config(ec, short, eps, seed_key):
    ch = ec.chain
    psec = "prior_g" if short.startswith("f") else (
        "prior_sigma12" if short == "F12" else "prior_sigma")
    p = ec.inv[psec]
    cfg = bayes.ChainConfig(
        beta=float(p["beta"]), n_samples=int(ch["n_samples"]),
        burn_in=int(ch["burn_in"]), seed=seed_for(ec.seed, STREAM_CHAIN, *seed_key),
        epsilon=float(eps), noise_floor_rel=float(ch.get("noise_floor_rel", 1e-6)),
        noise_floor_abs=float(ch.get("noise_floor_abs", 0.0)),
        init=ch.get("init", "zero"), adapt=bool(ch.get("adapt", False)),
        target_accept=float(ch.get("target_accept", 0.25)),
        batch=int(ch.get("batch", 1000)), trace_thin=int(ch.get("trace_thin", 100)))
    spec = bayes.PriorSpec(float(p["gamma"]), float(p["d"]), None)
    return cfg, spec


def invert_one(ec, setup, short, eps, threads=1, prior_cache=None, trace_path=None):
    li = [s for _, s, _, _ in LABELS].index(short)
    ei = [float(e) for e in ec.inv["epsilons"]].index(float(eps)) \
        if float(eps) in [float(e) for e in ec.inv["epsilons"]] else 99
    cfg, spec = chain_config(ec, short, eps, (li, ei))
    cfg.trace_path = trace_path
    spec = bayes.PriorSpec(spec.gamma, spec.d, setup.inv_grid)
    key = (spec.gamma, spec.d)
    if prior_cache is not None and key in prior_cache:
        prior = prior_cache[key]
    else:
        prior = bayes.build_prior(spec)
        if prior_cache is not None:
            prior_cache[key] = prior
    data = inversion_data(ec, setup, short, float(eps), threads)
    truth = setup.truth_g if short.startswith("f") else setup.truth_s
    return bayes.run_chain(cfg, prior, setup.ops[short], data, truth)


def invert_table(ec, setup=None, labels=None, epsilons=None, threads=1, keep=None):
    """Relative errors {short: {eps: err}} per label and noise level."""
    labels = labels or [s for _, s, _, _ in LABELS]
    setup = setup or inversion_setup(ec, labels)
    epsilons = [float(e) for e in (epsilons or ec.inv["epsilons"])]
    cache = {}
    out = {}
    for short in labels:
        out[short] = {}
        for e in epsilons:
            res = invert_one(ec, setup, short, e, threads, cache)
            out[short][e] = res.rel_l2_error
            if keep is not None:
                keep(short, e, res)
    return out


def label_of(short):
    return dict((s, lab) for lab, s, _, _ in LABELS)[short]


def fmt_eps(e):
    return ("%g" % e).replace(".", "p")
