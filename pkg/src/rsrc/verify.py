"""Property suite behind ``rsrc verify``.

Each check returns a dict with a fixed key set (name, passed, metric,
threshold, seconds, details) so the report schema does not drift between
runs. Defaults reproduce the stated tolerances and sample sizes.
"""
import math
import os
import tempfile
import time
import warnings
from dataclasses import replace

import numpy as np

from . import bayes, fredholm, forward, phase_retrieval as pr, sources
from .geometry import GeometryConfig, build_geometry
from .io import read_trace

REPORT_SCHEMA = 1
KS_DEFAULT = (math.pi / 30.0, math.pi, 60.5 * math.pi, 84.5 * math.pi)


def _result(name, passed, metric, threshold, t0, **details):
    return {"name": name, "passed": bool(passed), "metric": float(metric),
            "threshold": float(threshold), "seconds": round(time.perf_counter() - t0, 3),
            "details": details}


def _paper_geometry(k, n_per_arc=40, a=1.0):
    return build_geometry(GeometryConfig(a, 6.0, 10, n_per_arc), k)


# -- determinants -------------------------------------------------------------

def check_det_identity(seed=0, n=10000, tol=1e-10):
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    scale = 10.0 ** rng.uniform(-1, 1, (4, n))
    Y1, J1, Y2, J2 = rng.standard_normal((4, n)) * scale
    dA = pr.det_A(Y1, J1, Y2, J2)
    dD = pr.det_D(Y1, J1, Y2, J2)
    rel = np.abs(dD - dA ** 3) / np.maximum(1.0, np.abs(dA) ** 3)
    return _result("det_identity", rel.max() <= tol, rel.max(), tol, t0, draws=n)


def check_det_bounds(ks=KS_DEFAULT, n_angles=1000, geoms=None):
    """Minimum |det A| over closed arcs against the guaranteed floor."""
    t0 = time.perf_counter()
    geoms = geoms or [_paper_geometry(k) for k in ks]
    worst, rows, fails = np.inf, [], []
    for g in geoms:
        d = pr.det_scan(g, n_angles)
        floor = pr.det_floor(g)
        bound = floor - 1e-9 if g.is_small else floor
        j = int(np.argmin(d.min(axis=1)))
        ratio = d.min() / floor
        rows.append({"k": g.k, "min_det": float(d.min()), "floor": floor, "j": j + 1})
        if d.min() < bound:
            fails.append({"j": j + 1, "k": g.k, "min_det": float(d.min())})
        worst = min(worst, ratio)
    return _result("det_bounds", not fails, worst, 1.0, t0, per_k=rows, failures=fails)


# -- white noise --------------------------------------------------------------

def _wn_fields(grid):
    X, Y = grid.mesh()
    f = np.cos(1.3 * X + 0.4) * np.exp(-Y ** 2) + 1j * np.sin(2.0 * X * Y)
    h = (1.0 - X ** 2) * (0.5 + Y)
    return f, h


def check_white_noise(seed=0, n=10000, grid_n=16, nsig=3.0, dt=None):
    """Monte Carlo moments of cell-corner white-noise integrals against the
    discrete-exact quadratic forms dt * sum w^2 f h."""
    t0 = time.perf_counter()
    grid = forward.Grid(1.0, grid_n, grid_n)
    dt = grid.default_dt() if dt is None else dt
    f, h = _wn_fields(grid)
    one = forward.SourceField(grid, np.ones(grid.shape), "g")
    rng = np.random.default_rng(seed)
    If = np.empty(n, complex)
    Ih = np.empty(n)
    for s in range(n):
        z = forward.white_noise(grid, dt, rng)
        If[s] = forward.stochastic_integral(one, f, z)
        Ih[s] = forward.stochastic_integral(one, h, z).real
    checks = []

    def add(name, x, expect):
        se = x.std(ddof=1) / math.sqrt(n)
        z = abs(x.mean() - expect) / se if se > 0 else abs(x.mean() - expect)
        checks.append({"name": name, "mc": complex(x.mean()).real, "exact": float(np.real(expect)),
                       "z": float(z)})
    add("E_int_f_re", If.real, 0.0)
    add("E_int_f_im", If.imag, 0.0)
    add("E_abs_int_f_sq", np.abs(If) ** 2,
        forward.noise_quadratic_form(grid, f, np.conj(f), dt).real)
    fr = f.real
    add("E_int_fr_int_h", If.real * Ih, forward.noise_quadratic_form(grid, fr, h, dt).real)
    zmax = max(c["z"] for c in checks)
    return _result("white_noise", zmax <= nsig, zmax, nsig, t0, samples=n, checks=checks)


# -- closed loop --------------------------------------------------------------

def _synthetic_moments(geom, seed):
    rng = np.random.default_rng(seed)
    th = geom.theta
    j = np.arange(geom.m)[:, None]
    E_re = np.cos(3 * th + 0.2 * j) + 0.1 * rng.standard_normal(th.shape)
    E_im = np.sin(2 * th) * 0.7 + 0.1 * rng.standard_normal(th.shape)
    vr = 0.5 + 0.3 * np.cos(th) ** 2
    vi = 0.4 + 0.2 * np.sin(5 * th) ** 2
    cv = 0.3 * np.sqrt(vr * vi) * np.sin(th + j)
    return E_re, E_im, vr, vi, cv


def check_closed_loop(ks=KS_DEFAULT, tol=1e-8, seed=0, variant="f"):
    t0 = time.perf_counter()
    worst, per = 0.0, []
    for k in ks:
        g = _paper_geometry(k)
        E_re, E_im, vr, vi, cv = _synthetic_moments(g, seed)
        st, _ = pr.synthetic_stats(g, E_re, E_im, vr, vi, cv)
        rs = pr.run_pr(st, g, variant)
        errs = {"E_re": E_re, "E_im": E_im, "Var_re": vr, "Var_im": vi, "Cov_re_im": cv}
        e = max(float(np.max(np.abs(rs.maps()[n] - v))) for n, v in errs.items())
        per.append({"k": g.k, "sup_err": e})
        worst = max(worst, e)
    return _result("closed_loop", worst <= tol, worst, tol, t0, per_k=per)


def check_stability_bound(k=math.pi, eps=0.01, seed=0):
    """One-sided check of the expectation stability estimate in reporting
    form: sup_j-error <= eps C_eps sup_j |E u| under bounded perturbations."""
    t0 = time.perf_counter()
    g = _paper_geometry(k)
    E_re, E_im, vr, vi, cv = _synthetic_moments(g, seed)
    Eu = np.hypot(E_re, E_im)
    c = pr.scaling_factors(Eu, g, "paper")
    st, _ = pr.synthetic_stats(g, E_re, E_im, vr, vi, cv, c)
    rng = np.random.default_rng(seed)

    def bump(x):
        return x * (1.0 + eps * rng.uniform(-1, 1, x.shape))
    st = replace(st, abs_E_u=bump(st.abs_E_u), abs_E_v=bump(st.abs_E_v))
    rs = pr.run_pr(st, g, "ano_f")
    C, _ = pr.stability_constants(eps)
    err = np.max(np.abs(rs.E - (E_re + 1j * E_im)), axis=1)
    bound = eps * C * np.max(Eu, axis=1)
    ratio = float(np.max(err / bound))
    return _result("stability_bound", ratio <= 1.0, ratio, 1.0, t0, eps=eps, C_eps=C)


# -- pCN ----------------------------------------------------------------------

def check_prior_invariance(seed=0, n_steps=50000, beta=0.5, tol=0.05, grid_n=5):
    """Flat potential: every move is accepted and the chain keeps the prior.

    Node variances are compared on average over the grid; the covariance of
    two neighbouring nodes comes from the full chain trace.
    """
    t0 = time.perf_counter()
    grid = forward.Grid(1.0, grid_n, grid_n)
    prior = bayes.build_prior(bayes.PriorSpec(1.0, 0.2, grid))
    with tempfile.TemporaryDirectory() as tmp:
        cfg = bayes.ChainConfig(beta=beta, n_samples=n_steps, burn_in=0, seed=seed,
                                trace_path=os.path.join(tmp, "trace.bin"), trace_thin=1)
        res = bayes.run_chain(cfg, prior, potential_fn=lambda x: 0.0)
        tr = read_trace(cfg.trace_path)[:, :2]
    var = res.pointwise_sd.ravel() ** 2
    rel_var = abs(var.mean() / np.diag(prior.C).mean() - 1.0)
    cov = tr.T @ tr / len(tr)
    Cij = prior.C[:2, :2]
    rel_cov = float(np.max(np.abs(cov - Cij)) / np.max(np.abs(Cij)))
    ok = rel_var <= tol and rel_cov <= tol and res.acceptance_rate == 1.0
    return _result("prior_invariance", ok, max(rel_var, rel_cov), tol, t0,
                   rel_var=rel_var, rel_cov=rel_cov, acceptance=res.acceptance_rate)


def gaussian_posterior_2node():
    """Toy conjugate problem: prior C, operator T, data d, noise S."""
    nodes = np.array([[0.0, 0.0], [0.15, 0.0]])
    C = bayes.covariance(nodes, 1.0, 0.2)
    T = np.array([[1.0, 0.5], [0.2, -1.0]])
    d = np.array([0.9, -0.4])
    S = np.array([0.3, 0.2])
    K = C @ T.T @ np.linalg.inv(T @ C @ T.T + np.diag(S))
    return nodes, C, T, d, S, K @ d, C - K @ T @ C


def check_conjugate_gaussian(seed=0, n_steps=100000, beta=0.3, tol=0.05, burn_in=2000):
    """pCN on the 2-node toy problem against the analytic Gaussian posterior.

    Mean error is relative to max|mean|; covariance entries are compared on
    the correlation scale |dC_ij| / sqrt(C_ii C_jj).
    """
    t0 = time.perf_counter()
    nodes, C, T, d, S, mean, cov = gaussian_posterior_2node()
    prior = bayes.build_prior(bayes.PriorSpec(1.0, 0.2, None), nodes=nodes)
    with tempfile.TemporaryDirectory() as tmp:
        cfg = bayes.ChainConfig(beta=beta, n_samples=n_steps, burn_in=burn_in, seed=seed,
                                noise_cov=S, trace_path=os.path.join(tmp, "t.bin"),
                                trace_thin=1)
        res = bayes.run_chain(cfg, prior, T, d)
        tr = read_trace(cfg.trace_path)
    emp = np.cov(tr.T)
    sd = np.sqrt(np.diag(cov))
    m_err = float(np.max(np.abs(res.mean_field - mean)) / np.max(np.abs(mean)))
    c_err = float(np.max(np.abs(emp - cov) / np.outer(sd, sd)))
    ok = m_err <= tol and c_err <= tol
    return _result("conjugate_gaussian", ok, max(m_err, c_err), tol, t0,
                   mean_err=m_err, cov_err=c_err, acceptance=res.acceptance_rate)


# -- duality ------------------------------------------------------------------

def check_duality(seed=0, n=10000, grid_n=20, n_per_arc=4, k=math.pi, nsig=3.0,
                  mean_tol=1e-12):
    """Operator rows against the simulator: exactly for the mean (sigma = 0),
    within Monte Carlo error for the variance kernels."""
    t0 = time.perf_counter()
    grid = forward.Grid(1.0, grid_n, grid_n)
    geom = _paper_geometry(k, n_per_arc)
    g = forward.SourceField.from_function(grid, sources.g, "g")
    zero = forward.SourceField(grid, np.zeros(grid.shape), "sigma")
    smp = forward.sample_field(g, zero, geom, geom.k, 1.0, np.random.default_rng(seed))
    x = geom.meas_points.reshape(-1, 2)
    r1, r2 = fredholm.kernel_row_mean(x, geom.k, grid)
    u_op = (r1 + 1j * r2) @ g.flat()
    mean_err = float(np.max(np.abs(smp.u.ravel() - u_op)) / np.max(np.abs(u_op)))

    s = forward.SourceField.from_function(grid, sources.sigma, "sigma")
    mom = forward.Simulator(zero, s, geom).run(n, seed, (7,), 500, 1)
    raw = fredholm.raw_variance_rows(geom, grid)
    s2 = s.flat() ** 2
    ref = [M @ s2 for M in raw]
    cov = mom.cov.reshape(-1, 3, 3)
    vr, vi, cri = cov[:, 1, 1], cov[:, 2, 2], cov[:, 1, 2]
    se = [vr * math.sqrt(2.0 / (n - 1)), vi * math.sqrt(2.0 / (n - 1)),
          np.sqrt((vr * vi + cri ** 2) / (n - 1))]
    # one well-separated point per arc keeps the family of z-tests small
    pick = np.arange(geom.m) * geom.n_per_arc
    z = np.concatenate([np.abs(est[pick] - r[pick]) / e[pick]
                        for est, r, e in zip((vr, vi, cri), ref, se)])
    ok = mean_err <= mean_tol and z.max() <= nsig
    return _result("duality", ok, float(z.max()), nsig, t0, mean_rel_err=mean_err,
                   mean_tol=mean_tol, samples=n)


# -- suite --------------------------------------------------------------------

CHECKS = ("det_identity", "det_bounds", "white_noise", "closed_loop",
          "stability_bound", "prior_invariance", "conjugate_gaussian", "duality")


def run_suite(seed=0, ks=KS_DEFAULT, inject_fault=False, quick=False):
    """Run every check; returns the report dict."""
    scale = 10 if quick else 1
    geoms = None
    if inject_fault:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            cfg = GeometryConfig(1.0, 6.0, 10, 40, (), "free")
            geoms = [build_geometry(cfg, k, lambda_override=(0.1, 0.1)) for k in ks]
    results = [
        check_det_identity(seed),
        check_det_bounds(ks, geoms=geoms),
        check_white_noise(seed, 10000 // scale),
        check_closed_loop(ks, seed=seed),
        check_stability_bound(seed=seed),
        check_prior_invariance(seed, 50000 // scale),
        check_conjugate_gaussian(seed, 100000 // scale),
        check_duality(seed, 10000 // scale),
    ]
    if quick:
        for r in results:
            r["details"]["quick"] = True
    return {"schema": REPORT_SCHEMA, "seed": int(seed), "inject_fault": bool(inject_fault),
            "passed": all(r["passed"] for r in results), "checks": results}
