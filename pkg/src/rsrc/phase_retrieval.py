"""Phase retrieval with two reference point sources per arc.

At every measurement point the mean (Re, Im) of u solves a 2x2 system and
(Var Re, Var Im, Cov) a 3x3 system, with coefficients Y_0(k r_l), J_0(k r_l)
at the distances r_1, r_2 to the arc's reference points. Both are solved in
closed form by Cramer's rule.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from . import specfun
from .forward import StatsBundle, exact_gaussian_moments, stats_from_moments


class SingularSystemError(ArithmeticError):
    def __init__(self, msg, j=None, k=None, det=None):
        super().__init__(msg)
        self.j, self.k, self.det = j, k, det


# -- determinants and their floors ------------------------------------------

def det_A(Y1, J1, Y2, J2):
    return J1 * Y2 - Y1 * J2


def matrix_A(Y1, J1, Y2, J2):
    return np.array([[Y1, -J1], [Y2, -J2]], dtype=float)


def matrix_D(Y1, J1, Y2, J2):
    return np.array([[Y1 * Y1, J1 * J1, -2.0 * Y1 * J1],
                     [Y2 * Y2, J2 * J2, -2.0 * Y2 * J2],
                     [Y1 * Y2, J1 * J2, -(Y1 * J2 + Y2 * J1)]], dtype=float)


def _det3(a):
    # a: (..., 3, 3)
    return (a[..., 0, 0] * (a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1])
            - a[..., 0, 1] * (a[..., 1, 0] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 0])
            + a[..., 0, 2] * (a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0]))


def _D_stack(Y1, J1, Y2, J2):
    D = np.empty(np.shape(Y1) + (3, 3))
    D[..., 0, :] = np.stack([Y1 * Y1, J1 * J1, -2.0 * Y1 * J1], -1)
    D[..., 1, :] = np.stack([Y2 * Y2, J2 * J2, -2.0 * Y2 * J2], -1)
    D[..., 2, :] = np.stack([Y1 * Y2, J1 * J2, -(Y1 * J2 + Y2 * J1)], -1)
    return D


def det_D(Y1, J1, Y2, J2):
    return _det3(_D_stack(*map(np.asarray, (Y1, J1, Y2, J2))))


def det_floor(geom):
    """Lower bound on |det A| guaranteed analytically."""
    if geom.is_small:
        return 4.0 / 9.0
    tau = geom.R / geom.a
    M = (20.0 * tau - 7.0) / (20.0 * tau)
    return M / (geom.k * geom.R)


def coefficients(geom, theta=None):
    """(Y1, J1, Y2, J2) at every measurement point (or given angles)."""
    if theta is None:
        r = geom.distances()
    else:
        th = np.asarray(theta, float)
        lam = geom.lambdas[:, None, :]
        cth = np.cos(th - geom.centers[:, None])[..., None]
        r = geom.R * np.sqrt(1.0 + lam * lam - 2.0 * lam * cth)
    J, Y = specfun.j0_y0(geom.k * r)
    return Y[..., 0], J[..., 0], Y[..., 1], J[..., 1]


def det_scan(geom, n_angles=1000):
    """|det A| on n_angles uniform angles of every closed arc: (m, n)."""
    t = np.linspace(0.0, 1.0, n_angles)
    theta = geom.arcs[:, :1] + t[None, :] * (geom.arcs[:, 1:] - geom.arcs[:, :1])
    return np.abs(det_A(*coefficients(geom, theta)))


def stability_constants(eps):
    """(C_eps, C'_eps) of the expectation and variance stability bounds."""
    c = (2.5 * (2 + eps) ** 2 * (3 + eps) + 20.0) / (1.0 - eps)
    return c, eps * (3.0 + eps * c)


# -- scaling and right-hand sides ---------------------------------------------

def scaling_factors(abs_E_u, geom, mode="unit"):
    """c_{j,l}: sup_j |E u| / sup_j |G(., z_{j,l})|, or 1 in unit mode.

    ``abs_E_u`` is an (m, N) array or a StatsBundle.
    """
    if mode == "unit":
        return np.ones((geom.m, 2))
    if mode != "paper":
        raise ValueError("mode must be 'unit' or 'paper'")
    if isinstance(abs_E_u, StatsBundle):
        abs_E_u = abs_E_u.abs_E_u
    num = np.max(np.abs(abs_E_u), axis=1)
    x = geom.meas_points
    c = np.empty((geom.m, 2))
    for ell in range(2):
        den = np.max(np.abs(specfun.green(geom.k, x, geom.ref_points[:, ell][:, None])), 1)
        if np.any(den <= 0):
            raise ZeroDivisionError("reference field vanishes on an arc")
        c[:, ell] = num / den
    return c


def _check_c(c):
    if np.any(~(c > 0)):
        raise ValueError("scaling factors must be positive")


def _f_arrays(stats, c, coef, variant, sl=slice(None)):
    Y1, J1, Y2, J2 = (q[sl] for q in coef)
    H2 = np.stack([Y1 * Y1 + J1 * J1, Y2 * Y2 + J2 * J2], -1)
    if variant == "f":
        diff = stats.E_abs_v_sq[sl] - stats.E_abs_u_sq[sl][..., None]
    elif variant == "ano_f":
        diff = stats.abs_E_v[sl] ** 2 - (stats.abs_E_u[sl] ** 2)[..., None]
    else:
        raise ValueError("variant must be 'f' or 'ano_f'")
    cc = c[sl][:, None, :]
    return (2.0 / cc) * diff - (cc / 8.0) * H2


def _F_arrays(stats, c, sl=slice(None)):
    vu = stats.Var_abs_u_sq[sl]
    cuv = stats.Cov_u_v[sl]
    c = c[sl]
    out = np.empty(vu.shape + (3,))
    for i, (l1, l2) in enumerate(((0, 0), (1, 1), (0, 1))):
        first = stats.Var_abs_v_sq[sl][..., l1] if l1 == l2 \
            else stats.Cov_v1_v2[sl]
        br = first - cuv[..., l1] - cuv[..., l2] + vu
        out[..., i] = 4.0 / (c[:, None, l1] * c[:, None, l2]) * br
    return out


def rhs_expectation(stats, geom, variant="f", c=None):
    """f_{j,l,k} at every point, shape (m, N, 2).

    variant "f" uses E|v|^2 - E|u|^2, "ano_f" uses |E v|^2 - |E u|^2.
    """
    c = np.broadcast_to(stats.c if c is None else c, (geom.m, 2))
    _check_c(c)
    return _f_arrays(stats, c, coefficients(geom), variant)


def rhs_variance(stats, geom, c=None):
    """F_{j,k,l1,l2} for (1,1), (2,2), (1,2): shape (m, N, 3)."""
    c = np.broadcast_to(stats.c if c is None else c, (geom.m, 2))
    _check_c(c)
    return _F_arrays(stats, c)


def forward_expectation(E_re, E_im, coef):
    """f_l = Y_l E_re - J_l E_im."""
    Y1, J1, Y2, J2 = coef
    return np.stack([Y1 * E_re - J1 * E_im, Y2 * E_re - J2 * E_im], -1)


def forward_variance(var_re, var_im, cov, coef):
    D = _D_stack(*coef)
    return np.einsum("...ij,...j->...i", D, np.stack([var_re, var_im, cov], -1))


# -- solves -------------------------------------------------------------------

def solve_expectation(f, coef, threshold=0.0):
    """Cramer solve of the 2x2 expectation system, vectorised.

    Returns (E_re, E_im, detA). Raises SingularSystemError when any
    |det A| <= threshold.
    """
    Y1, J1, Y2, J2 = coef
    dA = det_A(Y1, J1, Y2, J2)
    if np.any(np.abs(dA) <= threshold):
        raise SingularSystemError("det A below threshold",
                                  det=float(np.min(np.abs(dA))))
    f1, f2 = f[..., 0], f[..., 1]
    return (J1 * f2 - f1 * J2) / dA, (Y1 * f2 - f1 * Y2) / dA, dA


def solve_variance(F, coef, threshold=0.0):
    """Cramer solve of the 3x3 variance system. Returns (Vre, Vim, Cov, detD)."""
    D = _D_stack(*coef)
    dD = _det3(D)
    if np.any(np.abs(dD) <= threshold):
        raise SingularSystemError("det D below threshold",
                                  det=float(np.min(np.abs(dD))))
    out = []
    for col in range(3):
        Dc = D.copy()
        Dc[..., :, col] = F
        out.append(_det3(Dc) / dD)
    return out[0], out[1], out[2], dD


@dataclass(eq=False)
class RetrievedStats:
    k: float
    theta: np.ndarray
    E_re: np.ndarray
    E_im: np.ndarray
    Var_re: np.ndarray
    Var_im: np.ndarray
    Cov_re_im: np.ndarray
    detA: np.ndarray
    detD: np.ndarray
    arc_ok: np.ndarray = None
    failures: list = field(default_factory=list)

    @property
    def E(self):
        return self.E_re + 1j * self.E_im

    @property
    def Var(self):
        return self.Var_re + self.Var_im

    def maps(self):
        return {"E_re": self.E_re, "E_im": self.E_im, "Var_re": self.Var_re,
                "Var_im": self.Var_im, "Cov_re_im": self.Cov_re_im}


def run_pr(stats, geom, variant="f", safety=1e-3, force=False):
    """Steps 1-4 of the reference-source retrieval on every arc.

    An arc whose system is singular (or whose c is not positive) is
    skipped and listed in ``failures``; the run fails only when every arc
    fails.
    """
    if geom.policy == "free" and not force:
        raise ValueError("refusing a free-mode geometry without force=True")
    if stats.shape != geom.theta.shape:
        raise ValueError("statistics do not match the geometry")
    floor = det_floor(geom)
    coef = coefficients(geom)
    m, n = geom.theta.shape
    nan = np.full((m, n), np.nan)
    out = {name: nan.copy() for name in
           ("E_re", "E_im", "Var_re", "Var_im", "Cov", "detA", "detD")}
    ok = np.zeros(m, bool)
    failures = []
    for j in range(m):
        sl = slice(j, j + 1)
        cj = tuple(q[j] for q in coef)
        try:
            _check_c(stats.c[j])
            f = _f_arrays(stats, stats.c, coef, variant, sl)[0]
            F = _F_arrays(stats, stats.c, sl)[0]
            er, ei, dA = solve_expectation(f, cj, safety * floor)
            vr, vi, cv, dD = solve_variance(F, cj, safety * floor ** 3)
        except (SingularSystemError, ValueError) as e:
            failures.append({"j": j + 1, "k": geom.k, "error": str(e),
                             "det": getattr(e, "det", None)})
            continue
        for name, val in (("E_re", er), ("E_im", ei), ("Var_re", vr),
                          ("Var_im", vi), ("Cov", cv), ("detA", dA),
                          ("detD", dD)):
            out[name][j] = val
        ok[j] = True
    if not ok.any():
        raise SingularSystemError("retrieval failed on every arc", k=geom.k)
    return RetrievedStats(geom.k, geom.theta.copy(), out["E_re"], out["E_im"],
                          out["Var_re"], out["Var_im"], out["Cov"],
                          out["detA"], out["detD"], ok, failures)


# -- truth and errors ---------------------------------------------------------

def truth_from_moments(mom, geom):
    """RetrievedStats holding the exact moments (Re/Im) from a Moments."""
    cov = mom.cov
    coef = coefficients(geom)
    return RetrievedStats(geom.k, geom.theta.copy(), mom.mean[..., 1].copy(),
                          mom.mean[..., 2].copy(), cov[..., 1, 1].copy(),
                          cov[..., 2, 2].copy(), cov[..., 1, 2].copy(),
                          det_A(*coef), det_D(*coef),
                          np.ones(geom.m, bool))


def synthetic_stats(geom, E_re, E_im, var_re, var_im, cov, c=1.0):
    """Exact StatsBundle for chosen per-point Gaussian moments of u."""
    C = np.stack([np.stack([var_re, cov], -1), np.stack([cov, var_im], -1)], -2)
    mom = exact_gaussian_moments(np.asarray(E_re) + 1j * np.asarray(E_im), C, geom)
    return stats_from_moments(mom, geom, c), mom


def relative_errors(retrieved, truth):
    """Global relative L2 errors of E(u) and Var(u) = Var_re + Var_im.

    Only arcs retrieved successfully contribute.
    """
    ok = np.ones(retrieved.E_re.shape[0], bool) if retrieved.arc_ok is None \
        else retrieved.arc_ok
    dE = np.abs(retrieved.E[ok] - truth.E[ok])
    dV = np.abs(retrieved.Var[ok] - truth.Var[ok])
    nE = math.sqrt(np.sum(np.abs(truth.E[ok]) ** 2))
    nV = math.sqrt(np.sum(np.abs(truth.Var[ok]) ** 2))
    if nE == 0 or nV == 0:
        raise ZeroDivisionError("truth has zero norm")
    return math.sqrt(np.sum(dE ** 2)) / nE, math.sqrt(np.sum(dV ** 2)) / nV
