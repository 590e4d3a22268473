"""Monte Carlo forward model on a uniform tensor grid.

The radiated field at x is u(x) = I1(x) + I2(x), with I1 the trapezoid
approximation of int G_k(x,y) g(y) dy and I2 the node-shared white-noise
sum over cells of G_k(x,y) sigma(y) z(y), z ~ N(0, dt) per node.

Since v_{j,l} - u = c G_k(., z_{j,l}) is deterministic, |v|^2 is an affine
function of (|u|^2, Re u, Im u). The simulator therefore streams only the
means and 3x3 co-moments of that triple per point, and every phaseless
statistic of v is formed afterwards for any choice of c.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import specfun

ROLES = ("g", "sigma", "sigma_sq")


# -- grids and fields ---------------------------------------------------------

@dataclass(frozen=True)
class Grid:
    a: float
    n1: int
    n2: int

    @property
    def dy1(self):
        return 2.0 * self.a / self.n1

    @property
    def dy2(self):
        return 2.0 * self.a / self.n2

    @property
    def shape(self):
        return (self.n1 + 1, self.n2 + 1)

    @property
    def size(self):
        return (self.n1 + 1) * (self.n2 + 1)

    def axes(self):
        y1 = -self.a + np.arange(self.n1 + 1) * self.dy1
        y2 = -self.a + np.arange(self.n2 + 1) * self.dy2
        return y1, y2

    def mesh(self):
        y1, y2 = self.axes()
        return np.meshgrid(y1, y2, indexing="ij")

    def nodes(self):
        """Node coordinates, shape (size, 2), row-major in (i, j)."""
        Y1, Y2 = self.mesh()
        return np.stack([Y1.ravel(), Y2.ravel()], -1)

    def weights(self):
        """Node weights equivalent to the cell-corner trapezoid sum."""
        w1 = np.full(self.n1 + 1, self.dy1)
        w2 = np.full(self.n2 + 1, self.dy2)
        w1[[0, -1]] *= 0.5
        w2[[0, -1]] *= 0.5
        return np.outer(w1, w2)

    def default_dt(self):
        """Unit-intensity white noise: Var(z) * cell area = 1 per cell."""
        return 1.0 / (self.dy1 * self.dy2)


@dataclass(frozen=True, eq=False)
class SourceField:
    grid: Grid
    values: np.ndarray
    role: str = "g"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError("field shape %s != grid %s"
                             % (v.shape, self.grid.shape))
        if self.role not in ROLES:
            raise ValueError("unknown role %r" % self.role)
        if self.role != "g" and np.any(v < 0):
            raise ValueError("%s field must be nonnegative" % self.role)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid, fn, role="g"):
        Y1, Y2 = grid.mesh()
        return cls(grid, fn(Y1, Y2), role)

    def flat(self):
        return self.values.ravel()


def _corner_sum(p, dy1, dy2):
    return 0.25 * dy1 * dy2 * (p[:-1, :-1] + p[1:, :-1]
                               + p[:-1, 1:] + p[1:, 1:]).sum()


def _kernel_values(field, kernel):
    if callable(kernel):
        Y1, Y2 = field.grid.mesh()
        kv = kernel(np.stack([Y1, Y2], -1))
    else:
        kv = kernel
    kv = np.asarray(kv)
    if kv.shape != field.grid.shape:
        kv = np.broadcast_to(kv, field.grid.shape)
    if not np.all(np.isfinite(kv)):
        raise ValueError("kernel not finite at a grid node")
    return kv


def deterministic_integral(field, kernel):
    """Cell-corner trapezoid rule for int kernel * field.

    ``kernel`` is node values or a callable on points of shape (..., 2).
    """
    kv = _kernel_values(field, kernel)
    g = field.grid
    return complex(_corner_sum(kv * field.values, g.dy1, g.dy2))


def white_noise(grid, dt, rng):
    """One node array z with z_ij ~ N(0, dt)."""
    return np.sqrt(dt) * rng.standard_normal(grid.shape)


def stochastic_integral(field, kernel, z):
    """Cell-corner sum of sigma * kernel * z (z shared by adjacent cells)."""
    kv = _kernel_values(field, kernel)
    z = np.asarray(z, dtype=float)
    if z.shape != field.grid.shape:
        raise ValueError("noise array shape mismatch")
    g = field.grid
    return complex(_corner_sum(kv * field.values * z, g.dy1, g.dy2))


def noise_quadratic_form(grid, f, h, dt):
    """Exact E[I2(f) I2(h)] under the I2 rule (bilinear; pass conj(f) for
    E|I2(f)|^2). Complex when either input is complex."""
    w = grid.weights()
    q = dt * np.sum(w * w * f * h)
    return complex(q) if np.iscomplexobj(q) else float(q)


# -- kernels at the measurement points ----------------------------------------

def green_matrix(geom, grid):
    """G_k(x_p, y_n) for all measurement points p and nodes n: (P, size)."""
    x = geom.meas_points.reshape(-1, 2)
    y = grid.nodes()
    d = x[:, None, :] - y[None, :, :]
    r = np.hypot(d[..., 0], d[..., 1])
    return specfun.green_r(geom.k, r)


def reference_fields(geom, c):
    """c_{j,l} G_k(x, z_{j,l}) on each arc's points: complex (m, N, 2)."""
    c = np.broadcast_to(np.asarray(c, dtype=float), (geom.m, 2))
    x = geom.meas_points
    out = np.empty((geom.m, geom.n_per_arc, 2), complex)
    for ell in range(2):
        z = geom.ref_points[:, ell, :][:, None, :]
        out[..., ell] = c[:, None, ell] * specfun.green(geom.k, x, z)
    return out


@dataclass(eq=False)
class FieldSample:
    u: np.ndarray      # (m, N) complex
    v: np.ndarray      # (m, N, 2) complex


def sample_field(g, sigma, geom, k, c, rng, dt=None, G=None):
    """One realisation of u on all points plus v = u + c G(., z)."""
    if abs(float(getattr(k, "k", k)) - geom.k) > 1e-12 * geom.k:
        raise ValueError("geometry was built for a different k")
    grid = g.grid
    dt = grid.default_dt() if dt is None else dt
    if G is None:
        G = green_matrix(geom, grid)
    w = grid.weights().ravel()
    z = white_noise(grid, dt, rng).ravel()
    u = G @ (w * g.flat()) + G @ (w * sigma.flat() * z)
    u = u.reshape(geom.m, geom.n_per_arc)
    v = u[..., None] + reference_fields(geom, c)
    return FieldSample(u, v)


# -- moments and statistics ---------------------------------------------------

@dataclass(eq=False)
class Moments:
    """Per-point mean and covariance of the triple (|u|^2, Re u, Im u)."""
    mean: np.ndarray         # (m, N, 3)
    cov: np.ndarray          # (m, N, 3, 3), divisor n - 1
    n: float                 # np.inf for exact moments
    k: float
    theta: np.ndarray        # (m, N)


def _block_moments(X):
    # X: (P, 3, B)
    mu = X.mean(-1)
    D = X - mu[..., None]
    return mu, np.einsum("pib,pjb->pij", D, D)


def _merge(a, b):
    na, ma, Ma = a
    nb, mb, Mb = b
    n = na + nb
    d = mb - ma
    mean = ma + d * (nb / n)
    M2 = Ma + Mb + np.einsum("pi,pj->pij", d, d) * (na * nb / n)
    return n, mean, M2


def _rng_for(seed, stream, block):
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(stream) + (block,))
    return np.random.default_rng(ss)


class Simulator:
    """Precomputed kernels for repeated Monte Carlo runs at one geometry."""

    def __init__(self, g, sigma, geom, dt=None):
        grid = g.grid
        if sigma.grid != grid:
            raise ValueError("g and sigma must share a grid")
        if sigma.role == "g":
            raise ValueError("sigma must carry a 'sigma' role")
        self.grid, self.geom = grid, geom
        self.dt = grid.default_dt() if dt is None else float(dt)
        G = green_matrix(geom, grid)
        w = grid.weights().ravel()
        self.u0 = G @ (w * g.flat())
        Ks = G * (w * sigma.flat())[None, :]
        self.Kr = np.ascontiguousarray(np.vstack([Ks.real, Ks.imag]))

    def run(self, n_samples, seed, stream=(0,), block=256, threads=1):
        """Monte Carlo over n_samples realisations; returns Moments.

        Sample i uses the generator of block i // block, seeded from
        (seed, stream, block index), so results do not depend on threads.
        """
        if n_samples < 2:
            raise ValueError("need at least 2 samples")
        grid, geom, u0, Kr = self.grid, self.geom, self.u0, self.Kr
        P = u0.size
        sq = np.sqrt(self.dt)
        n_blocks = -(-n_samples // block)

        def one(b):
            nb = min(block, n_samples - b * block)
            rng = _rng_for(seed, stream, b)
            Z = sq * rng.standard_normal((grid.size, nb))
            S = Kr @ Z
            re = S[:P] + u0.real[:, None]
            im = S[P:] + u0.imag[:, None]
            X = np.stack([re * re + im * im, re, im], 1)
            mu, M2 = _block_moments(X)
            return float(nb), mu, M2

        if threads > 1:
            with ThreadPoolExecutor(threads) as ex:
                parts = list(ex.map(one, range(n_blocks)))
        else:
            parts = [one(b) for b in range(n_blocks)]
        acc = parts[0]
        for p in parts[1:]:
            acc = _merge(acc, p)
        n, mean, M2 = acc
        shp = (geom.m, geom.n_per_arc)
        return Moments(mean.reshape(shp + (3,)),
                       (M2 / (n - 1)).reshape(shp + (3, 3)), n, geom.k,
                       geom.theta.copy())

    def exact(self):
        """Moments implied exactly by the discrete model (no Monte Carlo)."""
        geom, P, dt = self.geom, self.u0.size, self.dt
        Kre, Kim = self.Kr[:P], self.Kr[P:]
        C = np.empty((P, 2, 2))
        C[:, 0, 0] = dt * np.sum(Kre * Kre, 1)
        C[:, 1, 1] = dt * np.sum(Kim * Kim, 1)
        C[:, 0, 1] = C[:, 1, 0] = dt * np.sum(Kre * Kim, 1)
        shp = (geom.m, geom.n_per_arc)
        return exact_gaussian_moments(self.u0.reshape(shp), C.reshape(shp + (2, 2)), geom)


def simulate(g, sigma, geom, n_samples, seed, dt=None, stream=(0,),
             block=256, threads=1):
    """One-shot Monte Carlo; see Simulator.run."""
    return Simulator(g, sigma, geom, dt).run(n_samples, seed, stream, block, threads)


def exact_gaussian_moments(mu, C, geom):
    """Moments of (|u|^2, Re u, Im u) for u with mean mu and 2x2 covariance C.

    mu: complex (m, N); C: (m, N, 2, 2).
    """
    mu = np.asarray(mu, complex)
    C = np.asarray(C, float)
    mv = np.stack([mu.real, mu.imag], -1)
    Cm = np.einsum("...ij,...j->...i", C, mv)
    trC = np.trace(C, axis1=-2, axis2=-1)
    trC2 = np.einsum("...ij,...ji->...", C, C)
    mean = np.stack([trC + np.abs(mu) ** 2, mu.real, mu.imag], -1)
    cov = np.empty(mu.shape + (3, 3))
    cov[..., 0, 0] = 2.0 * trC2 + 4.0 * np.einsum("...i,...i->...", mv, Cm)
    cov[..., 0, 1:] = 2.0 * Cm
    cov[..., 1:, 0] = 2.0 * Cm
    cov[..., 1:, 1:] = C
    return Moments(mean, cov, np.inf, geom.k, geom.theta.copy())


def exact_moments(g, sigma, geom, dt=None):
    """Moments implied exactly by the discrete model (no Monte Carlo)."""
    return Simulator(g, sigma, geom, dt).exact()


def moments_from_samples(samples, geom):
    """Sample Moments (divisor n - 1) from a list of FieldSample."""
    U = np.stack([s.u for s in samples])
    X = np.stack([np.abs(U) ** 2, U.real, U.imag], -1)      # (n, m, N, 3)
    n = X.shape[0]
    mu = X.mean(0)
    D = X - mu
    cov = np.einsum("spni,spnj->pnij", D, D) / (n - 1)
    return Moments(mu, cov, float(n), geom.k, geom.theta.copy())


STAT_FIELDS = ("abs_E_u", "E_abs_u_sq", "Var_abs_u_sq", "E_abs_v_sq",
               "Var_abs_v_sq", "Cov_u_v", "Cov_v1_v2", "abs_E_v")


@dataclass(eq=False)
class StatsBundle:
    k: float
    theta: np.ndarray            # (m, N)
    n_samples: float
    E_u: np.ndarray              # (m, N) complex
    E_abs_u_sq: np.ndarray       # (m, N)
    Var_abs_u_sq: np.ndarray     # (m, N)
    E_abs_v_sq: np.ndarray       # (m, N, 2)
    Var_abs_v_sq: np.ndarray     # (m, N, 2)
    Cov_u_v: np.ndarray          # (m, N, 2)  Cov(|u|^2, |v_l|^2)
    Cov_v1_v2: np.ndarray        # (m, N)
    abs_E_u: np.ndarray          # (m, N)
    abs_E_v: np.ndarray          # (m, N, 2)
    c: np.ndarray                # (m, 2) scaling used to form v
    debug: Optional[dict] = field(default=None)

    @property
    def shape(self):
        return self.theta.shape

    def jensen_ok(self, nsig=3.0):
        """E|u|^2 >= |E u|^2 - nsig * se, with se from Var(|u|^2)."""
        se = np.sqrt(np.maximum(self.Var_abs_u_sq, 0) / self.n_samples)
        return bool(np.all(self.E_abs_u_sq >= np.abs(self.E_u) ** 2
                           - nsig * se - 1e-12 * np.abs(self.E_abs_u_sq)))


def stats_from_moments(mom, geom, c, debug=False):
    """StatsBundle for reference amplitudes c (array (m, 2) or scalar)."""
    c = np.broadcast_to(np.asarray(c, dtype=float), (geom.m, 2)).copy()
    phi = reference_fields(geom, c)
    mean, cov = mom.mean, mom.cov
    # |v_l|^2 = |u|^2 + a_l . (Re u, Im u) + |phi_l|^2
    coef = np.zeros(phi.shape[:2] + (2, 3))
    coef[..., 0] = 1.0
    coef[..., 1] = 2.0 * phi.real
    coef[..., 2] = 2.0 * phi.imag
    Eu = mean[..., 1] + 1j * mean[..., 2]
    Ev = Eu[..., None] + phi
    e_v = np.einsum("pnli,pni->pnl", coef, mean) + np.abs(phi) ** 2
    cv = np.einsum("pnli,pnij->pnlj", coef, cov)      # Cov(|v_l|^2, triple)
    var_v = np.einsum("pnlj,pnlj->pnl", cv, coef)
    cov_uv = cv[..., 0]
    cov_v12 = np.einsum("pnj,pnj->pn", cv[:, :, 0, :], coef[:, :, 1, :])
    dbg = None
    if debug:
        dbg = {"Var_re": cov[..., 1, 1].copy(), "Var_im": cov[..., 2, 2].copy(),
               "Cov_re_im": cov[..., 1, 2].copy()}
    return StatsBundle(mom.k, mom.theta, mom.n, Eu, mean[..., 0].copy(),
                       cov[..., 0, 0].copy(), e_v, var_v, cov_uv, cov_v12,
                       np.abs(Eu), np.abs(Ev), c, dbg)


def estimate_statistics(samples, geom, c):
    """Sample statistics (divisor n - 1) from a list of FieldSample."""
    n = len(samples)
    if n < 2:
        raise ValueError("need at least 2 samples")
    U = np.stack([s.u for s in samples])
    V = np.stack([s.v for s in samples])
    au = np.abs(U) ** 2
    av = np.abs(V) ** 2

    def cov(x, y):
        return ((x - x.mean(0)) * (y - y.mean(0))).sum(0) / (n - 1)

    Eu = U.mean(0)
    dbg = {"Var_re": cov(U.real, U.real), "Var_im": cov(U.imag, U.imag),
           "Cov_re_im": cov(U.real, U.imag)}
    c = np.broadcast_to(np.asarray(c, dtype=float), (geom.m, 2)).copy()
    return StatsBundle(
        geom.k, geom.theta.copy(), n, Eu, au.mean(0), cov(au, au),
        av.mean(0), cov(av, av), cov(au[..., None], av),
        cov(av[..., 0], av[..., 1]), np.abs(Eu), np.abs(V.mean(0)), c, dbg)


def perturb(stats, epsilon, rng):
    """Multiplicative noise s -> (1 + eps r) s on every phaseless statistic.

    Phase data (E_u) and debug moments are left untouched. No clamping.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    if epsilon == 0:
        return stats
    new = {}
    for name in STAT_FIELDS:
        s = getattr(stats, name)
        new[name] = s * (1.0 + epsilon * rng.standard_normal(s.shape))
    return replace(stats, **new)
