"""Measurement geometry: circle of radius R split into m arcs, two reference
point sources per arc, and uniformly spaced measurement points.
"""
import math
import warnings
from dataclasses import dataclass, field

import numpy as np


class PolicyError(ValueError):
    """Geometry violates the parameter-selection policy."""

    def __init__(self, msg, j=None, ell=None, k=None):
        super().__init__(msg)
        self.j, self.ell, self.k = j, ell, k


def k_star(a):
    """The small wavenumber pi/(30 a)."""
    return math.pi / (30.0 * a)


@dataclass(frozen=True)
class Wavenumber:
    k: float
    is_small: bool = False


def make_wavenumber(k, a=1.0, rtol=1e-12):
    """Classify k against the admissible set {k*} U [pi/a, inf)."""
    k = float(k)
    if not k > 0 or not math.isfinite(k):
        raise PolicyError("wavenumber must be positive and finite", k=k)
    ks = k_star(a)
    if abs(k - ks) <= rtol * ks:
        return Wavenumber(ks, True)
    if k < math.pi / a * (1 - rtol):
        raise PolicyError("k=%g is neither k* nor >= pi/a" % k, k=k)
    return Wavenumber(k, False)


@dataclass(frozen=True)
class GeometryConfig:
    a: float = 1.0
    tau: float = 6.0
    m: int = 10
    n_per_arc: int = 120
    wavenumbers: tuple = ()
    policy: str = "paper"          # "paper" | "free"

    def validate(self):
        if self.policy not in ("paper", "free"):
            raise PolicyError("unknown policy %r" % self.policy)
        if not self.a > 0:
            raise PolicyError("a must be positive")
        if int(self.m) < 1 or int(self.n_per_arc) < 2:
            raise PolicyError("need m >= 1 and n_per_arc >= 2")
        bad = int(self.m) < 10 or self.tau < 6
        if bad and self.policy == "paper":
            raise PolicyError("paper policy needs m >= 10 and tau >= 6")
        if bad:
            warnings.warn("geometry outside the paper policy (m=%d, tau=%g)"
                          % (self.m, self.tau))
        return self


@dataclass(frozen=True, eq=False)
class Geometry:
    a: float
    tau: float
    m: int
    n_per_arc: int
    k: float
    is_small: bool
    R: float
    lambdas: np.ndarray            # (m, 2)
    ref_points: np.ndarray         # (m, 2, 2): arc, ell, xy
    arcs: np.ndarray               # (m, 2) angular intervals [start, end)
    theta: np.ndarray              # (m, N) measurement angles
    policy: str = "paper"
    notes: tuple = field(default=())

    @property
    def meas_points(self):
        return self.R * np.stack([np.cos(self.theta), np.sin(self.theta)], -1)

    @property
    def centers(self):
        """Angles nu_{2j-1} of the reference directions, shape (m,)."""
        return nu(2 * np.arange(1, self.m + 1) - 1, self.m)

    @property
    def n_points(self):
        return self.m * self.n_per_arc

    def distances(self):
        """r_{j,ell}(x) for all points: array (m, N, 2)."""
        lam = self.lambdas[:, None, :]
        cth = np.cos(self.theta - self.centers[:, None])[..., None]
        return self.R * np.sqrt(1.0 + lam * lam - 2.0 * lam * cth)

    def to_json(self):
        return {
            "a": self.a, "tau": self.tau, "m": self.m,
            "n_per_arc": self.n_per_arc, "R": self.R,
            "lambdas": self.lambdas.tolist(),
            "ref_points": self.ref_points.tolist(),
            "arcs": self.arcs.tolist(),
        }


def nu(mu, m):
    return np.asarray(mu) * math.pi / m


def policy_lambdas(k, R, is_small):
    """(lambda_1, lambda_2) from the parameter policy."""
    if is_small:
        return 0.5, -1.5
    return 0.5, 0.5 + math.pi / (2.0 * k * R)


def build_geometry(cfg, k, lambda_override=None):
    """Geometry for one wavenumber.

    ``k`` may be a float or a Wavenumber. ``lambda_override=(l1, l2)``
    replaces the policy values (used to inject faults in free mode).
    """
    cfg.validate()
    a, m, n = float(cfg.a), int(cfg.m), int(cfg.n_per_arc)
    if isinstance(k, Wavenumber):
        wk = k
    elif cfg.policy == "paper":
        wk = make_wavenumber(k, a)
    else:
        ks = k_star(a)
        wk = Wavenumber(float(k), abs(float(k) - ks) <= 1e-12 * ks)
    R = 6.0 * a if wk.is_small else float(cfg.tau) * a
    l1, l2 = lambda_override if lambda_override is not None \
        else policy_lambdas(wk.k, R, wk.is_small)
    notes = []
    if wk.is_small:
        notes.append("k*: |lambda_2| = 1.5, reference point outside B_R")
    lo = math.sqrt(2.0) * a / R
    for ell, lam in ((1, l1), (2, l2)):
        ok = lo <= abs(lam) < 1.0
        exempt = wk.is_small and ell == 2 and lam == -1.5 \
            and lambda_override is None
        if not ok and not exempt:
            msg = ("lambda_{j,%d}=%g outside [%g, 1) for k=%g"
                   % (ell, lam, lo, wk.k))
            if cfg.policy == "paper":
                raise PolicyError(msg, j=1, ell=ell, k=wk.k)
            warnings.warn(msg)
            notes.append(msg)
    lambdas = np.tile([l1, l2], (m, 1)).astype(float)
    cen = nu(2 * np.arange(1, m + 1) - 1, m)
    dirs = np.stack([np.cos(cen), np.sin(cen)], -1)
    ref = lambdas[:, :, None] * R * dirs[:, None, :]
    for j in range(m):
        for ell in range(2):
            if np.max(np.abs(ref[j, ell])) <= a:
                msg = "reference point z_{%d,%d} inside the source square" \
                    % (j + 1, ell + 1)
                if cfg.policy == "paper":
                    raise PolicyError(msg, j=j + 1, ell=ell + 1, k=wk.k)
                warnings.warn(msg)
    starts = nu(2 * np.arange(m), m)
    arcs = np.stack([starts, starts + 2 * math.pi / m], -1)
    theta = starts[:, None] + np.arange(n)[None, :] * (2 * math.pi / m) / n
    return Geometry(a, float(cfg.tau), m, n, wk.k, wk.is_small, R, lambdas,
                    ref, arcs, theta, cfg.policy, tuple(notes))


def r_distance_theta(geom, j, ell, theta):
    """r_{j,ell} at polar angle(s) theta on arc j; j in 1..m, ell in {1, 2}."""
    lam = geom.lambdas[j - 1, ell - 1]
    c = nu(2 * j - 1, geom.m)
    th = np.asarray(theta, dtype=float)
    return geom.R * np.sqrt(1.0 + lam * lam - 2.0 * lam * np.cos(th - c))


def r_distance(geom, j, ell, x):
    """|x - z_{j,ell}| from the closed form for point(s) x of shape (..., 2)."""
    x = np.asarray(x, dtype=float)
    return r_distance_theta(geom, j, ell, np.arctan2(x[..., 1], x[..., 0]))
