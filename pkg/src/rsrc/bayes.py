"""Gaussian prior on the inversion grid and a pCN sampler for linear
forward operators with diagonal Gaussian noise.
"""
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import fredholm


class PriorFactorizationError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class PriorSpec:
    gamma: float
    d: float
    grid: object
    jitter: Optional[float] = None       # default 1e-10 * gamma


@dataclass(eq=False)
class Prior:
    spec: PriorSpec
    C: np.ndarray
    L: np.ndarray
    jitter: float
    nodes: np.ndarray

    @property
    def dim(self):
        return self.C.shape[0]


def covariance(nodes, gamma, d):
    diff = nodes[:, None, :] - nodes[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", diff, diff)
    return gamma * np.exp(-0.5 * r2 / (d * d))


def build_prior(spec, nodes=None, max_jitter_rel=1e-8):
    """Assemble C0 on the grid nodes and Cholesky-factor it.

    The jitter starts at ``spec.jitter`` (1e-10 gamma by default) and is
    multiplied by 100 on failure, up to ``max_jitter_rel * gamma``. Duplicate
    nodes are rejected outright: any positive jitter would make their
    covariance factorisable while the field stays ill-defined.
    """
    if not (spec.gamma > 0 and spec.d > 0):
        raise ValueError("gamma and d must be positive")
    nodes = spec.grid.nodes() if nodes is None else np.asarray(nodes, float)
    diff = nodes[:, None, :] - nodes[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(dist, np.inf)
    if np.min(dist) <= 1e-12 * max(spec.d, 1.0):
        raise PriorFactorizationError("degenerate grid: coincident nodes")
    C0 = covariance(nodes, spec.gamma, spec.d)
    jit = 1e-10 * spec.gamma if spec.jitter is None else float(spec.jitter)
    cap = max_jitter_rel * spec.gamma
    while True:
        C = C0 + jit * np.eye(len(nodes))
        try:
            L = np.linalg.cholesky(C)
            if np.all(np.diag(L) > 0):
                return Prior(spec, C, L, jit, nodes)
        except np.linalg.LinAlgError:
            pass
        jit *= 100.0
        if jit > cap * (1 + 1e-12):
            raise PriorFactorizationError("Cholesky failed up to jitter %g" % cap)


def sample_prior(prior, rng, size=None):
    if size is None:
        return prior.L @ rng.standard_normal(prior.dim)
    return prior.L @ rng.standard_normal((prior.dim, size))


def potential(candidate, op, data, noise_cov):
    """Psi = 0.5 || Sigma^{-1/2} (T candidate - data) ||^2, Sigma diagonal."""
    noise_cov = np.broadcast_to(np.asarray(noise_cov, float), np.shape(data))
    if np.any(noise_cov <= 0):
        raise ValueError("noise covariance must be positive")
    M = op.matrix if hasattr(op, "matrix") else op
    r = M @ np.asarray(candidate, float).ravel() - data
    return 0.5 * float(np.sum(r * r / noise_cov))


def noise_cov_from(data, eps, floor_rel=1e-6, floor_abs=0.0):
    """(eps |d_i|)^2, floored at (floor_rel max|d|)^2 and floor_abs."""
    data = np.asarray(data, float)
    scale = np.max(np.abs(data)) if data.size else 0.0
    s = np.maximum((eps * np.abs(data)) ** 2, (floor_rel * scale) ** 2)
    s = np.maximum(s, floor_abs)
    if np.any(s <= 0):
        raise ValueError("noise covariance has zero entries; raise a floor")
    return s


def pcn_step(state, prior, beta, potential_fn, rng, psi_state=None):
    """One pCN move. Returns (next state, accepted, psi of next state)."""
    if not 0 < beta <= 1:
        raise ValueError("beta must lie in (0, 1]")
    psi0 = potential_fn(state) if psi_state is None else psi_state
    xi = prior.L @ rng.standard_normal(prior.dim)
    prop = math.sqrt(1.0 - beta * beta) * state + beta * xi
    psi1 = potential_fn(prop)
    if math.log(rng.random()) < psi0 - psi1:
        return prop, True, psi1
    return state, False, psi0


@dataclass
class ChainConfig:
    beta: float = 0.05
    n_samples: int = 20000
    burn_in: int = 2000
    seed: int = 0
    noise_cov: Optional[np.ndarray] = None
    epsilon: float = 1e-3
    noise_floor_rel: float = 1e-6
    noise_floor_abs: float = 0.0
    init: str = "zero"              # "zero" | "map"
    adapt: bool = False             # tune beta during burn-in only
    target_accept: float = 0.25
    batch: int = 1000
    trace_path: Optional[str] = None
    trace_thin: int = 100

    def validate(self):
        if not 0 < self.beta <= 1:
            raise ValueError("beta must lie in (0, 1]")
        if not 0 <= self.burn_in < self.n_samples:
            raise ValueError("need 0 <= burn_in < n_samples")
        if self.init not in ("zero", "map"):
            raise ValueError("init must be 'zero' or 'map'")
        return self


@dataclass(eq=False)
class PosteriorSummary:
    mean_field: np.ndarray
    pointwise_sd: np.ndarray
    acceptance_rate: float
    rel_l2_error: Optional[float] = None
    beta: float = None
    psi_last: float = None
    n_kept: int = 0
    extra: dict = field(default_factory=dict)

    def scalars(self):
        return {"acceptance_rate": self.acceptance_rate,
                "rel_l2_error": self.rel_l2_error, "beta": self.beta,
                "psi_last": self.psi_last, "n_kept": self.n_kept}


def rel_l2_error(est, truth):
    est = np.asarray(est, float).ravel()
    truth = np.asarray(truth, float).ravel()
    nt = np.linalg.norm(truth)
    if nt == 0:
        raise ZeroDivisionError("zero-norm truth")
    return float(np.linalg.norm(est - truth) / nt)


def posterior_mean_gaussian(prior, M, data, noise_cov):
    """Closed-form posterior mean C T^T (T C T^T + Sigma)^{-1} d."""
    CT = prior.C @ M.T
    K = M @ CT + np.diag(noise_cov)
    return CT @ np.linalg.solve(K, data)


def _open_trace(path, n_rows, dim):
    fh = open(path, "wb")
    # header: magic, version, rows, cols (little-endian)
    fh.write(struct.pack("<8sIQQ", b"RSRCTRC1", 1, n_rows, dim))
    return fh


class _Accumulator:
    """Welford mean/variance over retained states, plus optional trace."""

    def __init__(self, n, cfg):
        self.mean = np.zeros(n)
        self.m2 = np.zeros(n)
        self.cnt = 0
        self.cfg = cfg
        self.trace = None
        if cfg.trace_path:
            rows = len(range(cfg.burn_in, cfg.n_samples, cfg.trace_thin))
            self.trace = _open_trace(cfg.trace_path, rows, n)

    def push(self, i, x):
        if i < self.cfg.burn_in:
            return
        self.cnt += 1
        d = x - self.mean
        self.mean += d / self.cnt
        self.m2 += d * (x - self.mean)
        if self.trace is not None and (i - self.cfg.burn_in) % self.cfg.trace_thin == 0:
            self.trace.write(np.asarray(x, "<f8").tobytes())

    def close(self):
        if self.trace is not None:
            self.trace.close()

    def sd(self):
        return np.sqrt(self.m2 / max(self.cnt - 1, 1))


def _adapt(lb, i, a, cfg):
    if not (cfg.adapt and i < cfg.burn_in):
        return lb
    pa = 1.0 if a >= 0 else math.exp(a)
    lb += 2.0 * (pa - cfg.target_accept) / math.sqrt(i + 1.0)
    return min(0.0, max(math.log(1e-9), lb))


def run_chain(cfg, prior, op=None, data=None, truth=None, potential_fn=None,
              shape=None):
    """pCN chain; returns a PosteriorSummary.

    With ``op``/``data`` the potential is the linear-Gaussian misfit and the
    chain carries T phi along (T phi' = b T phi + beta T xi), refreshed
    exactly at every batch. With ``potential_fn`` each move is a pcn_step.
    Burn-in adaptation of beta (cfg.adapt) is a Robbins-Monro update of
    log beta towards cfg.target_accept; beta is frozen afterwards.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n = prior.dim
    if shape is None:
        shape = prior.spec.grid.shape if prior.spec.grid is not None else (n,)
    lb = math.log(cfg.beta)
    acc = 0
    box = _Accumulator(n, cfg)
    try:
        if potential_fn is not None:
            if cfg.init != "zero":
                raise ValueError("map initialisation needs a linear operator")
            x = np.zeros(n)
            psi = potential_fn(x)
            for i in range(cfg.n_samples):
                beta = math.exp(lb)
                x_new, ok, psi_new = pcn_step(x, prior, beta, potential_fn, rng, psi)
                lb = _adapt(lb, i, 0.0 if ok else -np.inf, cfg) if cfg.adapt else lb
                x, psi = x_new, psi_new
                acc += ok
                box.push(i, x)
        else:
            M = op.matrix if hasattr(op, "matrix") else np.asarray(op, float)
            data = np.asarray(data, float)
            S = cfg.noise_cov if cfg.noise_cov is not None else noise_cov_from(
                data, cfg.epsilon, cfg.noise_floor_rel, cfg.noise_floor_abs)
            S = np.broadcast_to(np.asarray(S, float), data.shape)
            if np.any(S <= 0):
                raise ValueError("noise covariance must be positive")
            iS = 1.0 / S
            TL = M @ prior.L
            x = posterior_mean_gaussian(prior, M, data, S) if cfg.init == "map" \
                else np.zeros(n)
            i = 0
            while i < cfg.n_samples:
                nb = min(cfg.batch, cfg.n_samples - i)
                E = rng.standard_normal((nb, n))
                logu = np.log(rng.random(nb))
                XI = E @ prior.L.T
                TXI = E @ TL.T
                Tx = M @ x
                r = Tx - data
                psi = 0.5 * float(np.dot(r * r, iS))
                for b in range(nb):
                    beta = math.exp(lb)
                    sb = math.sqrt(1.0 - beta * beta)
                    Tp = sb * Tx + beta * TXI[b]
                    r = Tp - data
                    psi_p = 0.5 * float(np.dot(r * r, iS))
                    a = psi - psi_p
                    if logu[b] < a:
                        x = sb * x + beta * XI[b]
                        Tx, psi = Tp, psi_p
                        acc += 1
                    lb = _adapt(lb, i, a, cfg)
                    box.push(i, x)
                    i += 1
    finally:
        box.close()
    err = None if truth is None else rel_l2_error(box.mean, truth)
    return PosteriorSummary(box.mean.reshape(shape), box.sd().reshape(shape),
                            acc / cfg.n_samples, err, math.exp(lb), float(psi),
                            box.cnt)


# -- reconstructions ----------------------------------------------------------

def _to_data(item, geom, kind, which):
    """Data vector from an array or from a StatsBundle (phaseless route)."""
    from .phase_retrieval import rhs_expectation, rhs_variance
    if isinstance(item, np.ndarray):
        return item.ravel()
    if kind == "mean":
        return rhs_expectation(item, geom)[..., which - 1].ravel()
    idx = fredholm.PAIRS.index(tuple(which))
    return rhs_variance(item, geom)[..., idx].ravel()


def reconstruct_g(data_per_k, geoms, prior, cfg, ell=1, truth=None):
    """Stack mean operators over the wavenumbers and run the chain for g."""
    grid = prior.spec.grid
    ops = [fredholm.assemble_mean_operator(g, grid, ell) for g in geoms]
    d = np.concatenate([_to_data(x, g, "mean", ell) for x, g in zip(data_per_k, geoms)])
    return run_chain(cfg, prior, fredholm.stack(ops), d, truth)


def reconstruct_sigma(data_per_k, geoms, prior, cfg, which=(1, 2), truth=None):
    """Stack variance operators for (l1, l2) and run the chain for sigma^2."""
    grid = prior.spec.grid
    ops = [fredholm.assemble_variance_operator(g, grid, *which) for g in geoms]
    d = np.concatenate([_to_data(x, g, "variance", which)
                        for x, g in zip(data_per_k, geoms)])
    return run_chain(cfg, prior, fredholm.stack(ops), d, truth)
