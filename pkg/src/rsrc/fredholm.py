"""Dense discretised Fredholm operators from source grids to retrieval data.

Mean operator row at x (arc j, reference l):
    Y_0(k r_l) * int Re G g  -  J_0(k r_l) * int Im G g
Variance operator row for (l1, l2):
    Y1 Y2 int ReG^2 s + J1 J2 int ImG^2 s - (Y1 J2 + Y2 J1) int ReG ImG s
with s = sigma^2 and all integrals by the tensor trapezoid rule.
"""
import json
from dataclasses import dataclass, field

import numpy as np

from . import specfun
from .forward import green_matrix
from .phase_retrieval import coefficients

PAIRS = ((1, 1), (2, 2), (1, 2))


@dataclass(eq=False)
class DiscreteOperator:
    matrix: np.ndarray
    row_meta: dict            # name -> array of length n_rows
    col_weight: np.ndarray    # trapezoid weight per node
    kind: str                 # "mean" | "variance" | "raw" | "identity"
    grid: object = None
    info: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.matrix.shape

    def take_rows(self, idx):
        idx = np.asarray(idx)
        return DiscreteOperator(self.matrix[idx], {k: v[idx] for k, v in self.row_meta.items()},
                                self.col_weight, self.kind, self.grid, dict(self.info))


def _row_meta(geom, tag):
    m, n = geom.theta.shape
    jj, ii = np.meshgrid(np.arange(1, m + 1), np.arange(n), indexing="ij")
    meta = {"j": jj.ravel(), "i": ii.ravel(), "theta": geom.theta.ravel(),
            "k": np.full(m * n, geom.k)}
    meta.update({k: np.full(m * n, v) for k, v in tag.items()})
    return meta


def _check_outside(x, a):
    x = np.atleast_2d(x)
    if np.any(np.max(np.abs(x), axis=-1) <= a):
        raise ValueError("measurement point inside the source square")


def kernel_row_mean(x, k, grid):
    """Weighted rows (w ReG, w ImG) with r1 . g ~ int ReG g, r2 . g ~ int ImG g."""
    x = np.asarray(x, float)
    _check_outside(x, grid.a)
    d = x[..., None, :] - grid.nodes()
    G = specfun.green_r(k, np.hypot(d[..., 0], d[..., 1]))
    w = grid.weights().ravel()
    return G.real * w, G.imag * w


def assemble_mean_operator(geom, grid, ell):
    if ell not in (1, 2):
        raise ValueError("ell must be 1 or 2")
    _check_outside(geom.meas_points.reshape(-1, 2), grid.a)
    G = green_matrix(geom, grid)
    w = grid.weights().ravel()
    Y1, J1, Y2, J2 = (q.ravel() for q in coefficients(geom))
    Y, J = (Y1, J1) if ell == 1 else (Y2, J2)
    M = (Y[:, None] * G.real - J[:, None] * G.imag) * w
    return DiscreteOperator(M, _row_meta(geom, {"ell": ell}), w, "mean", grid)


def raw_variance_rows(geom, grid):
    """Weighted rows for Var Re u, Var Im u, Cov(Re u, Im u): (P, size) each."""
    _check_outside(geom.meas_points.reshape(-1, 2), grid.a)
    G = green_matrix(geom, grid)
    w = grid.weights().ravel()
    return (G.real ** 2) * w, (G.imag ** 2) * w, (G.real * G.imag) * w


def assemble_variance_operator(geom, grid, l1, l2, raw=None):
    if (l1, l2) not in PAIRS:
        raise ValueError("(l1, l2) must be one of %s" % (PAIRS,))
    vr, vi, cv = raw_variance_rows(geom, grid) if raw is None else raw
    Y1, J1, Y2, J2 = (q.ravel() for q in coefficients(geom))
    Ya, Ja = (Y1, J1) if l1 == 1 else (Y2, J2)
    Yb, Jb = (Y1, J1) if l2 == 1 else (Y2, J2)
    M = ((Ya * Yb)[:, None] * vr + (Ja * Jb)[:, None] * vi
         - (Ya * Jb + Yb * Ja)[:, None] * cv)
    return DiscreteOperator(M, _row_meta(geom, {"l1": l1, "l2": l2}),
                            grid.weights().ravel(), "variance", grid)


def identity_operator(grid):
    n = grid.size
    return DiscreteOperator(np.eye(n), {"node": np.arange(n)}, np.ones(n),
                            "identity", grid)


def apply(op, vec):
    v = np.asarray(getattr(vec, "values", vec), float).ravel()
    if v.size != op.matrix.shape[1]:
        raise ValueError("dimension mismatch: %d columns, %d values"
                         % (op.matrix.shape[1], v.size))
    return op.matrix @ v


def stack(ops):
    """Row-wise stack (multi-frequency system)."""
    keys = set(ops[0].row_meta)
    for o in ops[1:]:
        keys &= set(o.row_meta)
        if o.matrix.shape[1] != ops[0].matrix.shape[1]:
            raise ValueError("column mismatch in stack")
    meta = {k: np.concatenate([o.row_meta[k] for o in ops]) for k in sorted(keys)}
    return DiscreteOperator(np.vstack([o.matrix for o in ops]), meta,
                            ops[0].col_weight, ops[0].kind, ops[0].grid)


def export_operator(op, path, provenance=None):
    """Write ``path``.bin (row-major float64) and ``path``.json (metadata)."""
    path = str(path)
    np.ascontiguousarray(op.matrix, dtype="<f8").tofile(path + ".bin")
    meta = {"rows": int(op.shape[0]), "cols": int(op.shape[1]),
            "dtype": "float64", "byte_order": "little", "layout": "row-major",
            "kind": op.kind,
            "grid": None if op.grid is None else
            {"a": op.grid.a, "n1": op.grid.n1, "n2": op.grid.n2},
            "row_meta": {k: np.asarray(v).tolist() for k, v in op.row_meta.items()},
            "col_weight": np.asarray(op.col_weight).tolist()}
    if provenance is not None:
        meta["provenance"] = provenance
    with open(path + ".json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)


def load_operator(path):
    path = str(path)
    with open(path + ".json") as fh:
        meta = json.load(fh)
    M = np.fromfile(path + ".bin", dtype="<f8").reshape(meta["rows"], meta["cols"])
    return M, meta
