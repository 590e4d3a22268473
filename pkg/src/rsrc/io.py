"""File formats: CSV with a commented provenance header, JSON with a
``provenance`` object, and the bundle/retrieval/posterior schemas.

All floats are written with 17 significant digits so files round-trip
exactly and reruns are byte-identical.
"""
import csv
import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from . import __version__
from .forward import StatsBundle

STATS_COLUMNS = (
    "arc", "theta", "k", "n_samples", "E_u_re", "E_u_im", "E_abs_u_sq",
    "Var_abs_u_sq", "E_abs_v1_sq", "E_abs_v2_sq", "Var_abs_v1_sq",
    "Var_abs_v2_sq", "Cov_u_v1", "Cov_u_v2", "Cov_v1_v2", "abs_E_u",
    "abs_E_v1", "abs_E_v2", "c1", "c2")

RETRIEVED_COLUMNS = ("j", "theta", "k", "E_re", "E_im", "Var_re", "Var_im",
                     "Cov", "detA", "detD")


@dataclass(frozen=True)
class Provenance:
    config_hash: str
    seed: int
    version: str = __version__

    def as_dict(self):
        return {"config_sha256": self.config_hash, "seed": int(self.seed),
                "version": self.version}

    def header_lines(self):
        return ["# rsrc %s" % self.version,
                "# config_sha256: %s" % self.config_hash,
                "# seed: %d" % int(self.seed)]


def config_hash(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def fmt(x):
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    x = float(x)
    if np.isnan(x):
        return "nan"
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return "%.17g" % x


def _ensure_dir(path):
    d = os.path.dirname(str(path))
    if d:
        os.makedirs(d, exist_ok=True)


def write_csv(path, columns, rows, prov=None):
    _ensure_dir(path)
    with open(path, "w", newline="") as fh:
        if prov is not None:
            for line in prov.header_lines():
                fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def read_csv(path):
    """(header dict, column names, list of string rows)."""
    meta = {}
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            if ":" in line:
                k, v = line[1:].split(":", 1)
                meta[k.strip()] = v.strip()
        else:
            body.append(line)
    rd = list(csv.reader(body))
    return meta, rd[0], rd[1:]


def write_json(path, obj, prov=None):
    _ensure_dir(path)
    out = dict(obj)
    if prov is not None:
        out = {"provenance": prov.as_dict(), **out}
    with open(path, "w") as fh:
        json.dump(_jsonable(out), fh, indent=1, sort_keys=True)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.floating, float)):
        o = float(o)
        return o if np.isfinite(o) else fmt(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    return o


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


# -- StatsBundle --------------------------------------------------------------

def stats_rows(st):
    m, n = st.shape
    for j in range(m):
        for i in range(n):
            yield (j + 1, st.theta[j, i], st.k, st.n_samples,
                   st.E_u[j, i].real, st.E_u[j, i].imag, st.E_abs_u_sq[j, i],
                   st.Var_abs_u_sq[j, i], st.E_abs_v_sq[j, i, 0],
                   st.E_abs_v_sq[j, i, 1], st.Var_abs_v_sq[j, i, 0],
                   st.Var_abs_v_sq[j, i, 1], st.Cov_u_v[j, i, 0],
                   st.Cov_u_v[j, i, 1], st.Cov_v1_v2[j, i], st.abs_E_u[j, i],
                   st.abs_E_v[j, i, 0], st.abs_E_v[j, i, 1], st.c[j, 0],
                   st.c[j, 1])


def write_stats_csv(path, st, prov=None):
    write_csv(path, STATS_COLUMNS, stats_rows(st), prov)


def _stats_from_table(cols, A):
    ix = {c: i for i, c in enumerate(cols)}
    arcs = A[:, ix["arc"]].astype(int)
    m = int(arcs.max())
    n = len(arcs) // m

    def col(name):
        return A[:, ix[name]].reshape(m, n)

    def pair(a, b):
        return np.stack([col(a), col(b)], -1)
    c = pair("c1", "c2")[:, 0, :]
    return StatsBundle(
        float(A[0, ix["k"]]), col("theta"), float(A[0, ix["n_samples"]]),
        col("E_u_re") + 1j * col("E_u_im"), col("E_abs_u_sq"),
        col("Var_abs_u_sq"), pair("E_abs_v1_sq", "E_abs_v2_sq"),
        pair("Var_abs_v1_sq", "Var_abs_v2_sq"), pair("Cov_u_v1", "Cov_u_v2"),
        col("Cov_v1_v2"), col("abs_E_u"), pair("abs_E_v1", "abs_E_v2"), c)


def read_stats_csv(path):
    meta, cols, rows = read_csv(path)
    if tuple(cols) != STATS_COLUMNS:
        raise ValueError("unexpected StatsBundle columns in %s" % path)
    A = np.array([[float(v) for v in r] for r in rows])
    return _stats_from_table(cols, A), meta


def stats_to_json(st):
    return {"columns": list(STATS_COLUMNS),
            "rows": [list(r) for r in stats_rows(st)]}


def stats_from_json(obj):
    cols = obj["columns"]
    A = np.array([[float(v) for v in r] for r in obj["rows"]])
    return _stats_from_table(cols, A)


# -- RetrievedStats -----------------------------------------------------------

def write_retrieved_csv(path, rs, prov=None):
    m, n = rs.theta.shape
    rows = ((j + 1, rs.theta[j, i], rs.k, rs.E_re[j, i], rs.E_im[j, i],
             rs.Var_re[j, i], rs.Var_im[j, i], rs.Cov_re_im[j, i],
             rs.detA[j, i], rs.detD[j, i]) for j in range(m) for i in range(n))
    write_csv(path, RETRIEVED_COLUMNS, rows, prov)


# -- grids and posterior summaries -------------------------------------------

def write_grid_csv(path, arr, prov=None):
    arr = np.atleast_2d(arr)
    cols = ["c%d" % i for i in range(arr.shape[1])]
    write_csv(path, cols, arr, prov)


def read_grid_csv(path):
    _, _, rows = read_csv(path)
    return np.array([[float(v) for v in r] for r in rows])


def write_posterior(prefix, summary, prov=None, extra=None):
    write_grid_csv(prefix + "_mean.csv", summary.mean_field, prov)
    write_grid_csv(prefix + "_sd.csv", summary.pointwise_sd, prov)
    obj = summary.scalars()
    obj["shape"] = list(np.shape(summary.mean_field))
    if extra:
        obj.update(extra)
    write_json(prefix + ".json", obj, prov)


def read_trace(path):
    """Chain trace written by bayes.run_chain: (rows, cols) float64."""
    import struct
    with open(path, "rb") as fh:
        magic, ver, rows, cols = struct.unpack("<8sIQQ", fh.read(28))
        if magic != b"RSRCTRC1":
            raise ValueError("not a chain trace")
        data = np.frombuffer(fh.read(), dtype="<f8")
    return data.reshape(rows, cols)
