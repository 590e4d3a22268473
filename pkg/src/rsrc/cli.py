"""Command line driver: ``rsrc simulate | retrieve | invert | verify``.

Exit codes: 0 success, 1 invalid configuration or input, 2 verification
failure, 3 I/O error. Output files carry a provenance header (config hash,
seed, version) and contain no timestamps, so reruns with the same seed are
byte-identical.
"""
import argparse
import logging
import os
import sys

import numpy as np

from . import __version__, config as cfgmod, experiments as ex, io, verify as vmod
from . import phase_retrieval as pr
from .geometry import PolicyError

log = logging.getLogger("rsrc")

EXIT_OK, EXIT_VALIDATION, EXIT_SUITE, EXIT_IO = 0, 1, 2, 3
THREADS_ENV = "HELIOS_RSRC_THREADS"


def resolve_threads(arg):
    if arg is not None:
        n = int(arg)
    else:
        env = os.environ.get(THREADS_ENV)
        n = int(env) if env else 1
    if n < 1:
        raise cfgmod.ConfigError("--threads must be >= 1")
    return n


def _prov(ec):
    return io.Provenance(ec.hash(), ec.seed)


def _bundle_path(out, ki, run, eps):
    return os.path.join(out, "simulate", "bundles",
                        "k%d_run%d_eps%s.csv" % (ki, run, ex.fmt_eps(eps)))


def _closed(ec):
    return ec.raw["run"].get("mode") == "closed-loop"


# -- subcommands --------------------------------------------------------------

def cmd_simulate(ec, out, threads=1):
    prov = _prov(ec)
    cases = ex.pr_setup(ec)
    n_runs = int(ec.ret.get("n_runs", 1))
    eps = [float(e) for e in ec.ret["epsilons"]]
    if 0.0 not in eps:
        eps = [0.0] + eps
    files = []
    for ki, case in enumerate(cases):
        io.write_json(os.path.join(out, "simulate", "geometry_k%d.json" % ki),
                      case.geom.to_json(), prov)
        for r in range(n_runs):
            st, bundles = ex.pr_bundles(ec, case, ki, r, _closed(ec), threads)
            bundles[0.0] = st
            for e in eps:
                p = _bundle_path(out, ki, r, e)
                io.write_stats_csv(p, bundles[e], prov)
                files.append(os.path.relpath(p, out))
        log.info("simulated k=%g (%d runs)", case.k, n_runs)
    manifest = {"wavenumbers": [str(k) for k in ec.ret["wavenumbers"]],
                "k_values": [c.k for c in cases], "epsilons": eps, "n_runs": n_runs,
                "files": files, "config": ec.to_json()}
    io.write_json(os.path.join(out, "simulate", "manifest.json"), manifest, prov)
    return EXIT_OK


def cmd_retrieve(ec, out, threads=1):
    prov = _prov(ec)
    man_path = os.path.join(out, "simulate", "manifest.json")
    if not os.path.exists(man_path):
        raise FileNotFoundError("no bundles under %s; run 'simulate' first" % out)
    man = io.read_json(man_path)
    if man["provenance"]["config_sha256"] != ec.hash():
        raise cfgmod.ConfigError("bundles were produced with a different configuration")
    cases = ex.pr_setup(ec)
    eps = [float(e) for e in man["epsilons"]]
    n_runs = int(man["n_runs"])
    variant = ec.ret.get("variant", "f")
    err = np.empty((n_runs, len(eps), len(cases), 2))
    fails = []
    for ki, case in enumerate(cases):
        for r in range(n_runs):
            for ei, e in enumerate(eps):
                st, _ = io.read_stats_csv(_bundle_path(out, ki, r, e))
                rs, err[r, ei, ki] = ex.pr_errors(st, case, variant)
                fails += [dict(f, run=r, eps=e) for f in rs.failures]
                if r == 0:
                    io.write_retrieved_csv(os.path.join(
                        out, "retrieve", "retrieved_k%d_eps%s.csv" % (ki, ex.fmt_eps(e))),
                        rs, prov)
    mean = err.mean(axis=0)
    cols = ["eps"] + list(man["wavenumbers"])
    for idx, name in ((0, "table_E.csv"), (1, "table_Var.csv")):
        rows = [[e] + list(mean[ei, :, idx]) for ei, e in enumerate(eps)]
        io.write_csv(os.path.join(out, "retrieve", name), cols, rows, prov)
    runs = [[e, r] + list(err[r, ei, :, 0]) + list(err[r, ei, :, 1])
            for ei, e in enumerate(eps) for r in range(n_runs)]
    io.write_csv(os.path.join(out, "retrieve", "runs.csv"),
                 ["eps", "run"] + ["E_err_%s" % w for w in man["wavenumbers"]]
                 + ["Var_err_%s" % w for w in man["wavenumbers"]], runs, prov)
    io.write_json(os.path.join(out, "retrieve", "summary.json"),
                  {"epsilons": eps, "wavenumbers": man["wavenumbers"],
                   "E_err": mean[..., 0], "Var_err": mean[..., 1], "failures": fails}, prov)
    return EXIT_OK


def cmd_invert(ec, out, threads=1):
    prov = _prov(ec)
    setup = ex.inversion_setup(ec)
    eps = [float(e) for e in ec.inv["epsilons"]]
    shape = list(setup.inv_grid.shape)
    io.write_grid_csv(os.path.join(out, "invert", "truth_g1.csv"), setup.truth_g, prov)
    io.write_grid_csv(os.path.join(out, "invert", "truth_sigma1.csv"), setup.truth_s, prov)
    cache, table = {}, []
    for _, short, _, _ in ex.LABELS:
        row = [ex.label_of(short)]
        for e in eps:
            tp = None
            if ec.chain.get("trace", False):
                tp = os.path.join(out, "invert", "trace", "%s_eps%s.bin" % (short, ex.fmt_eps(e)))
                os.makedirs(os.path.dirname(tp), exist_ok=True)
            res = ex.invert_one(ec, setup, short, e, threads, cache, tp)
            neg = int(np.sum(res.mean_field < 0)) if short.startswith("F") else 0
            io.write_posterior(os.path.join(out, "invert", "posterior",
                                            "%s_eps%s" % (short, ex.fmt_eps(e))),
                               res, prov, {"label": ex.label_of(short), "eps": e,
                                           "grid": shape, "negative_cells": neg})
            row.append(res.rel_l2_error)
            log.info("%s eps=%g err=%.4f acc=%.3f", short, e, res.rel_l2_error,
                     res.acceptance_rate)
        table.append(row)
    io.write_csv(os.path.join(out, "invert", "inversion_errors.csv"),
                 ["row"] + ["eps=%g" % e for e in eps], table, prov)
    return EXIT_OK


def cmd_verify(ec, out, threads=1, inject_fault=False):
    ks = ec.retrieval_ks()
    rep = vmod.run_suite(ec.seed, ks, inject_fault=inject_fault)
    for c in rep["checks"]:
        c["seconds"] = None          # timings would break byte-identical reruns
    io.write_json(os.path.join(out, "verify", "report.json"), rep, _prov(ec))
    for c in rep["checks"]:
        print("%-20s %s  metric=%.4g  threshold=%.4g"
              % (c["name"], "PASS" if c["passed"] else "FAIL", c["metric"], c["threshold"]))
    return EXIT_OK if rep["passed"] else EXIT_SUITE


COMMANDS = {"simulate": cmd_simulate, "retrieve": cmd_retrieve,
            "invert": cmd_invert, "verify": cmd_verify}


def build_parser():
    p = argparse.ArgumentParser(prog="rsrc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version="rsrc " + __version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="TOML or JSON configuration file")
        s.add_argument("--seed", type=int)
        s.add_argument("--threads", type=int,
                       help="worker threads (default $%s or 1)" % THREADS_ENV)
        s.add_argument("--out", default="out", help="output directory")
        s.add_argument("--mode", choices=("paper", "desk", "closed-loop"))
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "verify":
            s.add_argument("--inject-fault", action="store_true",
                           help="scan a deliberately corrupted geometry")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        threads = resolve_threads(args.threads)
        ec = cfgmod.load_config(args.config, args.mode, args.seed)
        kw = {"inject_fault": args.inject_fault} if args.command == "verify" else {}
        return COMMANDS[args.command](ec, args.out, threads, **kw)
    except (cfgmod.ConfigError, PolicyError, pr.SingularSystemError, ValueError) as e:
        print("rsrc: error: %s" % e, file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print("rsrc: I/O error: %s" % e, file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
