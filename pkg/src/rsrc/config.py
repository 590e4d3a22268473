"""Experiment configuration: TOML (or an equivalent JSON mirror) with
shipped presets ``paper`` and ``desk``.
"""
import copy
import json
import math
import os
import re
from dataclasses import dataclass
from importlib import resources

try:
    import tomllib
except ModuleNotFoundError:          # python < 3.11
    import tomli as tomllib

from .geometry import GeometryConfig, k_star
from .io import config_hash

PRESETS = ("paper", "desk")


class ConfigError(ValueError):
    pass


def parse_wavenumber(v, a=1.0):
    """Number, "kstar", "pi" or "<x>pi" (x times pi / a)."""
    if isinstance(v, (int, float)):
        return float(v)
    s = str(v).strip().lower().replace(" ", "")
    if s in ("kstar", "k*"):
        return k_star(a)
    mt = re.fullmatch(r"([0-9]*\.?[0-9]*)\*?pi", s)
    if mt:
        x = float(mt.group(1)) if mt.group(1) else 1.0
        return x * math.pi / a
    try:
        return float(s)
    except ValueError:
        raise ConfigError("cannot parse wavenumber %r" % v)


def load_raw(path):
    path = str(path)
    with open(path, "rb") as fh:
        if path.endswith(".json"):
            return json.load(fh)
        return tomllib.load(fh)


def preset_path(name, ext="toml"):
    if name not in PRESETS:
        raise ConfigError("unknown preset %r" % name)
    return str(resources.files("rsrc") / "presets" / ("%s.%s" % (name, ext)))


def _req(d, key, where):
    if key not in d:
        raise ConfigError("missing %s.%s" % (where, key))
    return d[key]


@dataclass
class ExperimentConfig:
    raw: dict

    @property
    def seed(self):
        return int(self.raw["run"]["seed"])

    @property
    def name(self):
        return self.raw["run"].get("name", "custom")

    @property
    def a(self):
        return float(self.raw["geometry"]["a"])

    def geometry_config(self, n_per_arc=None):
        g = self.raw["geometry"]
        return GeometryConfig(float(g["a"]), float(g["tau"]), int(g["m"]),
                              int(n_per_arc or g["n_per_arc"]), (),
                              g.get("policy", "paper"))

    @property
    def sim(self):
        return self.raw["simulation"]

    @property
    def ret(self):
        return self.raw["retrieval"]

    @property
    def inv(self):
        return self.raw["inversion"]

    @property
    def chain(self):
        return self.raw["chain"]

    def retrieval_ks(self):
        return [parse_wavenumber(k, self.a) for k in self.ret["wavenumbers"]]

    def inversion_ks(self):
        return [parse_wavenumber(k, self.a) for k in self.inv["wavenumbers"]]

    def dt(self):
        v = self.sim.get("dt", "auto")
        return None if v in ("auto", None) else float(v)

    def hash(self):
        return config_hash(self.raw)

    def with_seed(self, seed):
        raw = copy.deepcopy(self.raw)
        raw["run"]["seed"] = int(seed)
        return ExperimentConfig(raw)

    def to_json(self):
        return copy.deepcopy(self.raw)


def validate(raw):
    for sec in ("run", "geometry", "simulation", "retrieval", "inversion", "chain"):
        if sec not in raw:
            raise ConfigError("missing section [%s]" % sec)
    g = raw["geometry"]
    for key in ("a", "tau", "m", "n_per_arc"):
        _req(g, key, "geometry")
    try:
        GeometryConfig(float(g["a"]), float(g["tau"]), int(g["m"]),
                       int(g["n_per_arc"]), (), g.get("policy", "paper")).validate()
    except ValueError as e:
        raise ConfigError(str(e))
    sim, inv = raw["simulation"], raw["inversion"]
    sg, ig = _req(sim, "grid", "simulation"), _req(inv, "grid", "inversion")
    if len(sg) != 2 or len(ig) != 2 or min(sg + ig) < 1:
        raise ConfigError("grids must be [n1, n2] with positive entries")
    mode = raw["run"].get("mode", "desk")
    if mode == "paper" and not (ig[0] < sg[0] and ig[1] < sg[1]):
        raise ConfigError("paper mode needs an inversion grid strictly coarser "
                          "than the simulation grid")
    if int(_req(sim, "n_mc", "simulation")) < 2:
        raise ConfigError("simulation.n_mc must be >= 2")
    dt = sim.get("dt", "auto")
    if dt != "auto" and not float(dt) > 0:
        raise ConfigError("simulation.dt must be 'auto' or positive")
    ret = raw["retrieval"]
    for e in list(ret.get("epsilons", [])) + list(inv.get("epsilons", [])):
        if float(e) < 0:
            raise ConfigError("noise levels must be nonnegative")
    a = float(g["a"])
    for k in list(ret["wavenumbers"]) + list(inv["wavenumbers"]):
        if not parse_wavenumber(k, a) > 0:
            raise ConfigError("wavenumbers must be positive")
    if ret.get("variant", "f") not in ("f", "ano_f"):
        raise ConfigError("retrieval.variant must be 'f' or 'ano_f'")
    if ret.get("scaling", "unit") not in ("unit", "paper"):
        raise ConfigError("retrieval.scaling must be 'unit' or 'paper'")
    if inv.get("data_route", "operator") not in ("operator", "pipeline"):
        raise ConfigError("inversion.data_route must be 'operator' or 'pipeline'")
    nj_inv = int(inv.get("n_per_arc", g["n_per_arc"]))
    if nj_inv < 2:
        raise ConfigError("inversion.n_per_arc must be >= 2")
    ch = raw["chain"]
    if not 0 <= int(ch["burn_in"]) < int(ch["n_samples"]):
        raise ConfigError("chain needs 0 <= burn_in < n_samples")
    for key in ("prior_g", "prior_sigma", "prior_sigma12"):
        p = _req(inv, key, "inversion")
        if not (float(p["gamma"]) > 0 and float(p["d"]) > 0 and 0 < float(p["beta"]) <= 1):
            raise ConfigError("inversion.%s needs gamma, d > 0 and beta in (0, 1]" % key)
    if ch.get("init", "zero") not in ("zero", "map"):
        raise ConfigError("chain.init must be 'zero' or 'map'")
    return raw


def load_config(path=None, mode=None, seed=None):
    """Load ``path`` or the preset for ``mode``; ``mode`` and ``seed``
    override the file. "closed-loop" runs on the desk preset.
    """
    if path is None:
        preset = "desk" if mode in (None, "closed-loop") else mode
        raw = load_raw(preset_path(preset))
    else:
        if not os.path.exists(path):
            raise FileNotFoundError(path)
        raw = load_raw(path)
    raw = copy.deepcopy(raw)
    raw.setdefault("run", {})
    if mode is not None:
        if mode not in ("paper", "desk", "closed-loop"):
            raise ConfigError("unknown mode %r" % mode)
        raw["run"]["mode"] = mode
    if seed is not None:
        raw["run"]["seed"] = int(seed)
    validate(raw)
    return ExperimentConfig(raw)
