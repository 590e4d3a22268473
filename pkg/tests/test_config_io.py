import math

import numpy as np
import pytest

from rsrc import config, io, phase_retrieval as pr
from rsrc.geometry import GeometryConfig, build_geometry
from tiny import tiny_raw


def test_presets_load_and_mirror_json():
    for name in config.PRESETS:
        a = config.load_raw(config.preset_path(name))
        b = config.load_raw(config.preset_path(name, "json"))
        assert a == b
        config.validate(a)


def test_paper_preset_values():
    ec = config.load_config(mode="paper")
    assert ec.geometry_config().n_per_arc == 120
    assert ec.sim["grid"] == [60, 60] and ec.inv["grid"] == [30, 30]
    assert ec.inv["prior_g"] == {"gamma": 0.001, "d": 0.2, "beta": 0.05}
    assert ec.inv["prior_sigma"]["gamma"] == 0.01 and ec.inv["prior_sigma12"]["gamma"] == 0.05
    ks = ec.inversion_ks()
    np.testing.assert_allclose(ks, [(j + 82.5) * math.pi for j in range(4)])
    np.testing.assert_allclose(ec.retrieval_ks(), [math.pi / 30, math.pi, 60.5 * math.pi,
                                                   84.5 * math.pi])


def test_parse_wavenumber():
    assert config.parse_wavenumber("kstar") == pytest.approx(math.pi / 30)
    assert config.parse_wavenumber("pi") == pytest.approx(math.pi)
    assert config.parse_wavenumber("60.5pi") == pytest.approx(60.5 * math.pi)
    assert config.parse_wavenumber(2.5) == 2.5
    with pytest.raises(config.ConfigError):
        config.parse_wavenumber("fast")


@pytest.mark.parametrize("over", [
    {"simulation__n_mc": 1}, {"geometry__m": 6}, {"retrieval__variant": "g"},
    {"inversion__data_route": "magic"}, {"chain__init": "ml"},
    {"simulation__dt": -1.0}, {"retrieval__epsilons": [-0.1]}])
def test_validation_errors(over):
    with pytest.raises(config.ConfigError):
        config.validate(tiny_raw(**over))


def test_paper_mode_needs_coarser_grid():
    raw = tiny_raw(inversion__grid=[10, 10])
    raw["run"]["mode"] = "paper"
    with pytest.raises(config.ConfigError):
        config.validate(raw)


def test_overrides_and_hash():
    a = config.load_config(mode="desk")
    b = config.load_config(mode="desk", seed=5)
    assert b.seed == 5 and a.hash() != b.hash()
    assert a.hash() == config.load_config(mode="desk").hash()


def test_provenance_header(tmp_path):
    prov = io.Provenance("abc", 7)
    p = tmp_path / "x.csv"
    io.write_csv(p, ["a", "b"], [[1, 0.1], [2, float("inf")]], prov)
    meta, cols, rows = io.read_csv(p)
    assert meta["config_sha256"] == "abc" and meta["seed"] == "7"
    assert cols == ["a", "b"] and rows[1] == ["2", "inf"]
    assert p.read_text().splitlines()[0] == "# rsrc 0.1.0"


def test_stats_csv_round_trip_exact(tmp_path):
    g = build_geometry(GeometryConfig(n_per_arc=5), math.pi)
    th = g.theta
    st, _ = pr.synthetic_stats(g, np.cos(th), np.sin(th), 0.2 + 0 * th, 0.1 + 0 * th,
                               0.01 * th, c=1.3)
    io.write_stats_csv(tmp_path / "s.csv", st)
    st2, _ = io.read_stats_csv(tmp_path / "s.csv")
    for name in ("E_u", "E_abs_u_sq", "Var_abs_v_sq", "Cov_u_v", "Cov_v1_v2", "c", "theta"):
        np.testing.assert_array_equal(getattr(st, name), getattr(st2, name))
    st3 = io.stats_from_json(io.stats_to_json(st))
    np.testing.assert_array_equal(st.Var_abs_u_sq, st3.Var_abs_u_sq)


def test_golden_schemas():
    assert io.STATS_COLUMNS == (
        "arc", "theta", "k", "n_samples", "E_u_re", "E_u_im", "E_abs_u_sq",
        "Var_abs_u_sq", "E_abs_v1_sq", "E_abs_v2_sq", "Var_abs_v1_sq",
        "Var_abs_v2_sq", "Cov_u_v1", "Cov_u_v2", "Cov_v1_v2", "abs_E_u",
        "abs_E_v1", "abs_E_v2", "c1", "c2")
    assert io.RETRIEVED_COLUMNS == ("j", "theta", "k", "E_re", "E_im", "Var_re", "Var_im",
                                    "Cov", "detA", "detD")


def test_json_provenance_first(tmp_path):
    io.write_json(tmp_path / "a.json", {"z": np.float64(1.5), "n": np.int64(2)},
                  io.Provenance("h", 1))
    obj = io.read_json(tmp_path / "a.json")
    assert obj["provenance"] == {"config_sha256": "h", "seed": 1, "version": "0.1.0"}
    assert obj["z"] == 1.5 and obj["n"] == 2
