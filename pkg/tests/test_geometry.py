import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rsrc import geometry as geo
from rsrc.geometry import GeometryConfig, PolicyError, build_geometry


def test_policy_k_pi():
    g = build_geometry(GeometryConfig(), math.pi)
    assert g.R == 6.0
    np.testing.assert_allclose(g.lambdas[:, 0], 0.5)
    np.testing.assert_allclose(g.lambdas[:, 1], 0.5 + 1 / 12, rtol=1e-15)


def test_policy_k_star():
    g = build_geometry(GeometryConfig(), geo.k_star(1.0))
    assert g.is_small and g.R == 6.0
    np.testing.assert_array_equal(g.lambdas[:, 1], -1.5)
    assert g.notes


def test_first_reference_point():
    g = build_geometry(GeometryConfig(), math.pi)
    # 0.5 * 6 * (cos(pi/10), sin(pi/10)) evaluated independently
    np.testing.assert_allclose(g.ref_points[0, 0], [2.853169548885461, 0.9270509831248424],
                               rtol=1e-14)


def test_to_json_keys():
    g = build_geometry(GeometryConfig(n_per_arc=4), math.pi)
    assert set(g.to_json()) == {"a", "tau", "m", "n_per_arc", "R", "lambdas",
                                "ref_points", "arcs"}


def test_colinear_distance():
    g = build_geometry(GeometryConfig(), math.pi)
    for j in (1, 4, 10):
        c = geo.nu(2 * j - 1, 10)
        assert abs(geo.r_distance_theta(g, j, 1, c) - 0.5 * g.R) < 1e-14
        x = g.R * np.array([math.cos(c), math.sin(c)])
        assert abs(geo.r_distance(g, j, 1, x) - 0.5 * g.R) < 1e-14


def test_k_star_argument_ranges():
    g = build_geometry(GeometryConfig(n_per_arc=400), geo.k_star(1.0))
    th = np.linspace(*g.arcs[0], 2001)
    t1 = g.k * geo.r_distance_theta(g, 1, 1, th)
    t2 = g.k * geo.r_distance_theta(g, 1, 2, th)
    assert 0.314 <= t1.min() and t1.max() <= 0.346
    assert 1.551 <= t2.min() and t2.max() <= 1.571


def test_distances_closed_form_vs_points():
    g = build_geometry(GeometryConfig(n_per_arc=7), 3.0 * math.pi)
    d = np.linalg.norm(g.meas_points[:, :, None, :] - g.ref_points[:, None, :, :], axis=-1)
    np.testing.assert_allclose(g.distances(), d, rtol=1e-13)


def test_inadmissible_wavenumber_rejected():
    with pytest.raises(ValueError):
        build_geometry(GeometryConfig(), 0.5 * math.pi)


def test_config_rejects_coarse_paper_mode():
    with pytest.raises(ValueError):
        GeometryConfig(m=8).validate()
    with pytest.raises(ValueError):
        GeometryConfig(tau=4).validate()


def test_lambda_out_of_band():
    with pytest.raises(PolicyError) as e:
        build_geometry(GeometryConfig(), math.pi, lambda_override=(0.1, 0.5))
    assert e.value.ell == 1 and e.value.k == pytest.approx(math.pi)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        g = build_geometry(GeometryConfig(policy="free"), math.pi, lambda_override=(0.1, 0.5))
    assert g.policy == "free" and g.notes


@settings(max_examples=100, deadline=None)
@given(st.floats(1.0, 400.0))
def test_policy_band_invariant(x):
    g = build_geometry(GeometryConfig(n_per_arc=3), x * math.pi)
    lo = math.sqrt(2) * g.a / g.R
    assert np.all((np.abs(g.lambdas) >= lo) & (np.abs(g.lambdas) < 1))


@settings(max_examples=30, deadline=None)
@given(st.floats(1.0, 200.0), st.integers(2, 30))
def test_distinct_points_and_positive_distances(x, n):
    g = build_geometry(GeometryConfig(n_per_arc=n), x * math.pi)
    z = g.ref_points.reshape(-1, 2)
    dz = np.linalg.norm(z[:, None] - z[None], axis=-1) + np.eye(len(z))
    assert dz.min() > 0
    p = g.meas_points.reshape(-1, 2)
    dp = np.linalg.norm(p[:, None] - p[None], axis=-1) + np.eye(len(p))
    assert dp.min() > 0
    assert np.all(g.distances() > 0)


def test_k_star_exception_only_branch():
    g = build_geometry(GeometryConfig(n_per_arc=3), geo.k_star(1.0))
    lo = math.sqrt(2) / g.R
    assert lo <= abs(g.lambdas[0, 0]) < 1 and abs(g.lambdas[0, 1]) == 1.5
