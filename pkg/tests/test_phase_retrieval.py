import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rsrc import forward, phase_retrieval as pr, specfun
from rsrc.geometry import GeometryConfig, build_geometry

finite = st.floats(-10, 10, allow_nan=False)


def _maps(geom):
    th = geom.theta
    return (0.4 * np.cos(2 * th) + 0.1, -0.3 * np.sin(th), 0.2 + 0.1 * np.cos(th) ** 2,
            0.3 + 0.05 * np.sin(3 * th), 0.02 * np.cos(th))


@settings(max_examples=300, deadline=None)
@given(finite, finite, finite, finite)
def test_det_identity_property(y1, j1, y2, j2):
    dA = pr.det_A(y1, j1, y2, j2)
    dD = pr.det_D(y1, j1, y2, j2)
    assert abs(dD - dA ** 3) <= 1e-10 * max(1.0, abs(dA) ** 3)


def test_matrices_match_determinants():
    rng = np.random.default_rng(0)
    for _ in range(20):
        c = rng.normal(size=4)
        assert abs(np.linalg.det(pr.matrix_A(*c)) - pr.det_A(*c)) < 1e-12
        assert abs(np.linalg.det(pr.matrix_D(*c)) - pr.det_D(*c)) < 1e-11


def test_det_floor_values(policy_geoms):
    ks, pi_, *_ = policy_geoms
    assert pr.det_floor(ks) == pytest.approx(4 / 9)
    assert pr.det_floor(pi_) == pytest.approx(113 / 120 / (math.pi * 6))


def test_det_bounds_scan(policy_geoms):
    for g in policy_geoms:
        assert pr.det_scan(g, 1000).min() >= pr.det_floor(g) - (1e-9 if g.is_small else 0)


def test_stability_constants():
    c, cp = pr.stability_constants(0.01)
    assert c == pytest.approx((2.5 * 2.01 ** 2 * 3.01 + 20) / 0.99)
    assert cp == pytest.approx(0.01 * (3 + 0.01 * c))
    assert pr.stability_constants(0.0)[0] == pytest.approx(50.0)


def test_scaling_factors(policy_geoms):
    g = policy_geoms[1]
    np.testing.assert_array_equal(pr.scaling_factors(np.ones(g.theta.shape), g), 1.0)
    Eu = np.abs(np.sin(g.theta)) * 0 + 1.0
    Eu[:, 3] = 2.0
    c = pr.scaling_factors(Eu, g, "paper")
    for j in range(g.m):
        for ell in range(2):
            den = max(abs(specfun.green(g.k, x, g.ref_points[j, ell]))
                      for x in g.meas_points[j])
            assert abs(c[j, ell] - 2.0 / den) <= 1e-12 * c[j, ell]


def test_zero_mean_paper_scaling_refused(policy_geoms):
    g = policy_geoms[1]
    E_re, E_im, vr, vi, cv = _maps(g)
    st_, _ = pr.synthetic_stats(g, 0 * E_re, 0 * E_im, vr, vi, cv)
    c = pr.scaling_factors(st_.abs_E_u, g, "paper")
    assert np.all(c == 0)
    with pytest.raises(pr.SingularSystemError):
        pr.run_pr(replace(st_, c=c), g)


def test_f_and_ano_f_agree(policy_geoms):
    for g in policy_geoms:
        st_, _ = pr.synthetic_stats(g, *_maps(g), c=1.7)
        a = pr.rhs_expectation(st_, g, "f")
        b = pr.rhs_expectation(st_, g, "ano_f")
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-10 * np.abs(a).max())


def test_f_cancellation_and_c_scaling(policy_geoms):
    g = policy_geoms[1]
    st_, _ = pr.synthetic_stats(g, *_maps(g))
    same = replace(st_, E_abs_v_sq=np.repeat(st_.E_abs_u_sq[..., None], 2, -1))
    Y1, J1, Y2, J2 = pr.coefficients(g)
    H2 = np.stack([Y1 ** 2 + J1 ** 2, Y2 ** 2 + J2 ** 2], -1)
    np.testing.assert_allclose(pr.rhs_expectation(same, g), -H2 / 8, rtol=1e-14)
    c2 = 2.0
    direct = (2 / c2) * (st_.E_abs_v_sq - st_.E_abs_u_sq[..., None]) - c2 / 8 * H2
    np.testing.assert_allclose(pr.rhs_expectation(st_, g, c=c2), direct, rtol=1e-13)


def test_expectation_round_trip(policy_geoms):
    g = policy_geoms[2]
    coef = pr.coefficients(g)
    f = pr.forward_expectation(0.3, -0.7, coef)
    er, ei, _ = pr.solve_expectation(f, coef)
    np.testing.assert_allclose(er, 0.3, atol=1e-12)
    np.testing.assert_allclose(ei, -0.7, atol=1e-12)
    # independent route: generic dense solve at one point
    Y1, J1, Y2, J2 = (q[0, 0] for q in coef)
    x = np.linalg.solve([[Y1, -J1], [Y2, -J2]], f[0, 0])
    np.testing.assert_allclose(x, [0.3, -0.7], atol=1e-12)
    z = pr.solve_expectation(np.zeros_like(f), coef)
    assert np.all(z[0] == 0) and np.all(z[1] == 0)


def test_variance_round_trip(policy_geoms):
    g = policy_geoms[1]
    coef = pr.coefficients(g)
    F = pr.forward_variance(0.04, 0.09, 0.01, coef)
    vr, vi, cv, _ = pr.solve_variance(F, coef)
    for got, want in ((vr, 0.04), (vi, 0.09), (cv, 0.01)):
        np.testing.assert_allclose(got, want, atol=1e-10)
    z = pr.solve_variance(np.zeros_like(F), coef)
    assert all(np.all(q == 0) for q in z[:3])


def test_variance_rhs_forward_consistency(policy_geoms):
    for g in policy_geoms:
        E_re, E_im, vr, vi, cv = _maps(g)
        st_, _ = pr.synthetic_stats(g, E_re, E_im, vr, vi, cv)
        F = pr.rhs_variance(st_, g)
        np.testing.assert_allclose(F, pr.forward_variance(vr, vi, cv, pr.coefficients(g)),
                                   atol=1e-10 * np.abs(F).max())


def test_deterministic_source_gives_zero_F(policy_geoms):
    g = policy_geoms[1]
    E_re, E_im, _, _, _ = _maps(g)
    z = 0 * E_re
    st_, _ = pr.synthetic_stats(g, E_re, E_im, z, z, z)
    assert np.abs(pr.rhs_variance(st_, g)).max() < 1e-14


def test_F_c_scaling(policy_geoms):
    g = policy_geoms[1]
    st_, _ = pr.synthetic_stats(g, *_maps(g))
    F1 = pr.rhs_variance(st_, g, c=1.0)
    np.testing.assert_allclose(pr.rhs_variance(st_, g, c=2.0), F1 / 4, rtol=1e-14)


def test_closed_loop_all_maps(policy_geoms):
    for g in policy_geoms:
        maps = _maps(g)
        for c in (1.0, 0.37):
            st_, _ = pr.synthetic_stats(g, *maps, c=c)
            rs = pr.run_pr(st_, g)
            for got, want in zip((rs.E_re, rs.E_im, rs.Var_re, rs.Var_im, rs.Cov_re_im), maps):
                assert np.max(np.abs(got - want)) <= 1e-8
            np.testing.assert_allclose(rs.detD, rs.detA ** 3, rtol=1e-12)


def test_all_zero_statistics_finite(policy_geoms):
    g = policy_geoms[1]
    st_, _ = pr.synthetic_stats(g, *_maps(g))
    zero = replace(st_, **{n: 0 * getattr(st_, n) for n in forward.STAT_FIELDS})
    rs = pr.run_pr(zero, g)
    assert np.all(np.isfinite(rs.E_re)) and rs.arc_ok.all()


def test_free_geometry_requires_force():
    g = build_geometry(GeometryConfig(policy="free"), math.pi)
    st_, _ = pr.synthetic_stats(g, *_maps(g))
    with pytest.raises(ValueError):
        pr.run_pr(st_, g)
    assert pr.run_pr(st_, g, force=True).arc_ok.all()


def test_singular_arc_reported():
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        g = build_geometry(GeometryConfig(policy="free"), math.pi, lambda_override=(0.5, 0.5))
    st_, _ = pr.synthetic_stats(g, *_maps(g))
    with pytest.raises(pr.SingularSystemError):
        pr.run_pr(st_, g, force=True)


def _errors_loop(ret, truth):
    num = den = vnum = vden = 0.0
    for j in range(ret.E_re.shape[0]):
        for i in range(ret.E_re.shape[1]):
            num += abs(complex(ret.E_re[j, i], ret.E_im[j, i])
                       - complex(truth.E_re[j, i], truth.E_im[j, i])) ** 2
            den += abs(complex(truth.E_re[j, i], truth.E_im[j, i])) ** 2
            a = ret.Var_re[j, i] + ret.Var_im[j, i]
            b = truth.Var_re[j, i] + truth.Var_im[j, i]
            vnum += (a - b) ** 2
            vden += b * b
    return math.sqrt(num / den), math.sqrt(vnum / vden)


def test_relative_errors(policy_geoms):
    g = policy_geoms[1]
    _, mom = pr.synthetic_stats(g, *_maps(g))
    truth = pr.truth_from_moments(mom, g)
    assert pr.relative_errors(truth, truth) == (0.0, 0.0)
    scaled = replace(truth, E_re=1.1 * truth.E_re, E_im=1.1 * truth.E_im)
    assert abs(pr.relative_errors(scaled, truth)[0] - 0.1) < 1e-12
    rng = np.random.default_rng(0)
    for _ in range(5):
        noisy = replace(truth, **{n: getattr(truth, n) + 0.01 * rng.normal(size=truth.E_re.shape)
                                  for n in ("E_re", "E_im", "Var_re", "Var_im")})
        np.testing.assert_allclose(pr.relative_errors(noisy, truth), _errors_loop(noisy, truth),
                                   rtol=1e-12)


def test_stability_bound_reporting():
    from rsrc import verify
    r = verify.check_stability_bound()
    assert r["passed"] and r["metric"] < 1
