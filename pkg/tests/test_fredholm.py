import math

import numpy as np
import pytest

from rsrc import forward, fredholm, phase_retrieval as pr, sources, specfun
from rsrc.forward import Grid, SourceField
from rsrc.geometry import GeometryConfig, build_geometry


@pytest.fixture(scope="module")
def setup():
    grid = Grid(1.0, 16, 16)
    geom = build_geometry(GeometryConfig(n_per_arc=4), 2 * math.pi)
    return grid, geom


def test_zero_field_rows(setup):
    grid, geom = setup
    r1, r2 = fredholm.kernel_row_mean(geom.meas_points[0], geom.k, grid)
    z = np.zeros(grid.size)
    assert np.all(r1 @ z == 0) and np.all(r2 @ z == 0)


def test_rotation_symmetry(setup):
    grid, _ = setup
    bump = SourceField.from_function(grid, lambda y1, y2: np.exp(-4 * (y1 ** 2 + y2 ** 2)), "g")
    x = np.array([[4.0, 1.5]])
    xr = np.array([[-1.5, 4.0]])          # x rotated by 90 degrees
    a = fredholm.kernel_row_mean(x, 3.0, grid)[0] @ bump.flat()
    b = fredholm.kernel_row_mean(xr, 3.0, grid)[0] @ bump.flat()
    assert abs(a - b) <= 1e-8 * abs(a)


def test_rows_match_deterministic_integral(setup):
    grid, geom = setup
    g = SourceField.from_function(grid, sources.g, "g")
    x = geom.meas_points[2, 1]
    r1, r2 = fredholm.kernel_row_mean(x[None], geom.k, grid)
    ref = forward.deterministic_integral(g, lambda y: specfun.green(geom.k, x, y))
    assert abs((r1 @ g.flat()).item() - ref.real) <= 1e-12 * abs(ref)
    assert abs((r2 @ g.flat()).item() - ref.imag) <= 1e-12 * abs(ref)


def test_mean_operator_reproduces_noiseless_f(setup):
    grid, geom = setup
    g1 = SourceField.from_function(grid, sources.g1, "g")
    zs = SourceField(grid, np.zeros(grid.shape), "sigma")
    mom = forward.exact_moments(g1, zs, geom)
    st = forward.stats_from_moments(mom, geom, 1.0)
    f = pr.rhs_expectation(st, geom)
    for ell in (1, 2):
        T = fredholm.assemble_mean_operator(geom, grid, ell)
        want = f[..., ell - 1].ravel()
        np.testing.assert_allclose(fredholm.apply(T, g1), want, atol=1e-12 * np.abs(want).max())


def test_mean_operator_linear_and_zero(setup):
    grid, geom = setup
    T = fredholm.assemble_mean_operator(geom, grid, 2)
    g = SourceField.from_function(grid, sources.g, "g").flat()
    assert np.all(fredholm.apply(T, np.zeros(grid.size)) == 0)
    np.testing.assert_allclose(fredholm.apply(T, 3.7 * g), 3.7 * fredholm.apply(T, g),
                               rtol=1e-12, atol=1e-15)
    with pytest.raises(ValueError):
        fredholm.assemble_mean_operator(geom, grid, 3)


def test_variance_operator_zero_and_combination(setup):
    grid, geom = setup
    s2 = SourceField.from_function(grid, sources.sigma1, "sigma_sq").flat()
    raw = fredholm.raw_variance_rows(geom, grid)
    coef = pr.coefficients(geom)
    D = pr.forward_variance(*(((M @ s2).reshape(geom.theta.shape)) for M in raw), coef)
    for i, pair in enumerate(fredholm.PAIRS):
        T = fredholm.assemble_variance_operator(geom, grid, *pair, raw=raw)
        assert np.all(fredholm.apply(T, np.zeros(grid.size)) == 0)
        np.testing.assert_allclose(fredholm.apply(T, s2), D[..., i].ravel(), rtol=1e-12,
                                   atol=1e-14)
    with pytest.raises(ValueError):
        fredholm.assemble_variance_operator(geom, grid, 2, 1)


def test_raw_im_row_refined_quadrature():
    k = math.pi
    grid = Grid(1.0, 20, 20)
    fine = Grid(1.0, 80, 80)
    geom = build_geometry(GeometryConfig(n_per_arc=2), k)
    _, vi, _ = fredholm.raw_variance_rows(geom, grid)
    val = float(vi[0] @ np.ones(grid.size))
    # ImG^2 = J0^2 / 16; oracle: trapezoid sum on a 4x refined grid
    x = geom.meas_points.reshape(-1, 2)[0]
    r = np.hypot(*(x - fine.nodes()).T)
    oracle = float(np.sum(fine.weights().ravel() * specfun.bessel_j0(k * r) ** 2) / 16)
    assert abs(val - oracle) <= 0.01 * oracle


def test_mc_var_im_matches_raw_row():
    grid = Grid(1.0, 14, 14)
    geom = build_geometry(GeometryConfig(n_per_arc=2), math.pi)
    g = SourceField(grid, np.zeros(grid.shape), "g")
    s = SourceField.from_function(grid, sources.sigma, "sigma")
    rng = np.random.default_rng(4)
    G = forward.green_matrix(geom, grid)
    smp = [forward.sample_field(g, s, geom, geom.k, 1.0, rng, G=G) for _ in range(10000)]
    st = forward.estimate_statistics(smp, geom, 1.0)
    _, vi, _ = fredholm.raw_variance_rows(geom, grid)
    ref = (vi @ (s.flat() ** 2)).reshape(geom.theta.shape)
    est = st.debug["Var_im"]
    se = est * math.sqrt(2 / (10000 - 1))
    pick = (np.arange(geom.m), np.zeros(geom.m, int))
    assert np.max(np.abs(est[pick] - ref[pick]) / se[pick]) <= 3


def test_identity_and_linearity(setup):
    grid, geom = setup
    I = fredholm.identity_operator(grid)
    rng = np.random.default_rng(0)
    f, h = rng.normal(size=(2, grid.size))
    np.testing.assert_array_equal(fredholm.apply(I, f), f)
    T = fredholm.assemble_mean_operator(geom, grid, 1)
    np.testing.assert_allclose(fredholm.apply(T, 2 * f - 3 * h),
                               2 * fredholm.apply(T, f) - 3 * fredholm.apply(T, h),
                               rtol=1e-12, atol=1e-12 * np.abs(T.matrix).sum(1).max())
    with pytest.raises(ValueError):
        fredholm.apply(T, f[:-1])


def test_row_permutation_with_meta(setup):
    grid, geom = setup
    T = fredholm.assemble_mean_operator(geom, grid, 1)
    perm = np.random.default_rng(1).permutation(T.shape[0])
    P = T.take_rows(perm)
    f = np.ones(grid.size)
    np.testing.assert_array_equal(fredholm.apply(P, f), fredholm.apply(T, f)[perm])
    np.testing.assert_array_equal(P.row_meta["theta"], T.row_meta["theta"][perm])
    np.testing.assert_array_equal(P.row_meta["j"], T.row_meta["j"][perm])


def test_kernel_radiality():
    grid = Grid(1.0, 10, 10)
    x = np.array([[3.0, 2.0]])
    xm = np.array([[3.0, -2.0]])           # reflect across y1 axis, nodes too
    r1, r2 = fredholm.kernel_row_mean(x, 5.0, grid)
    s1, s2 = fredholm.kernel_row_mean(xm, 5.0, grid)
    flip = np.arange(grid.size).reshape(grid.shape)[:, ::-1].ravel()
    np.testing.assert_allclose(r1[0], s1[0][flip], rtol=1e-12)
    np.testing.assert_allclose(r2[0], s2[0][flip], rtol=1e-12)


def test_point_inside_square_rejected():
    with pytest.raises(ValueError):
        fredholm.kernel_row_mean(np.array([[0.5, 0.2]]), 1.0, Grid(1.0, 4, 4))


def test_stack_and_export_roundtrip(tmp_path, setup):
    grid, geom = setup
    geom2 = build_geometry(GeometryConfig(n_per_arc=4), 3 * math.pi)
    T = fredholm.stack([fredholm.assemble_mean_operator(g, grid, 1) for g in (geom, geom2)])
    assert T.shape == (2 * geom.n_points, grid.size)
    assert set(np.unique(T.row_meta["k"])) == {geom.k, geom2.k}
    fredholm.export_operator(T, tmp_path / "op", {"seed": 1})
    M, meta = fredholm.load_operator(tmp_path / "op")
    np.testing.assert_array_equal(M, T.matrix)
    assert meta["rows"] == T.shape[0] and meta["layout"] == "row-major"
    assert (tmp_path / "op.bin").stat().st_size == 8 * M.size
