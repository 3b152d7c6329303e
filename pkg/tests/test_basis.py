import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import trapezoid

from propval.basis import (
    KernelConfig,
    center_block,
    crs_basis,
    crs_matrices,
    crs_rows,
    default_gp_range,
    difference_matrix,
    gp_basis,
    matern32,
    mrf_basis,
    null_space_dim,
    pspline_basis,
    select_knots_spacefilling,
)
from propval.fit import penalized_solve
from propval.ingest import Polygon, RegionGraph

import oracles


def _psd(S):
    assert np.allclose(S, S.T, atol=1e-12 * max(1.0, np.abs(S).max()))
    ev = np.linalg.eigvalsh(S)
    assert ev.min() >= -1e-8 * max(ev.max(), 1.0)


def _fit(X, y, S, lam, intercept=False):
    X = np.asarray(X, float)
    if intercept:
        X = np.column_stack([np.ones(len(X)), X])
        pens = [(slice(1, X.shape[1]), S)]
    else:
        pens = [(slice(0, X.shape[1]), S)]
    return penalized_solve((X, pens), y, [lam]).fitted


@pytest.fixture(scope="module")
def sample():
    rng = np.random.default_rng(3)
    x = rng.gamma(4.0, 30.0, 400)
    y = np.log(x) + rng.normal(0, 0.1, 400)
    return x, y


# ---------------------------------------------------------------------------
# cubic regression spline
# ---------------------------------------------------------------------------

def test_crs_cardinal_at_knots(sample):
    b = crs_basis(sample[0], 10)
    np.testing.assert_allclose(b.raw_rows(b.knots), np.eye(10), atol=1e-12)


def test_crs_knots_at_quantiles(sample):
    b = crs_basis(sample[0], 5)
    u = np.unique(sample[0])
    np.testing.assert_allclose(b.knots, np.quantile(u, [0, .25, .5, .75, 1]))


def test_crs_linear_in_null_space(sample):
    b = crs_basis(sample[0], 8)
    beta = 2.5 - 0.3 * b.knots
    assert abs(beta @ b.penalty @ beta) < 1e-10 * max(1.0, np.abs(b.penalty).max())
    assert null_space_dim(b.penalty) == 2


def test_crs_matches_natural_spline_oracle():
    knots = np.linspace(0.0, 2 * np.pi, 8)
    b = crs_basis(knots, 8)
    np.testing.assert_allclose(b.knots, knots, atol=1e-14)
    x = np.linspace(0.0, 2 * np.pi, 2001)
    ours = b.raw_rows(x) @ np.sin(knots)
    ref = oracles.natural_cubic_spline(knots, np.sin(knots))(x)
    assert np.max(np.abs(ours - ref)) < 1e-8


def test_crs_penalty_is_integrated_curvature():
    knots = np.array([0.0, 1.0, 2.5, 3.0, 5.0])
    F, S = crs_matrices(knots)
    beta = np.array([0.0, 1.0, -1.0, 2.0, 0.5])
    x = np.linspace(0, 5, 200001)
    # second derivative by finite differences of the evaluated spline
    f = crs_rows(x, knots, F) @ beta
    d2 = np.gradient(np.gradient(f, x), x)
    approx = trapezoid(d2[2:-2] ** 2, x[2:-2])
    assert beta @ S @ beta == pytest.approx(approx, rel=1e-3)


def test_crs_linear_extrapolation(sample):
    b = crs_basis(sample[0], 6)
    lo = b.knots[0]
    rows = b.raw_rows(np.array([lo - 2.0, lo - 1.0, lo]))
    np.testing.assert_allclose(rows[0] - rows[1], rows[1] - rows[2], atol=1e-12)


def test_crs_knot_reduction_warns(caplog):
    with caplog.at_level("WARNING"):
        b = crs_basis(np.array([1, 2, 3, 4, 1, 2, 3, 4], float), 8)
    assert len(b.knots) == 4
    assert "reducing knots" in caplog.text


def test_crs_needs_three_values():
    with pytest.raises(ValueError):
        crs_basis(np.array([1.0, 2.0, 1.0]), 5)


# ---------------------------------------------------------------------------
# P-spline
# ---------------------------------------------------------------------------

def test_pspline_partition_of_unity(sample):
    b = pspline_basis(sample[0], 10)
    np.testing.assert_allclose(b.design.sum(1), 1.0, atol=1e-12)
    x = np.linspace(sample[0].min(), sample[0].max(), 77)
    np.testing.assert_allclose(b.raw_rows(x).sum(1), 1.0, atol=1e-12)


def test_difference_matrix_k4():
    np.testing.assert_array_equal(difference_matrix(4), [[1, -2, 1, 0], [0, 1, -2, 1]])


def test_pspline_linear_coefficients_unpenalized():
    b = pspline_basis(np.linspace(0, 1, 50), 5)
    beta = np.arange(1.0, 6.0)
    assert beta @ b.penalty @ beta == 0.0
    assert null_space_dim(b.penalty) == 2


def test_pspline_needs_k4():
    with pytest.raises(ValueError):
        pspline_basis(np.linspace(0, 1, 20), 3)


# ---------------------------------------------------------------------------
# space-filling knots
# ---------------------------------------------------------------------------

def test_spacefilling_all_points():
    pts = np.array([[3.0, 1.0], [0.0, 0.0], [1.0, 2.0]])
    out = select_knots_spacefilling(pts, 3)
    np.testing.assert_array_equal(out, pts[np.lexsort((pts[:, 1], pts[:, 0]))])


def test_spacefilling_single_centroid():
    pts = np.random.default_rng(0).normal(size=(30, 2))
    np.testing.assert_allclose(select_knots_spacefilling(pts, 1), pts.mean(0, keepdims=True))


def test_spacefilling_square_two_clusters():
    sq = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    got = select_knots_spacefilling(sq, 2, seed=42)
    sse, optimal = oracles.best_two_partitions(sq)
    assert any(np.allclose(got, c) for c in optimal)
    assert sse == pytest.approx(1.0)


def test_spacefilling_deterministic_and_sorted():
    pts = np.random.default_rng(5).uniform(size=(500, 2))
    a = select_knots_spacefilling(pts, 20, seed=7)
    b = select_knots_spacefilling(pts, 20, seed=7)
    np.testing.assert_array_equal(a, b)
    assert np.all(np.diff(a[:, 0]) >= 0)


def test_spacefilling_reduces_on_duplicates(caplog):
    pts = np.repeat(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]]), 10, axis=0)
    with caplog.at_level("WARNING"):
        out = select_knots_spacefilling(pts, 5)
    assert len(out) == 3 and "reducing knots" in caplog.text


# ---------------------------------------------------------------------------
# GP
# ---------------------------------------------------------------------------

def test_matern_values():
    assert matern32(0.0, 10.0) == 1.0
    rho = 1234.0
    assert matern32(rho / math.sqrt(3.0), rho) == pytest.approx(2 * math.exp(-1), abs=1e-15)
    assert 2 * math.exp(-1) == pytest.approx(0.7358, abs=1e-4)


def test_kernel_config_validation():
    with pytest.raises(ValueError):
        KernelConfig(0.0)
    with pytest.raises(ValueError):
        KernelConfig(1.0, family="gaussian")


def test_gp_penalty_collinear_knots():
    knots = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    b = gp_basis(knots, knots, KernelConfig(1.5))
    r = math.sqrt(3) / 1.5
    k1, k2 = (1 + r) * math.exp(-r), (1 + 2 * r) * math.exp(-2 * r)
    ref = np.array([[1, k1, k2], [k1, 1, k1], [k2, k1, 1]]) + 1e-8 * np.eye(3)
    np.testing.assert_allclose(b.penalty, ref, rtol=1e-14)
    ev = np.linalg.eigvalsh(ref)
    np.testing.assert_allclose(np.linalg.eigvalsh(b.penalty), ev, rtol=1e-12)
    assert ev.min() > 0
    assert null_space_dim(b.penalty) == 0


def test_gp_default_range_is_median_distance():
    knots = np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 4.0]])
    assert default_gp_range(knots) == 4.0


def test_gp_rejects_bad_input():
    with pytest.raises(ValueError):
        gp_basis(np.array([[0.0, np.nan]]), np.array([[0.0, 0.0], [1.0, 1.0]]))
    with pytest.raises(ValueError):
        gp_basis(np.zeros((3, 2)), np.zeros((2, 2)))


# ---------------------------------------------------------------------------
# MRF
# ---------------------------------------------------------------------------

def _strip_graph(m, gap_after=None):
    polys = []
    for i in range(m):
        x0 = i + (1 if gap_after is not None and i > gap_after else 0)
        polys.append(Polygon(f"R{i}", (np.array([(x0, 0), (x0 + 1, 0), (x0 + 1, 1), (x0, 1), (x0, 0)], float),)))
    return RegionGraph.from_polygons(polys)


def test_mrf_design_and_null_space():
    g = _strip_graph(6, gap_after=2)
    assert g.n_components() == 2
    b = mrf_basis([0, 1, 2, 3, 4, 5, 5], g)
    assert b.design.shape == (7, 6)
    np.testing.assert_array_equal(b.design.sum(1), 1.0)
    assert null_space_dim(b.penalty) == 2
    beta = np.array([1.0, 1.0, 1.0, -2.0, -2.0, -2.0])
    assert beta @ b.penalty @ beta == 0.0


def test_mrf_unknown_region():
    with pytest.raises(ValueError):
        mrf_basis([0, 9], _strip_graph(3))


# ---------------------------------------------------------------------------
# centering
# ---------------------------------------------------------------------------

def _blocks(sample):
    x = sample[0]
    rng = np.random.default_rng(1)
    xy = rng.uniform(0, 1000, (len(x), 2))
    g = _strip_graph(8)
    return [
        crs_basis(x, 8),
        pspline_basis(x, 10),
        gp_basis(xy, select_knots_spacefilling(xy, 15)),
        mrf_basis(rng.integers(0, 8, len(x)), g),
    ]


def test_centered_blocks(sample):
    for b in _blocks(sample):
        c = center_block(b)
        n = c.design.shape[0]
        assert np.all(np.abs(c.design.sum(0)) <= 1e-8 * n)
        assert c.width == b.design.shape[1] - 1
        _psd(c.penalty)
        _psd(b.penalty)


def test_evaluate_reproduces_training_columns(sample):
    x = sample[0]
    crs, ps, gp, mrf = (center_block(b) for b in _blocks(sample))
    np.testing.assert_array_equal(crs.evaluate(x), crs.design)
    np.testing.assert_array_equal(ps.evaluate(x), ps.design)
    rng = np.random.default_rng(1)
    xy = rng.uniform(0, 1000, (len(x), 2))
    ids = rng.integers(0, 8, len(x))
    np.testing.assert_array_equal(gp.evaluate(xy), gp.design)
    np.testing.assert_array_equal(mrf.evaluate(ids), mrf.design)


@pytest.mark.parametrize("maker", [lambda x: crs_basis(x, 8), lambda x: pspline_basis(x, 10)])
def test_centering_preserves_fit_with_intercept(sample, maker):
    x, y = sample
    b = maker(x)
    c = center_block(b)
    lam = 3.0
    raw = _fit(b.design, y, b.penalty, lam)          # spans constants on its own
    cen = _fit(c.design, y, c.penalty, lam, intercept=True)
    assert np.max(np.abs(raw - cen)) < 1e-8


@settings(max_examples=25, deadline=None)
@given(a=st.floats(0.05, 20.0), shift=st.floats(-500.0, 500.0))
def test_affine_rescaling_invariance(a, shift):
    rng = np.random.default_rng(8)
    x = rng.uniform(10, 300, 150)
    y = np.sin(x / 40) + rng.normal(0, 0.05, 150)
    u = a * x + shift
    for make, scale in ((lambda v: crs_basis(v, 8), a ** 3), (lambda v: pspline_basis(v, 10), 1.0)):
        b0, b1 = make(x), make(u)
        f0 = _fit(b0.design, y, b0.penalty, 2.0)
        f1 = _fit(b1.design, y, b1.penalty, 2.0 * scale)
        assert np.max(np.abs(f0 - f1)) < 1e-8
