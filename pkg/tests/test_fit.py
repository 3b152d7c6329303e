import numpy as np
import pytest

from propval.basis import center_block, crs_basis, pspline_basis
from propval.fit import (
    FitError,
    GridConfig,
    gcv_score,
    optimize_lambdas,
    penalized_gradient,
    penalized_objective,
    penalized_solve,
)
from propval.synth import true_smooth

import oracles

FINE_STEP = 0.01


def single_block_problem(seed, kind="pspline", k=12):
    """Intercept plus one centered smooth of a noisy sine."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(80, 300))
    x = np.sort(rng.uniform(0, 10, n))
    amp = (0.0, 0.2, 1.0, 3.0)[seed % 4]
    y = amp * np.sin(x * rng.uniform(0.3, 2.0)) + rng.normal(0, 0.3, n)
    b = center_block((pspline_basis if kind == "pspline" else crs_basis)(x, k))
    X = np.column_stack([np.ones(n), b.design])
    return X, [(slice(1, X.shape[1]), b.penalty)], y, x


def _full_penalty(X, pens, lams):
    p = X.shape[1]
    S = np.zeros((p, p))
    for (sl, Sj), lam in zip(pens, lams):
        S[sl, sl] += lam * Sj
    return S


def test_toy_no_intercept_normal_equations():
    # sum(xy) / sum(x^2) = (1 + 4 + 12) / (1 + 4 + 9)
    fit = penalized_solve((np.array([[1.0], [2.0], [3.0]]), []), np.array([1.0, 2.0, 4.0]))
    assert fit.coef[0] == pytest.approx(17 / 14, rel=1e-14)


def test_unpenalized_equals_ols(rng):
    X = np.column_stack([np.ones(200), rng.normal(size=(200, 6))])
    y = X @ rng.normal(size=7) + rng.normal(size=200)
    fit = penalized_solve((X, []), y)
    ref = oracles.ols(X, y)
    np.testing.assert_allclose(fit.coef, ref, rtol=1e-10)
    assert fit.edf == pytest.approx(7.0)
    assert fit.sigma2 == pytest.approx(fit.rss / 193)


def test_gcv_without_penalty(rng):
    X = np.column_stack([np.ones(60), rng.normal(size=(60, 3))])
    y = rng.normal(size=60)
    r = y - X @ oracles.ols(X, y)
    assert gcv_score((X, []), y) == pytest.approx(60 * (r @ r) / (60 - 4) ** 2, rel=1e-12)


def test_gcv_matches_hat_matrix_oracle():
    X, pens, y, _ = single_block_problem(1)
    X, y = X[:50], y[:50]
    for lam in (1e-3, 0.7, 50.0):
        S = _full_penalty(X, pens, [lam])
        assert gcv_score((X, pens), y, [lam]) == pytest.approx(oracles.gcv_from_hat(X, y, S), rel=1e-9)
        fit = penalized_solve((X, pens), y, [lam])
        assert fit.edf == pytest.approx(np.trace(oracles.hat_matrix(X, S)), rel=1e-9)


def test_gcv_monotone_in_rss():
    # same design (same EDF), responses with growing residual norm
    X, pens, y, x = single_block_problem(2)
    base = penalized_solve((X, pens), y, [1.0])
    resid = y - base.fitted
    scores = [gcv_score((X, pens), base.fitted + c * resid, [1.0]) for c in (0.5, 1.0, 2.0)]
    assert scores[0] < scores[1] < scores[2]


def test_edf_additivity_and_bounds():
    X, pens, y, _ = single_block_problem(3)
    fit = penalized_solve((X, pens), y, [0.3])
    assert fit.edf_columns.sum() == pytest.approx(fit.edf, abs=1e-6)
    assert 1.0 < fit.edf <= X.shape[1]
    V = fit.cov
    np.testing.assert_allclose(V, V.T, atol=1e-14)
    assert np.linalg.eigvalsh(V).min() > -1e-12


def test_objective_is_minimised(rng):
    X, pens, y, _ = single_block_problem(5)
    lam = [2.0]
    fit = penalized_solve((X, pens), y, lam)
    f0 = penalized_objective((X, pens), y, lam, fit.coef)
    for _ in range(100):
        d = rng.normal(scale=1e-3, size=len(fit.coef))
        assert f0 <= penalized_objective((X, pens), y, lam, fit.coef + d)
    g = penalized_gradient((X, pens), y, lam, fit.coef)
    assert np.max(np.abs(g)) < 1e-8 * max(1.0, float(np.abs(X.T @ y).max()))


def test_gradient_matches_central_differences(rng):
    X, pens, y, _ = single_block_problem(6)
    lam = [0.5]
    for _ in range(20):
        b = rng.normal(size=X.shape[1])
        g = penalized_gradient((X, pens), y, lam, b)
        h = 1e-5
        num = np.empty_like(b)
        for j in range(len(b)):
            e = np.zeros_like(b)
            e[j] = h
            num[j] = (penalized_objective((X, pens), y, lam, b + e)
                      - penalized_objective((X, pens), y, lam, b - e)) / (2 * h)
        assert np.linalg.norm(g - num) / np.linalg.norm(num) < 1e-5


def test_large_lambda_gives_straight_line():
    x = np.linspace(0, 1, 120)
    y = np.exp(2 * x) + 0.3 * x ** 3
    b = pspline_basis(x, 10)
    fit = penalized_solve((b.design, [(slice(0, 10), b.penalty)]), y, [1e12])
    line = np.column_stack([np.ones_like(x), x])
    ref = line @ oracles.ols(line, y)
    assert np.max(np.abs(fit.fitted - ref)) < 1e-4


def test_tiny_lambda_gives_unpenalized_fit():
    rng = np.random.default_rng(9)
    x = np.sort(rng.uniform(0, 1, 120))
    y = np.sin(6 * x) + rng.normal(0, 0.1, 120)
    b = pspline_basis(x, 10)
    fit = penalized_solve((b.design, [(slice(0, 10), b.penalty)]), y, [1e-12])
    ref = b.design @ oracles.ols(b.design, y)
    assert np.max(np.abs(fit.fitted - ref)) < 1e-6


def test_invalid_lambdas():
    X, pens, y, _ = single_block_problem(0)
    with pytest.raises(ValueError):
        penalized_solve((X, pens), y, [])
    with pytest.raises(ValueError):
        penalized_solve((X, pens), y, [0.0])


def test_singular_system_names_blocks(rng):
    z = rng.normal(size=50)
    X = np.column_stack([np.ones(50), z, z])
    labels = [(slice(0, 1), "intercept"), (slice(1, 2), "a"), (slice(2, 3), "b")]
    with pytest.raises(FitError, match="a, b"):
        penalized_solve((X, [], labels), rng.normal(size=50))


def test_no_residual_degrees_of_freedom():
    X = np.eye(3)
    with pytest.raises(FitError):
        penalized_solve((X, []), np.arange(3.0))


@pytest.mark.parametrize("seed", range(10))
def test_optimizer_matches_exhaustive_grid(seed):
    X, pens, y, _ = single_block_problem(seed, "pspline" if seed % 2 == 0 else "crs")
    res = optimize_lambdas((X, pens), y)
    assert res.converged
    fine = np.arange(-6.0, 8.0 + 1e-9, FINE_STEP)
    vals = [oracles.gcv_from_hat(X, y, _full_penalty(X, pens, [10 ** r])) for r in fine]
    best = fine[int(np.argmin(vals))]
    assert abs(np.log10(res.lambdas[0]) - best) <= FINE_STEP + 1e-9


def test_pure_noise_shrinks_to_null_space():
    # GCV undersmooths on a minority of noise draws, so look at the typical case
    edfs = []
    for seed in range(17, 27):
        rng = np.random.default_rng(seed)
        x = rng.uniform(0, 10, 400)
        y = rng.normal(size=400)
        b = center_block(crs_basis(x, 10))
        X = np.column_stack([np.ones(400), b.design])
        pens = [(slice(1, 10), b.penalty)]
        fit = penalized_solve((X, pens), y, optimize_lambdas((X, pens), y).lambdas)
        edfs.append(fit.edf_columns[1:].sum())
    assert np.median(edfs) <= 1.5
    assert sum(e <= 1.5 for e in edfs) >= 6


def test_strong_signal_recovered():
    rng = np.random.default_rng(21)
    x = rng.lognormal(np.log(110), 0.35, 2000)
    truth = true_smooth("size", "Dublin", x)
    y = truth + rng.normal(0, 0.12, 2000)
    b = center_block(crs_basis(x, 40))
    X = np.column_stack([np.ones(2000), b.design])
    pens = [(slice(1, X.shape[1]), b.penalty)]
    fit = penalized_solve((X, pens), y, optimize_lambdas((X, pens), y).lambdas)
    g = np.linspace(*np.quantile(x, [0.02, 0.98]), 200)
    f = b.evaluate(g) @ fit.coef[1:]
    t = true_smooth("size", "Dublin", g)
    assert np.sqrt(np.mean(((f - f.mean()) - (t - t.mean())) ** 2)) < 0.05


def test_optimizer_deterministic_and_multiblock():
    rng = np.random.default_rng(4)
    n = 500
    x1, x2 = rng.uniform(0, 1, n), rng.uniform(0, 1, n)
    y = np.sin(6 * x1) + x2 ** 2 + rng.normal(0, 0.1, n)
    b1, b2 = center_block(crs_basis(x1, 10)), center_block(pspline_basis(x2, 8))
    X = np.column_stack([np.ones(n), b1.design, b2.design])
    pens = [(slice(1, 10), b1.penalty), (slice(10, 17), b2.penalty)]
    a = optimize_lambdas((X, pens), y)
    b = optimize_lambdas((X, pens), y)
    np.testing.assert_array_equal(a.lambdas, b.lambdas)
    assert a.converged
    assert a.gcv == pytest.approx(gcv_score((X, pens), y, a.lambdas), rel=1e-8)


def test_optimizer_nonconvergence_warns():
    X, pens, y, _ = single_block_problem(1)
    with pytest.warns(RuntimeWarning, match="did not converge"):
        res = optimize_lambdas((X, pens), y, GridConfig(max_sweeps=2, rel_tol=0.0))
    assert not res.converged and res.sweeps == 2
