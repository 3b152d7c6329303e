"""Smooth-term bases and their penalty matrices.

Every smooth in the additive models is a :class:`BasisBlock`: a design
matrix over the training data, a symmetric positive semi-definite penalty,
the knots, and an optional centering transform. ``block.evaluate(values)``
rebuilds design rows for new covariate values through the same transform,
so prediction never needs the training data.

Penalty null-space dimensions of the uncentered blocks:

========  =========================================
crs       2 (constant and linear)
pspline   2 (constant and linear in coefficient index)
gp        0 (kernel Gram plus jitter is positive definite)
mrf       number of connected components of the graph
========  =========================================
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import BSpline
from scipy.linalg import solve_banded
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

log = logging.getLogger(__name__)

GP_JITTER = 1e-8
DEFAULT_KNOT_SEED = 42


@dataclass(frozen=True)
class KernelConfig:
    """Matérn 3/2 kernel with unit variance and range ``rho`` in metres."""

    rho: float
    family: str = "matern32"

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("kernel range must be positive")
        if self.family != "matern32":
            raise ValueError(f"unsupported kernel family {self.family!r}")

    def __call__(self, d):
        r = np.sqrt(3.0) * np.asarray(d, dtype=float) / self.rho
        return (1.0 + r) * np.exp(-r)


def matern32(d, rho):
    return KernelConfig(rho)(d)


@dataclass(frozen=True, eq=False)
class BasisBlock:
    label: str
    kind: str
    design: np.ndarray
    penalty: np.ndarray
    knots: np.ndarray
    transform: np.ndarray | None = None
    params: dict = field(default_factory=dict)

    @property
    def width(self) -> int:
        if self.transform is not None:
            return self.transform.shape[1]
        return self.design.shape[1]

    def raw_rows(self, values) -> np.ndarray:
        """Uncentered basis rows for new covariate values."""
        if self.kind == "crs":
            return crs_rows(np.asarray(values, dtype=float), self.knots, self.params["F"])
        if self.kind == "pspline":
            return pspline_rows(np.asarray(values, dtype=float), self.knots)
        if self.kind == "gp":
            coords = np.atleast_2d(np.asarray(values, dtype=float))
            if not np.all(np.isfinite(coords)):
                raise ValueError(f"{self.label}: non-finite coordinates")
            return matern32(cdist(coords, self.knots), self.params["rho"])
        if self.kind == "mrf":
            ids = np.asarray(values, dtype=int)
            m = self.params["n_regions"]
            if np.any((ids < 0) | (ids >= m)):
                raise ValueError(f"{self.label}: unknown region id")
            out = np.zeros((len(ids), m))
            out[np.arange(len(ids)), ids] = 1.0
            return out
        raise ValueError(f"unknown basis kind {self.kind!r}")

    def evaluate(self, values) -> np.ndarray:
        rows = self.raw_rows(values)
        return rows if self.transform is None else rows @ self.transform

    def raw_penalty(self) -> np.ndarray:
        return self.params["raw_penalty"]


# ---------------------------------------------------------------------------
# cubic regression spline (cardinal natural cubic)
# ---------------------------------------------------------------------------

def place_knots(values, k):
    """``k`` knots at evenly spaced quantiles of the distinct values."""
    u = np.unique(np.asarray(values, dtype=float))
    if len(u) < k:
        log.warning("only %d distinct values; reducing knots from %d", len(u), k)
        k = len(u)
    return np.quantile(u, np.linspace(0.0, 1.0, k))


def crs_matrices(knots):
    """Return ``(F, S)``: second derivatives at knots from values, and penalty.

    ``F`` maps knot values to second derivatives (zero at both ends);
    ``S = D' B^-1 D`` is the integrated squared second derivative.
    """
    knots = np.asarray(knots, dtype=float)
    k = len(knots)
    h = np.diff(knots)
    D = np.zeros((k - 2, k))
    idx = np.arange(k - 2)
    D[idx, idx] = 1.0 / h[:-1]
    D[idx, idx + 1] = -1.0 / h[:-1] - 1.0 / h[1:]
    D[idx, idx + 2] = 1.0 / h[1:]
    # B is symmetric tridiagonal; banded storage for solve_banded
    ab = np.zeros((3, k - 2))
    ab[1] = (h[:-1] + h[1:]) / 3.0
    ab[0, 1:] = h[1:-1] / 6.0
    ab[2, :-1] = h[1:-1] / 6.0
    Fm = solve_banded((1, 1), ab, D)
    F = np.vstack([np.zeros(k), Fm, np.zeros(k)])
    S = D.T @ Fm
    return F, 0.5 * (S + S.T)


def crs_rows(x, knots, F):
    """Cardinal natural-cubic basis rows; linear extrapolation beyond the knots."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    k = len(knots)
    lo, hi = knots[0], knots[-1]
    xc = np.clip(x, lo, hi)
    j = np.clip(np.searchsorted(knots, xc, side="right") - 1, 0, k - 2)
    x0, x1 = knots[j], knots[j + 1]
    h = x1 - x0
    am = (x1 - xc) / h
    ap = (xc - x0) / h
    cm = ((x1 - xc) ** 3 / h - h * (x1 - xc)) / 6.0
    cp = ((xc - x0) ** 3 / h - h * (xc - x0)) / 6.0
    rows = cm[:, None] * F[j] + cp[:, None] * F[j + 1]
    n = len(x)
    rows[np.arange(n), j] += am
    rows[np.arange(n), j + 1] += ap
    out_lo = x < lo
    out_hi = x > hi
    if out_lo.any() or out_hi.any():
        h0, h1 = knots[1] - knots[0], knots[-1] - knots[-2]
        d_lo = np.zeros(k)
        d_lo[0] -= 1.0 / h0
        d_lo[1] += 1.0 / h0
        d_lo += -h0 / 3.0 * F[0] - h0 / 6.0 * F[1]
        d_hi = np.zeros(k)
        d_hi[-2] -= 1.0 / h1
        d_hi[-1] += 1.0 / h1
        d_hi += h1 / 6.0 * F[-2] + h1 / 3.0 * F[-1]
        rows[out_lo] += (x[out_lo] - lo)[:, None] * d_lo
        rows[out_hi] += (x[out_hi] - hi)[:, None] * d_hi
    return rows


def crs_basis(values, k, label="crs") -> BasisBlock:
    """Cubic regression spline with ``k`` knots at quantiles of ``values``.

    The coefficients are the spline's values at the knots. Raises if fewer
    than three distinct values remain.
    """
    values = np.asarray(values, dtype=float)
    if k < 3:
        raise ValueError("crs basis needs k >= 3")
    knots = place_knots(values, k)
    if len(knots) < 3:
        raise ValueError(f"{label}: fewer than 3 distinct values")
    F, S = crs_matrices(knots)
    X = crs_rows(values, knots, F)
    return BasisBlock(label, "crs", X, S, knots, None, {"F": F, "raw_penalty": S})


# ---------------------------------------------------------------------------
# P-spline
# ---------------------------------------------------------------------------

def pspline_knots(lo, hi, k, degree=3):
    """Evenly spaced knot vector with ``k`` cubic basis functions over [lo, hi]."""
    if hi <= lo:
        hi = lo + 1.0
    dx = (hi - lo) / (k - degree)
    return lo + dx * np.arange(-degree, k + 1)


def pspline_rows(x, knots, degree=3):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return BSpline.design_matrix(x, knots, degree, extrapolate=True).toarray()


def difference_matrix(k, order=2):
    return np.diff(np.eye(k), n=order, axis=0)


def pspline_basis(values, k, label="pspline") -> BasisBlock:
    """Cubic B-splines with an order-2 difference penalty."""
    if k < 4:
        raise ValueError("P-spline needs k >= 4")
    values = np.asarray(values, dtype=float)
    knots = pspline_knots(values.min(), values.max(), k)
    X = pspline_rows(values, knots)
    D = difference_matrix(k)
    S = D.T @ D
    return BasisBlock(label, "pspline", X, S, knots, None, {"raw_penalty": S})


# ---------------------------------------------------------------------------
# low-rank GP
# ---------------------------------------------------------------------------

def _sq_dists(a, b):
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def _kmeans_pp(X, k, rng):
    n = len(X)
    centres = np.empty((k, X.shape[1]))
    centres[0] = X[rng.integers(n)]
    d2 = ((X - centres[0]) ** 2).sum(1)
    for c in range(1, k):
        tot = d2.sum()
        if tot <= 0:
            centres[c:] = X[rng.choice(n, k - c, replace=False)]
            break
        pick = int(np.searchsorted(np.cumsum(d2), rng.random() * tot, side="right"))
        centres[c] = X[min(pick, n - 1)]
        d2 = np.minimum(d2, ((X - centres[c]) ** 2).sum(1))
    return centres


def _lloyd(X, centres, max_iter):
    k = len(centres)
    labels = None
    for _ in range(max_iter):
        _, new = cKDTree(centres).query(X)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        counts = np.bincount(labels, minlength=k)
        sums = np.column_stack([np.bincount(labels, X[:, j], minlength=k) for j in range(X.shape[1])])
        empty = counts == 0
        centres = np.where(empty[:, None], centres, sums / np.maximum(counts, 1)[:, None])
        if empty.any():
            # move empty clusters onto the worst-served points
            far = np.argsort(-cKDTree(centres).query(X)[0])[: empty.sum()]
            centres[empty] = X[far]
    d, labels = cKDTree(centres).query(X)
    return centres, labels, float((d ** 2).sum())


def select_knots_spacefilling(coords, k, seed=DEFAULT_KNOT_SEED, n_init=10, max_iter=100):
    """k-means centroids of the distinct coordinates, sorted lexicographically.

    Deterministic for a given ``seed``; the best of ``n_init`` k-means++
    restarts by within-cluster sum of squares is returned.
    """
    coords = np.asarray(coords, dtype=float)
    pts = np.unique(coords, axis=0)
    if k > len(pts):
        log.warning("only %d distinct locations; reducing knots from %d", len(pts), k)
        k = len(pts)
    if k == len(pts):
        out = pts
    elif k == 1:
        out = coords.mean(0, keepdims=True)
    else:
        # centre and scale for conditioning; undone afterwards
        mu = pts.mean(0)
        sc = pts.std() or 1.0
        Xs = (pts - mu) / sc
        rng = np.random.default_rng(seed)
        best = None
        for _ in range(n_init):
            c, _, sse = _lloyd(Xs, _kmeans_pp(Xs, k, rng), max_iter)
            if best is None or sse < best[1] - 1e-12 * abs(best[1]):
                best = (c, sse)
        out = best[0] * sc + mu
    order = np.lexsort((out[:, 1], out[:, 0]))
    return out[order]


def default_gp_range(knot_coords) -> float:
    """Median pairwise distance between knots."""
    kc = np.asarray(knot_coords, dtype=float)
    if len(kc) < 2:
        return 1.0
    d = cdist(kc, kc)
    med = float(np.median(d[np.triu_indices(len(kc), 1)]))
    return med if med > 0 else 1.0


def gp_basis(coords, knot_coords, kernel: KernelConfig | None = None, label="gp") -> BasisBlock:
    """Low-rank kriging block: kernel columns against knots, knot Gram as penalty."""
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    knots = np.atleast_2d(np.asarray(knot_coords, dtype=float))
    if not (np.all(np.isfinite(coords)) and np.all(np.isfinite(knots))):
        raise ValueError(f"{label}: non-finite coordinates")
    if len(np.unique(knots, axis=0)) != len(knots):
        raise ValueError(f"{label}: knots must be distinct")
    if kernel is None:
        kernel = KernelConfig(default_gp_range(knots))
    X = kernel(cdist(coords, knots))
    S = kernel(cdist(knots, knots))
    S = 0.5 * (S + S.T) + GP_JITTER * np.eye(len(knots))
    return BasisBlock(label, "gp", X, S, knots, None, {"rho": kernel.rho, "raw_penalty": S})


# ---------------------------------------------------------------------------
# MRF
# ---------------------------------------------------------------------------

def mrf_basis(region_ids, graph, label="mrf", order=2) -> BasisBlock:
    """Region indicator design with the neighbourhood-graph Laplacian penalty."""
    ids = np.asarray(region_ids, dtype=int)
    m = len(graph)
    if np.any((ids < 0) | (ids >= m)):
        raise ValueError(f"{label}: unknown region id")
    X = np.zeros((len(ids), m))
    X[np.arange(len(ids)), ids] = 1.0
    S = graph.laplacian(order)
    return BasisBlock(
        label, "mrf", X, S, np.arange(m), None, {"n_regions": m, "raw_penalty": S}
    )


# ---------------------------------------------------------------------------
# centering
# ---------------------------------------------------------------------------

def center_block(block: BasisBlock) -> BasisBlock:
    """Absorb the sum-to-zero constraint on the training fit.

    Uses the orthonormal complement of the column-sum vector, so the
    centered design has zero column sums and the penalty is transformed by
    congruence (hence stays PSD).
    """
    c = block.design.sum(axis=0)
    if not np.any(c):
        return replace(block, transform=np.eye(block.design.shape[1]))
    Q, _ = np.linalg.qr(c[:, None], mode="complete")
    Z = Q[:, 1:]
    T = Z if block.transform is None else block.transform @ Z
    S = Z.T @ block.penalty @ Z
    X = block.design @ Z
    return replace(block, design=X, penalty=0.5 * (S + S.T), transform=T)


def null_space_dim(S, rel_tol=1e-8) -> int:
    ev = np.linalg.eigvalsh(0.5 * (S + S.T))
    return int(np.sum(ev < rel_tol * max(ev.max(), 0.0)))
