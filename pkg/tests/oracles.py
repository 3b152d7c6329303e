"""Independent reference implementations used only by the tests.

Each oracle is written from the textbook definition with plain loops or a
different numerical route from the library, so agreement is evidence that
both are right rather than that both share a bug.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

def _on_segment(px, py, ax, ay, bx, by, tol=1e-12):
    cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    if abs(cross) > tol * max(1.0, abs(bx - ax) + abs(by - ay)):
        return False
    return (min(ax, bx) - tol <= px <= max(ax, bx) + tol
            and min(ay, by) - tol <= py <= max(ay, by) + tol)


def winding_number(px, py, ring):
    """Signed winding number of a closed ring around ``(px, py)``."""
    pts = [tuple(map(float, v)) for v in ring]
    if pts[0] == pts[-1]:
        pts = pts[:-1]
    wn = 0
    for (ax, ay), (bx, by) in zip(pts, pts[1:] + pts[:1]):
        side = (bx - ax) * (py - ay) - (px - ax) * (by - ay)
        if ay <= py:
            if by > py and side > 0:
                wn += 1
        elif by <= py and side < 0:
            wn -= 1
    return wn


def polygon_contains(px, py, rings):
    """Inside when on an edge or when the winding numbers of all rings
    (outer ring plus holes, any orientation) add to an odd crossing count."""
    total = 0
    for ring in rings:
        pts = [tuple(map(float, v)) for v in ring]
        for a, b in zip(pts, pts[1:] + pts[:1]):
            if _on_segment(px, py, *a, *b):
                return True
        total += abs(winding_number(px, py, ring))
    return total % 2 == 1


# ---------------------------------------------------------------------------
# natural cubic spline (Thomas algorithm)
# ---------------------------------------------------------------------------

def natural_cubic_spline(xk, yk):
    """Return a callable interpolating ``(xk, yk)`` with zero end curvature."""
    xk = [float(v) for v in xk]
    yk = [float(v) for v in yk]
    n = len(xk)
    h = [xk[i + 1] - xk[i] for i in range(n - 1)]
    # tridiagonal system for interior second derivatives
    m = n - 2
    a = [h[i] / 6.0 for i in range(m)]            # sub-diagonal (a[0] unused)
    b = [(h[i] + h[i + 1]) / 3.0 for i in range(m)]
    c = [h[i + 1] / 6.0 for i in range(m)]        # super-diagonal (c[-1] unused)
    d = [(yk[i + 2] - yk[i + 1]) / h[i + 1] - (yk[i + 1] - yk[i]) / h[i] for i in range(m)]
    for i in range(1, m):
        w = a[i] / b[i - 1]
        b[i] -= w * c[i - 1]
        d[i] -= w * d[i - 1]
    M = [0.0] * m
    for i in range(m - 1, -1, -1):
        M[i] = (d[i] - (c[i] * M[i + 1] if i < m - 1 else 0.0)) / b[i]
    M = [0.0] + M + [0.0]

    def f(x):
        out = []
        for v in np.atleast_1d(x):
            j = max(0, min(n - 2, int(np.searchsorted(xk, v, side="right")) - 1))
            hj = h[j]
            t1 = xk[j + 1] - v
            t0 = v - xk[j]
            out.append(M[j] * t1 ** 3 / (6 * hj) + M[j + 1] * t0 ** 3 / (6 * hj)
                       + (yk[j] / hj - M[j] * hj / 6) * t1 + (yk[j + 1] / hj - M[j + 1] * hj / 6) * t0)
        return np.array(out)

    return f


# ---------------------------------------------------------------------------
# regression
# ---------------------------------------------------------------------------

def ols(X, y):
    return np.linalg.lstsq(np.asarray(X, float), np.asarray(y, float), rcond=None)[0]


def hat_matrix(X, S=None):
    """``H = X (X'X + S)^-1 X'`` by dense inversion."""
    X = np.asarray(X, float)
    A = X.T @ X if S is None else X.T @ X + S
    return X @ np.linalg.inv(A) @ X.T


def gcv_from_hat(X, y, S=None):
    H = hat_matrix(X, S)
    n = len(y)
    r = y - H @ y
    return n * float(r @ r) / (n - np.trace(H)) ** 2


def loo_residuals(X, y):
    """Leave-one-out residuals by refitting ``n`` times."""
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    out = np.empty(len(y))
    for i in range(len(y)):
        keep = np.arange(len(y)) != i
        b = ols(X[keep], y[keep])
        out[i] = y[i] - X[i] @ b
    return out


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def metrics(pred, actual, lo50=None, hi50=None, lo95=None, hi95=None):
    """Accuracy metrics by explicit loops."""
    n = len(actual)
    mean = sum(actual) / n
    sse = sum((p - a) ** 2 for p, a in zip(pred, actual))
    sst = sum((a - mean) ** 2 for a in actual)
    rel = sorted(abs(p - a) / a for p, a in zip(pred, actual))
    med = rel[n // 2] if n % 2 else 0.5 * (rel[n // 2 - 1] + rel[n // 2])
    out = {
        "r2": 1 - sse / sst,
        "rmse": math.sqrt(sse / n),
        "mape": med,
        "within_5pct": sum(abs(p - a) / a <= 0.05 for p, a in zip(pred, actual)) / n,
        "within_10pct": sum(abs(p - a) / a <= 0.10 for p, a in zip(pred, actual)) / n,
    }
    if lo50 is not None:
        out["pi50_coverage"] = sum(lo <= a <= hi for lo, a, hi in zip(lo50, actual, hi50)) / n
        out["pi95_coverage"] = sum(lo <= a <= hi for lo, a, hi in zip(lo95, actual, hi95)) / n
    return out


def knn_weight_matrix(coords, k, floor=1.0):
    """Dense row-standardized inverse-distance k-nearest-neighbour matrix."""
    xy = np.asarray(coords, float)
    n = len(xy)
    W = np.zeros((n, n))
    for i in range(n):
        d = [(math.dist(xy[i], xy[j]), j) for j in range(n) if j != i]
        d.sort()
        for dist, j in d[:k]:
            W[i, j] = 1.0 / max(dist, floor)
        W[i] /= W[i].sum()
    return W


def morans_i(residuals, W):
    z = np.asarray(residuals, float)
    z = z - z.mean()
    n = len(z)
    num = 0.0
    for i in range(n):
        for j in range(n):
            num += W[i, j] * z[i] * z[j]
    return n / W.sum() * num / float(z @ z)


def quantile(values, p):
    """Linear-interpolation quantile at ``h = (n - 1) p`` on sorted values."""
    v = sorted(float(x) for x in values)
    h = (len(v) - 1) * p
    lo = math.floor(h)
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (h - lo) * (v[hi] - v[lo])


# ---------------------------------------------------------------------------
# trees and clustering
# ---------------------------------------------------------------------------

def _sse(v):
    if len(v) == 0:
        return 0.0
    m = sum(v) / len(v)
    return sum((x - m) ** 2 for x in v)


def best_split(X, y, categorical, min_node=1):
    """Exhaustive search for the variance-reduction-maximising split.

    Numeric features try every midpoint between distinct sorted values;
    categorical features try every two-way partition of the present
    levels. Returns ``(gain, feature, left_rows)``.
    """
    X = np.asarray(X, float)
    y = [float(v) for v in y]
    n, p = X.shape
    parent = _sse(y)
    best = (-math.inf, None, None)
    for f in range(p):
        col = X[:, f]
        if f in categorical:
            levels = sorted(set(col.tolist()))
            for r in range(1, len(levels)):
                for left_levels in itertools.combinations(levels, r):
                    left = [i for i in range(n) if col[i] in left_levels]
                    right = [i for i in range(n) if col[i] not in left_levels]
                    if len(left) < min_node or len(right) < min_node:
                        continue
                    g = parent - _sse([y[i] for i in left]) - _sse([y[i] for i in right])
                    if g > best[0]:
                        best = (g, f, frozenset(left))
        else:
            vals = sorted(set(col.tolist()))
            for a, b in zip(vals, vals[1:]):
                t = 0.5 * (a + b)
                left = [i for i in range(n) if col[i] <= t]
                right = [i for i in range(n) if col[i] > t]
                if len(left) < min_node or len(right) < min_node:
                    continue
                g = parent - _sse([y[i] for i in left]) - _sse([y[i] for i in right])
                if g > best[0]:
                    best = (g, f, frozenset(left))
    return best


def split_gain(y, left_rows):
    y = [float(v) for v in y]
    left = [y[i] for i in left_rows]
    right = [y[i] for i in range(len(y)) if i not in left_rows]
    return _sse(y) - _sse(left) - _sse(right)


def best_two_partitions(points, tol=1e-12):
    """All two-cluster partitions minimising the within-cluster sum of squares.

    Returns ``(sse, [centroids, ...])`` with each centroid pair sorted
    lexicographically.
    """
    P = np.asarray(points, float)
    n = len(P)
    scored = []
    for mask in range(1, 2 ** (n - 1)):
        a = [i for i in range(n) if mask >> i & 1]
        b = [i for i in range(n) if not mask >> i & 1]
        ca, cb = P[a].mean(0), P[b].mean(0)
        sse = float(((P[a] - ca) ** 2).sum() + ((P[b] - cb) ** 2).sum())
        scored.append((sse, np.array(sorted([tuple(ca), tuple(cb)]))))
    best = min(s for s, _ in scored)
    return best, [c for s, c in scored if s <= best + tol]
