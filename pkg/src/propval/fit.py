"""Penalized least squares and GCV smoothing-parameter selection.

A penalized problem is a design ``X`` plus a list of ``(slice, S)`` pairs,
one per smoothing parameter, and optionally ``[(slice, label)]`` naming
columns for error messages. ``penalized_solve`` minimises::

    ||y - X b||^2 + sum_j lam_j * b[sl_j]' S_j b[sl_j]

and ``optimize_lambdas`` picks the ``lam_j`` by minimising GCV.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular

log = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
COND_WARN = 1e12


class FitError(RuntimeError):
    pass


def _unpack(design):
    if hasattr(design, "X") and hasattr(design, "penalties"):
        return design.X, design.penalties(), _labels(design)
    X, pens, *labels = design
    return np.asarray(X, dtype=float), list(pens), (labels[0] if labels else None)


def _labels(design):
    sl = design.slices
    return [(sl[i], design.terms[i].label) for i in range(len(design.terms))]


def penalty_matrix(p, penalties, lambdas):
    S = np.zeros((p, p))
    for (sl, Sj), lam in zip(penalties, lambdas):
        S[sl, sl] += lam * Sj
    return S


def penalty_root(Sj, rel_tol=1e-13):
    """``E`` with ``E @ E.T == Sj`` (PSD part), dropping null directions."""
    ev, U = np.linalg.eigh(0.5 * (Sj + Sj.T))
    keep = ev > rel_tol * max(ev.max(), 0.0)
    return U[:, keep] * np.sqrt(ev[keep])


@dataclass(frozen=True)
class PenalizedFit:
    coef: np.ndarray
    fitted: np.ndarray
    rss: float
    edf: float
    edf_columns: np.ndarray
    sigma2: float
    cov_factor: np.ndarray
    """Upper-triangular ``P`` with ``V_beta = P @ P.T``."""

    @property
    def cov(self):
        return self.cov_factor @ self.cov_factor.T


def penalized_solve(design, y, lambdas=()) -> PenalizedFit:
    """Solve the penalized least-squares problem for fixed ``lambdas``.

    Uses a QR factorisation of the column-scaled augmented matrix
    ``[X; sqrt(lam) E']``, which squares the condition number less than
    forming normal equations. ``edf = tr((X'X + S)^-1 X'X)``;
    ``sigma2 = rss / (n - edf)``.
    """
    X, penalties, labels = _unpack(design)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    lambdas = np.asarray(lambdas, dtype=float).reshape(-1)
    if len(lambdas) != len(penalties):
        raise ValueError(f"expected {len(penalties)} smoothing parameters, got {len(lambdas)}")
    if np.any(~(lambdas > 0)):
        raise ValueError("smoothing parameters must be positive")

    roots = []
    for (sl, Sj), lam in zip(penalties, lambdas):
        E = np.zeros((p, 0))
        R = penalty_root(Sj)
        if R.shape[1]:
            E = np.zeros((p, R.shape[1]))
            E[sl] = math.sqrt(lam) * R
        roots.append(E)
    B = np.hstack(roots).T if roots else np.zeros((0, p))

    diag = (X * X).sum(0) + (B * B).sum(0)
    zero = diag <= 0
    if zero.any():
        raise FitError(f"unidentifiable columns: {_name_cols(np.flatnonzero(zero), labels)}")
    d = 1.0 / np.sqrt(diag)
    aug = np.vstack([X * d, B * d])
    Q, R = np.linalg.qr(aug)
    rd = np.abs(np.diag(R))
    small = rd < 1e-10 * rd.max()
    if small.any():
        _, sv, Vt = np.linalg.svd(R)
        cols = _null_columns(Vt[sv < 1e-10 * sv.max()])
        raise FitError(f"singular penalized system near columns: {_name_cols(cols, labels)}")
    if (rd.max() / rd.min()) ** 2 > COND_WARN:
        warnings.warn("penalized system condition number exceeds 1e12", RuntimeWarning, stacklevel=2)
    Qx = Q[:n]
    coef = d * solve_triangular(R, Qx.T @ y)
    fitted = X @ coef
    resid = y - fitted
    rss = float(resid @ resid)
    Rinv = solve_triangular(R, np.eye(p))
    Gq = Qx.T @ Qx
    edf_cols = np.einsum("ij,ji->i", Rinv, Gq @ R)
    edf = float(np.trace(Gq))
    dof = n - edf
    if dof <= 0:
        raise FitError("no residual degrees of freedom (n <= edf)")
    sigma2 = rss / dof
    P = (d[:, None] * Rinv) * math.sqrt(sigma2)
    return PenalizedFit(coef, fitted, rss, edf, edf_cols, sigma2, P)


def _null_columns(null_vectors):
    """Every column taking part in a null direction, not just the pivot."""
    return np.flatnonzero(np.abs(null_vectors).max(axis=0) > 1e-6)


def _name_cols(idx, labels):
    if labels is None:
        return ", ".join(str(i) for i in idx[:10])
    names = []
    for i in idx:
        for sl, lab in labels:
            if sl.start <= i < sl.stop and lab not in names:
                names.append(lab)
    return ", ".join(names)


def gcv_score(design, y, lambdas=()) -> float:
    """``n * rss / (n - edf)^2``."""
    fit = penalized_solve(design, y, lambdas)
    n = len(y)
    return n * fit.rss / (n - fit.edf) ** 2


def penalized_objective(design, y, lambdas, coef) -> float:
    X, penalties, _ = _unpack(design)
    r = np.asarray(y) - X @ coef
    val = float(r @ r)
    for (sl, Sj), lam in zip(penalties, lambdas):
        b = coef[sl]
        val += lam * float(b @ Sj @ b)
    return val


def penalized_gradient(design, y, lambdas, coef) -> np.ndarray:
    X, penalties, _ = _unpack(design)
    g = -2.0 * X.T @ (np.asarray(y) - X @ coef)
    for (sl, Sj), lam in zip(penalties, lambdas):
        g[sl] += 2.0 * lam * (Sj @ coef[sl])
    return g


# ---------------------------------------------------------------------------
# smoothing-parameter search
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridConfig:
    """Search settings on the log10 scale."""

    lo: float = -6.0
    hi: float = 8.0
    step: float = 0.5
    golden_tol: float = 1e-3
    max_sweeps: int = 50
    rel_tol: float = 1e-7

    @property
    def grid(self):
        m = int(round((self.hi - self.lo) / self.step))
        return self.lo + self.step * np.arange(m + 1)


@dataclass(frozen=True)
class LambdaSearch:
    lambdas: np.ndarray
    gcv: float
    converged: bool
    sweeps: int


class _CoordinateProblem:
    """GCV along one smoothing parameter with the others held fixed.

    With ``A(lam) = A0 + (lam - lam0) E E'`` and ``A0 = L L'`` we write
    ``A(lam) = L (I + delta W W') L'`` where ``W = L^-1 E = Q s V'``, so RSS
    and EDF along the coordinate cost O(r^2) per evaluation after one
    O(p^3) setup.
    """

    def __init__(self, G, b, yy, n, A0, Ej, lam0):
        d = 1.0 / np.sqrt(np.diag(A0))
        L = cholesky(A0 * d[:, None] * d[None, :], lower=True)
        Gs = G * d[:, None] * d[None, :]
        M = solve_triangular(L, Gs, lower=True)
        H = solve_triangular(L, M.T, lower=True)
        c = solve_triangular(L, d * b, lower=True)
        W = solve_triangular(L, d[:, None] * Ej, lower=True)
        Q, s, _ = np.linalg.svd(W, full_matrices=False)
        HQ = H @ Q
        self.s2 = s * s
        self.g = Q.T @ c
        self.h = Q.T @ (H @ c)
        self.C = Q.T @ HQ
        self.Cd = np.diag(self.C).copy()
        self.cc = float(c @ c)
        self.cHc = float(c @ H @ c)
        self.trH = float(np.trace(H))
        self.yy = yy
        self.n = n
        self.lam0 = lam0

    def gcv(self, log_lam):
        delta = 10.0 ** log_lam - self.lam0
        den = 1.0 + delta * self.s2
        if delta < 0 and den.min() <= 1e-12:
            return math.inf  # lost to rounding: treat as singular
        dv = delta * self.s2 / den
        w = dv * self.g
        btb = self.cc - w @ self.g
        bGb = self.cHc - 2.0 * (w @ self.h) + w @ self.C @ w
        rss = max(self.yy - 2.0 * btb + bGb, 0.0)
        edf = self.trH - dv @ self.Cd
        return self.n * rss / (self.n - edf) ** 2


def _golden(f, a, b, tol):
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:  # ties move toward smaller lambda
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def _initial_log_lambdas(G, penalties, cfg):
    out = []
    for sl, Sj in penalties:
        ratio = np.trace(G[sl, sl]) / max(np.trace(Sj), 1e-300)
        v = math.log10(ratio) if ratio > 0 else 0.0
        out.append(float(np.clip(cfg.lo + cfg.step * round((v - cfg.lo) / cfg.step), cfg.lo, cfg.hi)))
    return np.array(out)


def _check_identifiable(G, penalties, rho, labels):
    """Raise if the penalized system is singular; then it is for every lam > 0."""
    A = G.copy()
    for (sl, Sj), r in zip(penalties, rho):
        A[sl, sl] += 10.0 ** r * Sj
    dg = np.diag(A)
    if np.any(dg <= 0):
        raise FitError(f"unidentifiable columns: {_name_cols(np.flatnonzero(dg <= 0), labels)}")
    d = 1.0 / np.sqrt(dg)
    w, V = np.linalg.eigh(A * d[:, None] * d[None, :])
    null = w < 1e-12 * w.max()
    if null.any():
        raise FitError("penalized system is singular for any smoothing parameters near columns: "
                       f"{_name_cols(_null_columns(V[:, null].T), labels)}")


def optimize_lambdas(design, y, grid: GridConfig | None = None, init=None) -> LambdaSearch:
    """Coordinate descent over log10 smoothing parameters minimising GCV.

    Each coordinate scans the grid, then golden-section refines within one
    grid step of the best point. Sweeps stop when GCV changes by less than
    ``rel_tol`` relative or after ``max_sweeps`` (then ``converged`` is
    False and a warning is issued). Ties go to the smaller smoothing
    parameter.
    """
    cfg = grid or GridConfig()
    X, penalties, _ = _unpack(design)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if not penalties:
        return LambdaSearch(np.zeros(0), gcv_score(design, y, ()), True, 0)
    G = X.T @ X
    b = X.T @ y
    yy = float(y @ y)
    roots = []
    for sl, Sj in penalties:
        R = penalty_root(Sj)
        E = np.zeros((p, R.shape[1]))
        E[sl] = R
        roots.append(E)
    rho = _initial_log_lambdas(G, penalties, cfg) if init is None else np.log10(np.asarray(init, float))
    grid_pts = cfg.grid
    labels = _unpack(design)[2]
    _check_identifiable(G, penalties, rho, labels)
    prev = math.inf
    cur = math.inf
    converged = False
    sweeps = 0
    for sweeps in range(1, cfg.max_sweeps + 1):
        for j in range(len(penalties)):
            # anchor the low-rank update at the current value of lam_j
            A0 = G.copy()
            for i, (sl, Sj) in enumerate(penalties):
                A0[sl, sl] += 10.0 ** rho[i] * Sj
            try:
                prob = _CoordinateProblem(G, b, yy, n, A0, roots[j], 10.0 ** rho[j])
            except LinAlgError:
                sl = penalties[j][0]
                raise FitError("penalized system is not positive definite near "
                               f"{_name_cols(np.arange(sl.start, sl.stop), labels)}") from None
            vals = np.array([prob.gcv(r) for r in grid_pts])
            if not np.isfinite(vals).any():
                raise FitError("GCV undefined along every grid point")
            k = int(np.argmin(vals))
            best_r, best_v = grid_pts[k], vals[k]
            a = max(cfg.lo, best_r - cfg.step)
            bb = min(cfg.hi, best_r + cfg.step)
            if bb > a:
                r_g, v_g = _golden(prob.gcv, a, bb, cfg.golden_tol)
                if v_g < best_v or (v_g == best_v and r_g < best_r):
                    best_r, best_v = r_g, v_g
            rho[j] = best_r
            cur = best_v
        if abs(prev - cur) < cfg.rel_tol * abs(cur):
            converged = True
            break
        prev = cur
    if not converged:
        warnings.warn(f"smoothing-parameter search did not converge in {cfg.max_sweeps} sweeps",
                      RuntimeWarning, stacklevel=2)
    return LambdaSearch(10.0 ** rho, float(cur), converged, sweeps)
