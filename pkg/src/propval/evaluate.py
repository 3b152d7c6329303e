"""Cross-validation, accuracy metrics and residual spatial autocorrelation."""
from __future__ import annotations

import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from scipy.spatial import cKDTree

from .design import ModelSpec
from .forest import ForestConfig, grow_forest, rf_predict
from .model import PredictionError, fit_model, predict
from .records import SUBMARKETS, records_to_arrays

log = logging.getLogger(__name__)

MODEL_NAMES = {"hedonic": "Hedonic Model", "ngam": "N-GAM", "sgam": "S-GAM", "rf": "Random Forest"}
MODEL_FAMILIES = tuple(MODEL_NAMES)
ELBOW_TOL = 0.005


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricsReport:
    r2: float
    rmse: float
    mape: float
    within_5pct: float
    within_10pct: float
    pi50_coverage: float
    pi95_coverage: float
    morans_i: float
    n: int

    def as_dict(self):
        return asdict(self)


METRIC_FIELDS = tuple(f.name for f in fields(MetricsReport))


def compute_metrics(pred, actual, intervals=None, strict=True) -> MetricsReport:
    """Accuracy on the euro scale.

    ``intervals`` maps a level (0.5, 0.95) to ``(lower, upper)`` arrays.
    With zero variance in ``actual`` the R² is undefined: an error, or NaN
    when ``strict`` is False.
    """
    p = np.asarray(pred, dtype=float)
    a = np.asarray(actual, dtype=float)
    if p.shape != a.shape or p.ndim != 1:
        raise ValueError("pred and actual must be equal-length vectors")
    if len(a) == 0:
        raise ValueError("no observations")
    if np.any(~(a > 0)):
        raise ValueError("actual prices must be positive")
    err = p - a
    sst = float(((a - a.mean()) ** 2).sum())
    if sst == 0:
        if strict:
            raise ValueError("r2 undefined: zero variance in actual prices")
        r2 = float("nan")
    else:
        r2 = 1.0 - float((err ** 2).sum()) / sst
    rel = np.abs(err) / a
    cov = {}
    for lv in (0.5, 0.95):
        if intervals and lv in intervals:
            lo, hi = (np.asarray(v, dtype=float) for v in intervals[lv])
            cov[lv] = float(np.mean((lo <= a) & (a <= hi)))
        else:
            cov[lv] = float("nan")
    return MetricsReport(
        r2=r2, rmse=float(np.sqrt(np.mean(err ** 2))), mape=float(np.median(rel)),
        within_5pct=float(np.mean(rel <= 0.05)), within_10pct=float(np.mean(rel <= 0.10)),
        pi50_coverage=cov[0.5], pi95_coverage=cov[0.95], morans_i=float("nan"), n=len(a),
    )


def mean_report(reports) -> MetricsReport:
    """Field-wise mean over folds (``n`` is summed)."""
    vals = {}
    for f in METRIC_FIELDS:
        xs = [getattr(r, f) for r in reports]
        vals[f] = int(sum(xs)) if f == "n" else float(np.mean(xs))
    return MetricsReport(**vals)


# ---------------------------------------------------------------------------
# Moran's I
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WeightSpec:
    k: int = 20
    weighting: str = "inverse_distance"
    row_standardize: bool = True
    min_distance: float = 1.0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.weighting not in ("inverse_distance", "binary"):
            raise ValueError(f"unknown weighting {self.weighting!r}")


@dataclass(frozen=True)
class MoranResult:
    i: float
    p_value: float
    expected: float
    n: int
    in_range: bool


def knn_weights(coords, spec: WeightSpec = WeightSpec()):
    """``(neighbour index, weight)`` arrays of shape ``(n, k)``; self excluded."""
    xy = np.asarray(coords, dtype=float)
    n = len(xy)
    k = min(spec.k, n - 1)
    d, j = cKDTree(xy).query(xy, k=k + 1)
    d = d.reshape(n, k + 1)
    j = j.reshape(n, k + 1)
    nbr = np.empty((n, k), dtype=np.int64)
    dist = np.empty((n, k))
    for i in range(n):
        keep = np.flatnonzero(j[i] != i)[:k]
        nbr[i] = j[i, keep]
        dist[i] = d[i, keep]
    if spec.weighting == "inverse_distance":
        w = 1.0 / np.maximum(dist, spec.min_distance)
    else:
        w = np.ones_like(dist)
    if spec.row_standardize:
        w = w / w.sum(axis=1, keepdims=True)
    return nbr, w


def _moran_stat(z, nbr, w, s0):
    return len(z) / s0 * float(z @ (w * z[nbr]).sum(axis=1)) / float(z @ z)


def morans_i(residuals, coords, spec: WeightSpec = WeightSpec(), permutations=999,
             seed=12345) -> MoranResult:
    """Moran's I with a permutation pseudo p-value (folded, as in PySAL)."""
    r = np.asarray(residuals, dtype=float)
    n = len(r)
    if n < 3:
        raise ValueError("Moran's I needs at least 3 observations")
    z = r - r.mean()
    if not np.any(z):
        raise ValueError("zero variance in residuals")
    nbr, w = knn_weights(coords, spec)
    s0 = float(w.sum())
    stat = _moran_stat(z, nbr, w, s0)
    p = float("nan")
    if permutations:
        rng = np.random.default_rng(seed)
        sims = np.array([_moran_stat(z[rng.permutation(n)], nbr, w, s0)
                         for _ in range(permutations)])
        larger = int((sims >= stat).sum())
        if permutations - larger < larger:
            larger = permutations - larger
        p = (larger + 1.0) / (permutations + 1.0)
    if not -1.0 <= stat <= 1.0:
        log.warning("Moran's I %.4f outside [-1, 1]", stat)
    return MoranResult(stat, p, -1.0 / (n - 1), n, -1.0 <= stat <= 1.0)


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HeldOut:
    """Pooled held-out predictions for one model (record order of the input)."""

    ids: tuple
    fold: np.ndarray
    submarket: np.ndarray
    actual: np.ndarray
    pred: np.ndarray
    log_resid: np.ndarray
    intervals: dict
    ok: np.ndarray


@dataclass(frozen=True, eq=False)
class CVResult:
    models: tuple
    folds: list
    per_fold: dict
    national: dict
    submarkets: dict
    heldout: dict
    morans: dict = field(default_factory=dict)


def fold_indices(n, k, seed) -> list[np.ndarray]:
    """Seeded random partition into ``k`` folds whose sizes differ by at most 1."""
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def _fit_predict(family, train, test, graph, spec_overrides, forest_config):
    if family == "rf":
        cfg = forest_config or ForestConfig()
        forest = grow_forest(train, cfg, n_regions=len(graph) if graph is not None else None,
                             county_labels=graph.county_labels() if graph is not None else None)
        preds = rf_predict(forest, test)
        return [(p.log_ppsm, p.price, p.intervals) for p in preds]
    spec = ModelSpec(family=family, **(spec_overrides or {}))
    model = fit_model(train, spec, graph)
    out = []
    for p in predict(model, test):
        out.append(None if isinstance(p, PredictionError) else (p.log_ppsm, p.price, p.intervals))
    return out


def kfold_cv(records, models=("sgam", "ngam", "hedonic", "rf"), k=5, seed=0, graph=None,
             spec_overrides=None, forest_config=None, weights: WeightSpec = WeightSpec(),
             n_threads=1, moran_permutations=0) -> CVResult:
    """k-fold cross-validation of several model families.

    National metrics are fold means; submarket tables pool held-out
    predictions. Moran's I is computed per fold on held-out log residuals
    and averaged; ``morans`` also holds the pooled statistic.
    """
    n = len(records)
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > n:
        raise ValueError("more folds than records")
    if n < 10 * k:
        log.warning("only %d records for %d folds", n, k)
    for m in models:
        if m not in MODEL_FAMILIES:
            raise ValueError(f"unknown model {m!r}")
    folds = fold_indices(n, k, seed)
    arrays = records_to_arrays(records)
    fold_of = np.empty(n, dtype=int)
    for f, idx in enumerate(folds):
        fold_of[idx] = f
        miss = set(SUBMARKETS) & set(arrays["submarket"].tolist())
        miss -= set(arrays["submarket"][np.setdiff1d(np.arange(n), idx)].tolist())
        if miss:
            log.warning("fold %d: training data lacks submarket(s) %s", f, sorted(miss))

    tasks = [(m, f) for m in models for f in range(k)]

    def run(task):
        m, f = task
        test_idx = folds[f]
        train_idx = np.setdiff1d(np.arange(n), test_idx)
        train = [records[i] for i in train_idx]
        test = [records[i] for i in test_idx]
        return _fit_predict(m, train, test, graph, spec_overrides, forest_config)

    if n_threads and n_threads > 1:
        with ThreadPoolExecutor(n_threads) as ex:
            outputs = list(ex.map(run, tasks))
    else:
        outputs = [run(t) for t in tasks]
    results = dict(zip(tasks, outputs))

    coords = np.column_stack([arrays["x"], arrays["y"]])
    per_fold, national, subs, held, morans = {}, {}, {}, {}, {}
    for m in models:
        pred = np.full(n, np.nan)
        logp = np.full(n, np.nan)
        iv = {lv: (np.full(n, np.nan), np.full(n, np.nan)) for lv in (0.5, 0.95)}
        for f in range(k):
            for i, out in zip(folds[f], results[(m, f)]):
                if out is None:
                    continue
                logp[i], pred[i], ints = out
                for lv in iv:
                    iv[lv][0][i], iv[lv][1][i] = ints[lv]
        ok = np.isfinite(pred)
        if (~ok).any():
            log.warning("%s: %d held-out records could not be scored", m, int((~ok).sum()))
        resid = arrays["log_ppsm"] - logp
        held[m] = HeldOut(tuple(r.id for r in records), fold_of, arrays["submarket"],
                          arrays["price"], pred, resid, iv, ok)
        reps = []
        for f in range(k):
            idx = folds[f][ok[folds[f]]]
            if len(idx) == 0:
                continue
            rep = compute_metrics(pred[idx], arrays["price"][idx],
                                  {lv: (iv[lv][0][idx], iv[lv][1][idx]) for lv in iv}, strict=False)
            if len(idx) >= 3 and np.any(resid[idx] != resid[idx].mean()):
                mi = morans_i(resid[idx], coords[idx], weights, permutations=0).i
                rep = replace(rep, morans_i=mi)
            reps.append(rep)
        per_fold[m] = reps
        national[m] = mean_report(reps)
        if ok.sum() >= 3 and np.any(resid[ok] != resid[ok].mean()):
            morans[m] = morans_i(resid[ok], coords[ok], weights, permutations=moran_permutations)
        subs[m] = {}
        for s in SUBMARKETS:
            idx = np.flatnonzero(ok & (arrays["submarket"] == s))
            if len(idx) == 0:
                continue
            subs[m][s] = compute_metrics(pred[idx], arrays["price"][idx],
                                         {lv: (iv[lv][0][idx], iv[lv][1][idx]) for lv in iv},
                                         strict=False)
    return CVResult(tuple(models), folds, per_fold, national, subs, held, morans)


# ---------------------------------------------------------------------------
# knot selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KnotCurve:
    term: str
    ks: tuple
    r2: tuple
    within_5pct: tuple
    mape: tuple
    suggested: int | None


def suggest_knots(ks, r2, tol=ELBOW_TOL):
    """Smallest candidate whose R² is within ``tol`` of the best."""
    if not len(ks):
        return None
    r2 = np.asarray(r2, dtype=float)
    best = np.nanmax(r2)
    ok = [k for k, v in sorted(zip(ks, r2)) if v >= best - tol]
    return int(ok[0])


def knot_selection_cv(records, term, candidate_ks, k=5, seed=0, graph=None, family="sgam",
                      spec_overrides=None, n_threads=1) -> KnotCurve:
    """Cross-validated accuracy as a function of the knot count of one term."""
    if term not in ("size", "location"):
        raise ValueError("term must be 'size' or 'location'")
    a = records_to_arrays(records)
    if term == "size":
        distinct = len(np.unique(a["size"]))
    else:
        distinct = len(np.unique(np.column_stack([a["x"], a["y"]]), axis=0))
    rows = []
    for kk in candidate_ks:
        kk = int(kk)
        if kk > distinct:
            log.warning("skipping %d knots for %s: only %d distinct values", kk, term, distinct)
            continue
        over = dict(spec_overrides or {})
        knots = dict(over.pop("knots", {}))
        knots[term] = kk
        res = kfold_cv(records, (family,), k=k, seed=seed, graph=graph,
                       spec_overrides={**over, "knots": knots}, n_threads=n_threads)
        rep = res.national[family]
        rows.append((kk, rep.r2, rep.within_5pct, rep.mape))
    ks = tuple(r[0] for r in rows)
    return KnotCurve(term, ks, tuple(r[1] for r in rows), tuple(r[2] for r in rows),
                     tuple(r[3] for r in rows), suggest_knots(ks, [r[1] for r in rows]))


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def _fmt(v, nd=6):
    return "NA" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.{nd}f}"


def metrics_csv(national: dict, per_fold: dict | None = None) -> str:
    """Delimited national table (one row per model, optional per-fold rows)."""
    out = io.StringIO()
    out.write("model,fold," + ",".join(METRIC_FIELDS) + "\n")
    for m, rep in national.items():
        out.write(f"{m},mean," + ",".join(_fmt(getattr(rep, f)) if f != "n" else str(rep.n)
                                           for f in METRIC_FIELDS) + "\n")
        for f, r in enumerate((per_fold or {}).get(m, [])):
            out.write(f"{m},{f}," + ",".join(_fmt(getattr(r, x)) if x != "n" else str(r.n)
                                            for x in METRIC_FIELDS) + "\n")
    return out.getvalue()


def submarket_csv(subs: dict) -> str:
    out = io.StringIO()
    out.write("model,submarket," + ",".join(METRIC_FIELDS) + "\n")
    for m, table in subs.items():
        for s, rep in table.items():
            out.write(f"{m},{s}," + ",".join(_fmt(getattr(rep, f)) if f != "n" else str(rep.n)
                                            for f in METRIC_FIELDS) + "\n")
    return out.getvalue()


def _euro(v):
    return "NA" if math.isnan(v) else f"€{v:,.0f}"


def _pct(v):
    return "NA" if math.isnan(v) else f"{100 * v:.1f}%"


def _num(v):
    return "NA" if math.isnan(v) else f"{v:.2f}"


def comparison_table(national: dict) -> str:
    """Plain-text comparison laid out like a national CV results table."""
    head = ("Model", "R2", "RMSE", "MAPE", "Within 5%", "Within 10%", "Within 50% PI",
            "Within 95% PI", "Moran's I")
    rows = [head]
    for m, r in national.items():
        rows.append((MODEL_NAMES.get(m, m), _num(r.r2), _euro(r.rmse), _num(r.mape),
                     _pct(r.within_5pct), _pct(r.within_10pct), _pct(r.pi50_coverage),
                     _pct(r.pi95_coverage), _num(r.morans_i)))
    return _layout(rows)


def submarket_table(subs: dict) -> str:
    head = ("Model", "Submarket", "R2", "RMSE", "MAPE", "Within 5%", "Within 10%",
            "Within 50% PI", "Within 95% PI")
    rows = [head]
    order = ("Rural", "Towns", "Dublin", "Cork", "Limerick", "Galway")
    for m, table in subs.items():
        for s in order:
            if s in table:
                r = table[s]
                rows.append((MODEL_NAMES.get(m, m), s, _num(r.r2), _euro(r.rmse), _num(r.mape),
                             _pct(r.within_5pct), _pct(r.within_10pct), _pct(r.pi50_coverage),
                             _pct(r.pi95_coverage)))
    return _layout(rows, 2)


def _layout(rows, n_labels=1):
    """Left-align the first ``n_labels`` columns and right-align the rest."""
    widths = [max(len(str(r[j])) for r in rows) for j in range(len(rows[0]))]
    lines = []
    for i, r in enumerate(rows):
        cells = [str(v).ljust(w) if j < n_labels else str(v).rjust(w)
                 for j, (v, w) in enumerate(zip(r, widths))]
        lines.append("  ".join(cells).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def knot_curve_csv(curve: KnotCurve) -> str:
    out = io.StringIO()
    out.write("term,k,r2,within_5pct,mape,suggested\n")
    for kk, r2, w5, mp in zip(curve.ks, curve.r2, curve.within_5pct, curve.mape):
        out.write(f"{curve.term},{kk},{_fmt(r2)},{_fmt(w5)},{_fmt(mp)},"
                  f"{int(kk == curve.suggested)}\n")
    return out.getvalue()
