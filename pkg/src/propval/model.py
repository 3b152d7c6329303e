"""Fitted GAM / hedonic models: fitting, prediction and term extraction."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .basis import BasisBlock
from .design import DesignMatrix, ModelSpec, Term, build_design
from .fit import FitError, GridConfig, optimize_lambdas, penalized_solve
from .ingest.geo import assign_regions, inverse_web_mercator
from .records import FEATURE_LABELS, FEATURES, records_to_arrays

log = logging.getLogger(__name__)

ARTIFACT_VERSION = 1
PI_LEVELS = (0.5, 0.95)
MAX_LOG = 700.0
MIN_SUBMARKET_RECORDS = 50


def z_value(level: float) -> float:
    """Two-sided Gaussian quantile, e.g. 1.95996 for 0.95."""
    return float(norm.ppf(0.5 + level / 2.0))


@dataclass(frozen=True, eq=False)
class FittedModel:
    spec: ModelSpec
    terms: tuple
    coef: np.ndarray
    lambdas: np.ndarray
    sigma2: float
    cov_factor: np.ndarray
    """Upper-triangular ``P`` with ``V_beta = P P'`` (zero rows for inactive columns)."""
    edf: dict
    absent_levels: dict
    """term label -> factor levels never seen in training (predictions rejected)."""
    diagnostics: dict = field(default_factory=dict)

    @property
    def slices(self):
        return DesignMatrix(np.empty((0, 0)), self.terms, self.spec).slices

    @property
    def column_labels(self):
        return [lab for t in self.terms for lab in t.column_labels]

    @property
    def edf_total(self):
        return float(sum(self.edf.values()))

    @property
    def cov(self):
        return self.cov_factor @ self.cov_factor.T

    @property
    def trained_submarkets(self):
        return tuple(self.diagnostics.get("trained_submarkets", ()))

    def term(self, label) -> tuple[Term, slice]:
        for t, sl in zip(self.terms, self.slices):
            if t.label == label:
                return t, sl
        raise KeyError(f"model has no term {label!r}")

    def design_rows(self, arrays):
        return np.hstack([t.rows(arrays) for t in self.terms])


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

def _inactive_columns(design: DesignMatrix, arrays):
    """Columns of factor levels absent from training, plus per-term absent sets.

    A missing non-reference level makes its coded column inestimable next
    to the intercept; its coefficient is pinned at 0. If the reference
    level itself is missing, the last present level is pinned as well so
    the remaining columns stay identifiable.
    """
    inactive = np.zeros(design.X.shape[1], dtype=bool)
    absent = {}
    for t, sl in zip(design.terms, design.slices):
        if t.kind != "factor" or t.width == 0:
            continue
        vals = arrays[t.variable]
        if t.by is not None:
            vals = vals[arrays["submarket"] == t.by]
        present = set(vals.tolist())
        miss = [lv for lv in t.levels if lv not in present]
        if not miss:
            continue
        absent[t.label] = miss
        cols = [j for j, lv in enumerate(t.levels[:-1]) if lv not in present]
        if t.levels[-1] not in present:
            here = [j for j, lv in enumerate(t.levels[:-1]) if lv in present]
            if here:
                cols.append(here[-1])
        inactive[sl.start + np.array(cols, dtype=int)] = True
    return inactive, absent


def fit_design(design: DesignMatrix, y, arrays, lambdas=None, grid: GridConfig | None = None):
    """Fit a pre-built design. Returns :class:`FittedModel`."""
    y = np.asarray(y, dtype=float)
    n, p = design.X.shape
    inactive, absent = _inactive_columns(design, arrays)
    active = np.flatnonzero(~inactive)
    remap = -np.ones(p, dtype=int)
    remap[active] = np.arange(len(active))
    Xa = design.X[:, active]
    pens = []
    for sl, S in design.penalties():
        idx = remap[sl]
        if np.any(idx < 0):
            raise FitError("penalized block with inactive columns")
        pens.append((slice(idx[0], idx[-1] + 1), S))
    col_terms = [t.label for t, sl in zip(design.terms, design.slices) for _ in range(t.width)]
    labels = [(slice(i, i + 1), col_terms[j]) for i, j in enumerate(active)]
    problem = (Xa, pens, labels)

    if design.spec.interact_smooths or design.spec.interact_type:
        counts = dict(zip(*np.unique(arrays["submarket"], return_counts=True)))
        thin = sorted(s for s, c in counts.items() if c < MIN_SUBMARKET_RECORDS)
        if thin:
            log.warning("submarket-specific terms fitted on fewer than %d records in %s; "
                        "expect unstable extrapolation", MIN_SUBMARKET_RECORDS, ", ".join(thin))
    diag = {"n": n, "columns": p}
    if pens:
        if lambdas is None:
            search = optimize_lambdas(problem, y, grid)
            lambdas = search.lambdas
            diag.update(gcv=search.gcv, converged=search.converged, sweeps=search.sweeps)
        lambdas = np.asarray(lambdas, dtype=float)
    else:
        lambdas = np.zeros(0)
    sol = penalized_solve(problem, y, lambdas)

    coef = np.zeros(p)
    coef[active] = sol.coef
    P = np.zeros((p, p))
    P[np.ix_(active, active)] = sol.cov_factor
    edf_cols = np.zeros(p)
    edf_cols[active] = sol.edf_columns
    edf = {t.label: float(edf_cols[sl].sum()) for t, sl in zip(design.terms, design.slices)}
    tss = float(((y - y.mean()) ** 2).sum())
    diag.update(
        rss=sol.rss, edf=sol.edf, gcv=diag.get("gcv", n * sol.rss / (n - sol.edf) ** 2),
        deviance_explained=1.0 - sol.rss / tss if tss > 0 else float("nan"),
        trained_submarkets=sorted(set(arrays["submarket"].tolist())),
    )
    if sol.sigma2 <= 0:
        log.warning("residual variance is zero (interpolating fit)")
    return FittedModel(design.spec, design.terms, coef, lambdas, sol.sigma2, P, edf, absent, diag)


def fit_model(records, spec: ModelSpec, graph=None, lambdas=None,
              grid: GridConfig | None = None) -> FittedModel:
    """Build the design for ``spec``, select λ by GCV (GAMs) and solve."""
    arrays = records_to_arrays(records)
    design = build_design(records, spec, graph, arrays=arrays)
    return fit_design(design, arrays["log_ppsm"], arrays, lambdas, grid)


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Prediction:
    id: str
    log_ppsm: float
    se: float
    price: float
    intervals: dict
    """level -> (lower, upper) in euro."""

    def lower(self, level):
        return self.intervals[level][0]

    def upper(self, level):
        return self.intervals[level][1]


@dataclass(frozen=True)
class PredictionError:
    id: str
    reason: str


def _check_records(model: FittedModel, arrays):
    n = len(arrays["submarket"])
    reasons = [None] * n
    trained = set(model.trained_submarkets)
    mrf = [t for t in model.terms if t.kind == "smooth" and t.variable == "region"]
    m = mrf[0].block.params["n_regions"] if mrf else None
    for i in range(n):
        s = arrays["submarket"][i]
        if s not in model.spec.submarkets or (trained and s not in trained):
            reasons[i] = f"submarket {s!r} not seen in training"
        elif m is not None and not 0 <= arrays["region_id"][i] < m:
            reasons[i] = f"unknown region id {arrays['region_id'][i]}"
    for t in model.terms:
        if t.kind != "factor":
            continue
        miss = set(model.absent_levels.get(t.label, ()))
        for i in range(n):
            if reasons[i] is not None:
                continue
            if t.by is not None and arrays["submarket"][i] != t.by:
                continue
            v = arrays[t.variable][i]
            if v not in t.levels:
                reasons[i] = f"unknown {t.variable} level {v!r}"
            elif v in miss:
                reasons[i] = f"{t.variable} level {v!r} not seen in training ({t.label})"
    return reasons


def predict_arrays(model: FittedModel, arrays):
    """``(mu, se, reasons)`` for column arrays; invalid rows have NaN and a reason."""
    reasons = _check_records(model, arrays)
    ok = np.array([r is None for r in reasons], dtype=bool)
    n = len(ok)
    mu = np.full(n, np.nan)
    se = np.full(n, np.nan)
    if ok.any():
        sub = {k: v[ok] for k, v in arrays.items()}
        X = model.design_rows(sub)
        mu[ok] = X @ model.coef
        se[ok] = np.sqrt(((X @ model.cov_factor) ** 2).sum(axis=1))
    return mu, se, reasons


def predict(model: FittedModel, records, levels=PI_LEVELS) -> list:
    """Predictions with euro-scale intervals.

    Records that cannot be scored (unseen level, submarket or region) yield
    :class:`PredictionError` entries in place; the batch continues.
    """
    arrays = records_to_arrays(records)
    mu, se, reasons = predict_arrays(model, arrays)
    out = []
    zs = {lv: z_value(lv) for lv in levels}
    for i, r in enumerate(records):
        if reasons[i] is not None:
            out.append(PredictionError(r.id, reasons[i]))
            continue
        if not abs(mu[i]) < MAX_LOG:
            out.append(PredictionError(r.id, "predicted log price per m2 out of range"))
            continue
        sd = math.sqrt(se[i] ** 2 + model.sigma2)
        # very wide bands (poorly identified terms) saturate at 0 / inf
        iv = {
            lv: (_exp(mu[i] - z * sd) * r.size, _exp(mu[i] + z * sd) * r.size)
            for lv, z in zs.items()
        }
        out.append(Prediction(r.id, float(mu[i]), float(se[i]), math.exp(mu[i]) * r.size, iv))
    return out


def _exp(v):
    return math.inf if v > MAX_LOG else math.exp(v)


# ---------------------------------------------------------------------------
# parametric summaries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Scaling:
    term: str
    level: str
    log_effect: float
    se: float
    estimate: float
    lower: float
    upper: float

    def formatted(self) -> str:
        return f"{self.estimate:.2f} [{self.lower:.2f}, {self.upper:.2f}]"


def scaling_row(term, level, beta, se, z=1.96) -> Scaling:
    """``exp(beta)`` with the interval ``exp(beta -/+ z se)``."""
    return Scaling(term, level, float(beta), float(se), math.exp(beta),
                   math.exp(beta - z * se), math.exp(beta + z * se))


def summarize_parametric(model: FittedModel) -> list[Scaling]:
    """Multiplicative scalings for every parametric coefficient.

    Deviation-coded factors are decoded to all levels (the reference
    included); levels absent from training are omitted.
    """
    out = []
    for t, sl in zip(model.terms, model.slices):
        P = model.cov_factor[sl]
        if t.kind == "features":
            se = np.sqrt((P ** 2).sum(axis=1))
            for j, f in enumerate(FEATURES):
                out.append(scaling_row(t.label, FEATURE_LABELS.get(f, f), model.coef[sl][j], se[j]))
        elif t.kind == "linear":
            se = math.sqrt((P ** 2).sum())
            out.append(scaling_row(t.label, t.variable, model.coef[sl][0], se))
        elif t.kind == "factor" and t.width:
            dec = t.decoder
            eff = dec.effects(model.coef[sl])
            CP = dec.contrast @ P
            se = np.sqrt((CP ** 2).sum(axis=1))
            miss = set(model.absent_levels.get(t.label, ()))
            for lv, b, s in zip(t.levels, eff, se):
                if lv not in miss:
                    out.append(scaling_row(t.label, lv, b, s))
    return out


def format_scalings(rows) -> str:
    lines = ["term,level,scaling,lower,upper,formatted"]
    for r in rows:
        lines.append(f'{r.term},{r.level},{r.estimate!r},{r.lower!r},{r.upper!r},"{r.formatted()}"')
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# smooth curves, spatial surfaces, inflation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SmoothCurve:
    label: str
    x: np.ndarray
    fit: np.ndarray
    se: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def smooth_label(term: str, submarket: str | None = None) -> str:
    return f"s({term})" if submarket is None else f"s({term})[{submarket}]"


def default_grid(block: BasisBlock, variable: str, size=100):
    if variable == "month":
        return np.arange(1.0, 13.0)
    if block.kind == "pspline":
        lo, hi = block.knots[3], block.knots[-4]
    else:
        lo, hi = block.knots[0], block.knots[-1]
    return np.linspace(lo, hi, size)


def extract_smooth(model: FittedModel, term: str, submarket=None, grid=None,
                   level=0.95) -> SmoothCurve:
    """A centered smooth on a covariate grid with a pointwise band.

    Month curves are shifted so the first grid point sits at zero.
    """
    label = smooth_label(term, submarket)
    t, sl = model.term(label)
    x = default_grid(t.block, t.variable) if grid is None else np.asarray(grid, dtype=float)
    rows = t.block.evaluate(x)
    if t.variable == "month":
        rows = rows - rows[0]
    fit = rows @ model.coef[sl]
    se = np.sqrt(((rows @ model.cov_factor[sl]) ** 2).sum(axis=1))
    z = z_value(level)
    return SmoothCurve(label, x, fit, se, fit - z * se, fit + z * se)


@dataclass(frozen=True)
class SpatialSurface:
    x: np.ndarray
    y: np.ndarray
    gp: np.ndarray
    mrf: np.ndarray
    fused: np.ndarray
    region: np.ndarray


def spatial_components(model: FittedModel, xy, region_ids):
    """Intercept, GP and MRF contributions at given locations."""
    gp_t, gp_sl = model.term(smooth_label("location"))
    mrf_t, mrf_sl = model.term(smooth_label("region"))
    b0 = model.coef[model.term("intercept")[1]][0]
    gp = gp_t.block.evaluate(np.atleast_2d(xy)) @ model.coef[gp_sl]
    mrf = mrf_t.block.evaluate(np.asarray(region_ids)) @ model.coef[mrf_sl]
    return b0, gp, mrf


def extract_spatial_surface(model: FittedModel, graph, grid_x, grid_y) -> SpatialSurface:
    """GP, MRF and fused euro/m² rasters on a Mercator grid.

    Cells outside every region are NaN in all three rasters.
    """
    if not model.spec.has_smooths:
        raise ValueError("hedonic models carry no spatial surface")
    gx, gy = np.meshgrid(np.asarray(grid_x, float), np.asarray(grid_y, float))
    lon, lat = inverse_web_mercator(gx.ravel(), gy.ravel())
    reg = assign_regions(lon, lat, graph)
    inside = reg >= 0
    gp = np.full(reg.shape, np.nan)
    mrf = np.full(reg.shape, np.nan)
    fused = np.full(reg.shape, np.nan)
    if inside.any():
        xy = np.column_stack([gx.ravel()[inside], gy.ravel()[inside]])
        b0, g, m = spatial_components(model, xy, reg[inside])
        gp[inside], mrf[inside] = g, m
        fused[inside] = np.exp(b0 + g + m)
    shape = gx.shape
    return SpatialSurface(np.asarray(grid_x, float), np.asarray(grid_y, float),
                          gp.reshape(shape), mrf.reshape(shape), fused.reshape(shape),
                          reg.reshape(shape))


def write_raster(surface: SpatialSurface, name: str, stream) -> None:
    """Delimited ``x,y,value`` rows (masked cells omitted)."""
    values = getattr(surface, name)
    stream.write("x,y,value\n")
    for i, yv in enumerate(surface.y):
        for j, xv in enumerate(surface.x):
            v = values[i, j]
            if np.isfinite(v):
                stream.write(f"{float(xv)!r},{float(yv)!r},{float(v)!r}\n")


def monthly_inflation(model: FittedModel) -> dict:
    """Month-on-month price ratios from the month smooth(s).

    Keys are submarkets for interacted models, ``"all"`` otherwise; each
    value has twelve entries with the first fixed at 1.0.
    """
    out = {}
    for t, sl in zip(model.terms, model.slices):
        if t.kind == "smooth" and t.variable == "month":
            f = t.block.evaluate(np.arange(1.0, 13.0)) @ model.coef[sl]
            out[t.by or "all"] = np.concatenate([[1.0], np.exp(np.diff(f))])
    return out


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _arr(a):
    return None if a is None else {"shape": list(np.shape(a)), "data": np.ravel(a).tolist()}


def _unarr(d):
    return None if d is None else np.array(d["data"], dtype=float).reshape(d["shape"])


def _block_to_dict(b: BasisBlock):
    params = {}
    for k, v in b.params.items():
        if k == "raw_penalty":
            continue
        params[k] = _arr(v) if isinstance(v, np.ndarray) else v
    return {"label": b.label, "kind": b.kind, "knots": _arr(b.knots),
            "transform": _arr(b.transform), "params": params}


def _block_from_dict(d):
    params = {k: (_unarr(v) if isinstance(v, dict) else v) for k, v in d["params"].items()}
    return BasisBlock(d["label"], d["kind"], None, None, _unarr(d["knots"]),
                      _unarr(d["transform"]), params)


def model_to_dict(model: FittedModel, metadata=None) -> dict:
    p = len(model.coef)
    iu = np.triu_indices(p)
    terms = []
    for t in model.terms:
        terms.append({
            "label": t.label, "kind": t.kind, "variable": t.variable, "width": t.width,
            "by": t.by, "levels": list(t.levels), "column_labels": list(t.column_labels),
            "block": None if t.block is None else _block_to_dict(t.block),
        })
    return {
        "format": "propval-model", "version": ARTIFACT_VERSION,
        "metadata": dict(metadata or {}),
        "spec": model.spec.as_dict(), "terms": terms,
        "coef": model.coef.tolist(), "lambdas": np.asarray(model.lambdas).tolist(),
        "sigma2": model.sigma2, "cov_factor_upper": model.cov_factor[iu].tolist(),
        "edf": model.edf, "absent_levels": model.absent_levels,
        "diagnostics": model.diagnostics,
    }


def model_from_dict(d) -> FittedModel:
    if d.get("format") != "propval-model":
        raise ValueError("not a model artifact")
    if d.get("version") != ARTIFACT_VERSION:
        raise ValueError(f"unsupported model artifact version {d.get('version')}")
    terms = tuple(
        Term(t["label"], t["kind"], t["variable"], t["width"], t["by"], tuple(t["levels"]),
             None if t["block"] is None else _block_from_dict(t["block"]),
             tuple(t["column_labels"]))
        for t in d["terms"]
    )
    coef = np.array(d["coef"], dtype=float)
    p = len(coef)
    P = np.zeros((p, p))
    P[np.triu_indices(p)] = d["cov_factor_upper"]
    return FittedModel(ModelSpec.from_dict(d["spec"]), terms, coef,
                       np.array(d["lambdas"], dtype=float), float(d["sigma2"]), P,
                       dict(d["edf"]), {k: list(v) for k, v in d["absent_levels"].items()},
                       dict(d["diagnostics"]))


def save_model(model: FittedModel, path, metadata=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model, metadata), fh)


def load_model(path) -> FittedModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
