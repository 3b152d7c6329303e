"""Random-forest regression on log price per m².

CART trees grown on bootstrap samples. At each node ``mtry`` features are
drawn without replacement; if none of them admits a valid split, further
features are tried in the same random order. Numeric features split on
midpoints between distinct values. Categorical features split into two
level sets: exhaustively over subsets when at most ten levels are present
in the node, otherwise by ordering levels by their mean response and
scanning prefixes. Every child must hold at least ``min_node_size`` rows.

Each tree draws from its own stream ``default_rng([seed, tree])``, so the
forest is identical whatever the thread count.
"""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .records import BER_LEVELS, FEATURES, PROPERTY_TYPES, SUBMARKETS, records_to_arrays

log = logging.getLogger(__name__)

NUMERIC = 0
CATEGORICAL = 1
EXHAUSTIVE_MAX_LEVELS = 10
ARTIFACT_VERSION = 1


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 500
    mtry: int = 7
    min_node_size: int = 5
    sample_fraction: float = 1.0
    bootstrap: bool = True
    seed: int = 0
    n_threads: int | None = None

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.mtry < 1:
            raise ValueError("mtry must be >= 1")
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be >= 1")
        if not 0 < self.sample_fraction <= 1:
            raise ValueError("sample_fraction must lie in (0, 1]")


# ---------------------------------------------------------------------------
# feature schema
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureSchema:
    """Column layout of the forest's feature matrix.

    ``levels[j]`` is the level tuple of categorical column ``j`` (empty for
    numeric columns). ``county_of_region`` maps region ids to county codes
    when a county column is present.
    """

    names: tuple
    kinds: tuple
    levels: tuple
    county_of_region: tuple = ()

    @property
    def n_levels(self):
        return np.array([len(lv) for lv in self.levels], dtype=np.int64)

    def matrix(self, arrays) -> np.ndarray:
        n = len(arrays["submarket"])
        cols = []
        for name, kind, levels in zip(self.names, self.kinds, self.levels):
            if name in FEATURES:
                cols.append(arrays["features"][:, FEATURES.index(name)])
            elif name == "region":
                r = np.asarray(arrays["region_id"], dtype=np.int64)
                cols.append(np.where((r >= 0) & (r < len(levels)), r, -1).astype(float))
            elif name == "county":
                r = np.asarray(arrays["region_id"], dtype=np.int64)
                cmap = np.asarray(self.county_of_region, dtype=float)
                ok = (r >= 0) & (r < len(cmap))
                c = np.full(n, -1.0)
                c[ok] = cmap[r[ok]]
                cols.append(c)
            elif kind == CATEGORICAL:
                index = {lv: i for i, lv in enumerate(levels)}
                cols.append(np.array([index.get(v, -1) for v in arrays[name]], dtype=float))
            else:
                cols.append(np.asarray(arrays[name], dtype=float))
        return np.column_stack(cols) if cols else np.zeros((n, 0))

    def as_dict(self):
        return {"names": list(self.names), "kinds": list(self.kinds),
                "levels": [list(lv) for lv in self.levels],
                "county_of_region": list(self.county_of_region)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["names"]), tuple(d["kinds"]),
                   tuple(tuple(lv) for lv in d["levels"]), tuple(d["county_of_region"]))


def default_schema(n_regions: int, county_labels=None) -> FeatureSchema:
    """Structural, temporal and locational covariates plus region and county."""
    names = ["beds", "baths", "size", "month", "x", "y", *FEATURES,
             "ber", "property_type", "submarket", "region"]
    kinds = [NUMERIC] * (6 + len(FEATURES)) + [CATEGORICAL] * 4
    levels = [()] * (6 + len(FEATURES)) + [BER_LEVELS, PROPERTY_TYPES, SUBMARKETS,
                                           tuple(range(n_regions))]
    cmap = ()
    if county_labels is not None:
        counties = tuple(sorted(set(county_labels)))
        idx = {c: i for i, c in enumerate(counties)}
        cmap = tuple(idx[c] for c in county_labels)
        names.append("county")
        kinds.append(CATEGORICAL)
        levels.append(counties)
    return FeatureSchema(tuple(names), tuple(kinds), tuple(levels), cmap)


# ---------------------------------------------------------------------------
# tree growth (compiled)
# ---------------------------------------------------------------------------

@nb.njit(cache=True, nogil=True)
def _sse_gain(sl, nl, sr, nr, s, n):
    return sl * sl / nl + sr * sr / nr - s * s / n


@nb.njit(cache=True, nogil=True)
def _best_numeric(x, y, idx, start, end, min_node):
    n = end - start
    vals = np.empty(n)
    ys = np.empty(n)
    for i in range(n):
        vals[i] = x[idx[start + i]]
        ys[i] = y[idx[start + i]]
    order = np.argsort(vals, kind="mergesort")
    tot = 0.0
    for i in range(n):
        tot += ys[i]
    best = -np.inf
    thr = np.nan
    sl = 0.0
    for i in range(n - 1):
        sl += ys[order[i]]
        nl = i + 1
        nr = n - nl
        a = vals[order[i]]
        b = vals[order[i + 1]]
        if a == b or nl < min_node or nr < min_node:
            continue
        g = _sse_gain(sl, nl, tot - sl, nr, tot, n)
        if g > best:
            best = g
            t = 0.5 * (a + b)
            thr = a if t >= b else t
    return best, thr


@nb.njit(cache=True, nogil=True)
def _best_categorical(x, y, idx, start, end, n_levels, min_node, mask_out):
    n = end - start
    cnt = np.zeros(n_levels, np.int64)
    sm = np.zeros(n_levels)
    tot = 0.0
    for i in range(start, end):
        c = int(x[idx[i]])
        cnt[c] += 1
        sm[c] += y[idx[i]]
        tot += y[idx[i]]
    present = np.flatnonzero(cnt > 0)
    k = len(present)
    best = -np.inf
    mask_out[:] = 0
    if k < 2:
        return best
    if k <= 10:
        best_bits = 0
        for bits in range(1, 1 << (k - 1)):
            nl = 0
            sl = 0.0
            for j in range(k - 1):
                if (bits >> j) & 1:
                    nl += cnt[present[j]]
                    sl += sm[present[j]]
            nr = n - nl
            if nl < min_node or nr < min_node:
                continue
            g = _sse_gain(sl, nl, tot - sl, nr, tot, n)
            if g > best:
                best = g
                best_bits = bits
        if best > -np.inf:
            for j in range(k - 1):
                if (best_bits >> j) & 1:
                    lv = present[j]
                    mask_out[lv // 64] |= np.uint64(1) << np.uint64(lv % 64)
        return best
    means = np.empty(k)
    for j in range(k):
        means[j] = sm[present[j]] / cnt[present[j]]
    order = np.argsort(means, kind="mergesort")
    nl = 0
    sl = 0.0
    best_cut = -1
    for j in range(k - 1):
        nl += cnt[present[order[j]]]
        sl += sm[present[order[j]]]
        nr = n - nl
        if nl < min_node or nr < min_node:
            continue
        g = _sse_gain(sl, nl, tot - sl, nr, tot, n)
        if g > best:
            best = g
            best_cut = j
    for j in range(best_cut + 1):
        lv = present[order[j]]
        mask_out[lv // 64] |= np.uint64(1) << np.uint64(lv % 64)
    return best


@nb.njit(cache=True, nogil=True)
def _goes_left(v, kind, thr, mask):
    if kind == 0:
        return v <= thr
    c = int(v)
    if c < 0 or c // 64 >= mask.shape[0]:
        return False
    return (mask[c // 64] >> np.uint64(c % 64)) & np.uint64(1) == 1


@nb.njit(cache=True, nogil=True)
def _grow(X, y, kinds, n_levels, rows, keys, mtry, min_node, width):
    n = len(rows)
    p = X.shape[1]
    cap = 2 * n + 1
    feat = np.full(cap, -1, np.int64)
    thr = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    count = np.zeros(cap, np.int64)
    masks = np.zeros((cap, width), np.uint64)
    imp = np.zeros(p)
    idx = rows.copy()
    st_node = np.empty(cap, np.int64)
    st_lo = np.empty(cap, np.int64)
    st_hi = np.empty(cap, np.int64)
    top = 0
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = n
    top = 1
    n_nodes = 1
    tmp_mask = np.zeros(width, np.uint64)
    best_mask = np.zeros(width, np.uint64)
    while top > 0:
        top -= 1
        node = st_node[top]
        lo = st_lo[top]
        hi = st_hi[top]
        m = hi - lo
        s = 0.0
        ymin = np.inf
        ymax = -np.inf
        for i in range(lo, hi):
            v = y[idx[i]]
            s += v
            ymin = min(ymin, v)
            ymax = max(ymax, v)
        value[node] = s / m
        count[node] = m
        if m < 2 * min_node or ymin == ymax:
            continue
        order = np.argsort(keys[node % keys.shape[0]], kind="mergesort")
        best = -np.inf
        best_f = -1
        best_t = 0.0
        tried = 0
        for f in order:
            if tried >= mtry and best_f >= 0:
                break
            tried += 1
            if kinds[f] == 0:
                g, t = _best_numeric(X[:, f], y, idx, lo, hi, min_node)
                if g > best:
                    best = g
                    best_f = f
                    best_t = t
            else:
                g = _best_categorical(X[:, f], y, idx, lo, hi, n_levels[f], min_node, tmp_mask)
                if g > best:
                    best = g
                    best_f = f
                    best_mask[:] = tmp_mask
        if best_f < 0:
            continue
        # partition idx[lo:hi] stably into left then right
        buf = np.empty(m, np.int64)
        nl = 0
        for i in range(lo, hi):
            if _goes_left(X[idx[i], best_f], kinds[best_f], best_t, best_mask):
                buf[nl] = idx[i]
                nl += 1
        j = nl
        for i in range(lo, hi):
            if not _goes_left(X[idx[i], best_f], kinds[best_f], best_t, best_mask):
                buf[j] = idx[i]
                j += 1
        idx[lo:hi] = buf
        feat[node] = best_f
        thr[node] = best_t
        if kinds[best_f] == 1:
            masks[node] = best_mask
        imp[best_f] += best
        left[node] = n_nodes
        right[node] = n_nodes + 1
        st_node[top] = n_nodes + 1
        st_lo[top] = lo + nl
        st_hi[top] = hi
        top += 1
        st_node[top] = n_nodes
        st_lo[top] = lo
        st_hi[top] = lo + nl
        top += 1
        n_nodes += 2
    return (feat[:n_nodes], thr[:n_nodes], left[:n_nodes], right[:n_nodes],
            value[:n_nodes], count[:n_nodes], masks[:n_nodes], imp)


@nb.njit(cache=True, nogil=True)
def _apply(X, kinds, feat, thr, left, right, value, masks):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        node = 0
        while feat[node] >= 0:
            f = feat[node]
            if _goes_left(X[i, f], kinds[f], thr[node], masks[node]):
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


# ---------------------------------------------------------------------------
# python layer
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray
    masks: np.ndarray
    importance: np.ndarray
    oob: np.ndarray

    @property
    def n_nodes(self):
        return len(self.feature)

    def predict_matrix(self, X, kinds):
        return _apply(np.ascontiguousarray(X, dtype=float), kinds, self.feature, self.threshold,
                      self.left, self.right, self.value, self.masks)


@dataclass(frozen=True, eq=False)
class Forest:
    config: ForestConfig
    schema: FeatureSchema
    trees: tuple
    importance: np.ndarray = field(default=None)

    @property
    def kinds(self):
        return np.asarray(self.schema.kinds, dtype=np.int64)

    def tree_predictions(self, X) -> np.ndarray:
        """``(n, n_trees)`` per-tree predictions for a feature matrix."""
        X = np.ascontiguousarray(X, dtype=float)
        kinds = self.kinds
        out = np.empty((len(X), len(self.trees)))
        for t, tree in enumerate(self.trees):
            out[:, t] = tree.predict_matrix(X, kinds)
        return out


def _n_threads(config):
    if config.n_threads:
        return int(config.n_threads)
    env = os.environ.get("PROPVAL_THREADS")
    return int(env) if env else 1


def grow_forest_matrix(X, y, schema: FeatureSchema, config: ForestConfig | None = None) -> Forest:
    """Grow a forest from a prepared feature matrix."""
    cfg = config or ForestConfig()
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    n, p = X.shape
    if n < 2 * cfg.min_node_size:
        raise ValueError(f"need at least {2 * cfg.min_node_size} records, got {n}")
    if cfg.mtry > p:
        raise ValueError(f"mtry={cfg.mtry} exceeds feature count {p}")
    if np.all(y == y[0]):
        log.warning("constant response: trees are single leaves")
    kinds = np.asarray(schema.kinds, dtype=np.int64)
    n_levels = schema.n_levels
    width = max(1, int(np.ceil(max(n_levels.max(initial=0), 1) / 64)))
    m = max(1, int(round(cfg.sample_fraction * n)))

    def one(t):
        rng = np.random.default_rng([cfg.seed, t])
        if cfg.bootstrap:
            rows = np.sort(rng.integers(0, n, m))
        else:
            rows = np.sort(rng.choice(n, m, replace=False)) if m < n else np.arange(n)
        keys = rng.random((2 * m + 1, p))
        parts = _grow(X, y, kinds, n_levels, rows.astype(np.int64), keys, cfg.mtry,
                      cfg.min_node_size, width)
        inbag = np.zeros(n, dtype=bool)
        inbag[rows] = True
        return Tree(*parts, oob=np.flatnonzero(~inbag))

    workers = _n_threads(cfg)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            trees = tuple(ex.map(one, range(cfg.n_trees)))
    else:
        trees = tuple(one(t) for t in range(cfg.n_trees))
    imp = np.mean([t.importance for t in trees], axis=0)
    return Forest(cfg, schema, trees, imp)


def grow_forest(records, config: ForestConfig | None = None, n_regions=None,
                county_labels=None) -> Forest:
    """Grow a forest on records (response ``log_ppsm``)."""
    a = records_to_arrays(records)
    if n_regions is None:
        n_regions = int(a["region_id"].max()) + 1 if len(records) else 0
    schema = default_schema(n_regions, county_labels)
    return grow_forest_matrix(schema.matrix(a), a["log_ppsm"], schema, config)


@dataclass(frozen=True)
class ForestPrediction:
    id: str
    log_ppsm: float
    price: float
    tree_values: np.ndarray
    intervals: dict


def quantile_interval(values, level):
    """Empirical ``(1 -/+ level)/2`` quantiles (linear interpolation)."""
    lo, hi = np.quantile(values, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


def rf_predict(forest: Forest, records, levels=(0.5, 0.95)) -> list[ForestPrediction]:
    """Mean of tree outputs with per-tree quantile intervals (euro scale)."""
    a = records_to_arrays(records)
    T = forest.tree_predictions(forest.schema.matrix(a))
    out = []
    for i, r in enumerate(records):
        vals = T[i]
        mu = float(vals.mean())
        iv = {}
        for lv in levels:
            lo, hi = quantile_interval(vals, lv)
            iv[lv] = (np.exp(lo) * r.size, np.exp(hi) * r.size)
        out.append(ForestPrediction(r.id, mu, float(np.exp(mu) * r.size), vals, iv))
    return out


def rf_interval(forest: Forest, record, level) -> tuple[float, float]:
    return rf_predict(forest, [record], (level,))[0].intervals[level]


def oob_predictions(forest: Forest, X) -> np.ndarray:
    """Mean over trees for which each training row was out of bag (NaN if never)."""
    X = np.ascontiguousarray(X, dtype=float)
    s = np.zeros(len(X))
    c = np.zeros(len(X))
    kinds = forest.kinds
    for tree in forest.trees:
        if len(tree.oob):
            s[tree.oob] += tree.predict_matrix(X[tree.oob], kinds)
            c[tree.oob] += 1
    with np.errstate(invalid="ignore"):
        return s / c


def variable_importance(forest: Forest) -> list[tuple[str, float]]:
    """Mean SSE decrease per feature, descending; ties broken by name."""
    pairs = list(zip(forest.schema.names, forest.importance.tolist()))
    return sorted(pairs, key=lambda kv: (-kv[1], kv[0]))


def format_importance(pairs) -> str:
    return "feature,importance\n" + "".join(f"{k},{v!r}\n" for k, v in pairs)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def forest_to_dict(forest: Forest, metadata=None) -> dict:
    trees = []
    for t in forest.trees:
        trees.append({
            "feature": t.feature.tolist(), "threshold": t.threshold.tolist(),
            "left": t.left.tolist(), "right": t.right.tolist(), "value": t.value.tolist(),
            "count": t.count.tolist(), "masks": t.masks.astype(object).tolist(),
            "importance": t.importance.tolist(), "oob": t.oob.tolist(),
        })
    c = forest.config
    return {"format": "propval-forest", "version": ARTIFACT_VERSION,
            "metadata": dict(metadata or {}),
            "config": {"n_trees": c.n_trees, "mtry": c.mtry, "min_node_size": c.min_node_size,
                       "sample_fraction": c.sample_fraction, "bootstrap": c.bootstrap,
                       "seed": c.seed},
            "schema": forest.schema.as_dict(), "importance": forest.importance.tolist(),
            "trees": trees}


def forest_from_dict(d) -> Forest:
    if d.get("format") != "propval-forest" or d.get("version") != ARTIFACT_VERSION:
        raise ValueError("not a supported forest artifact")
    trees = []
    for t in d["trees"]:
        masks = np.array(t["masks"], dtype=np.uint64)
        trees.append(Tree(
            np.array(t["feature"], np.int64), np.array(t["threshold"], float),
            np.array(t["left"], np.int64), np.array(t["right"], np.int64),
            np.array(t["value"], float), np.array(t["count"], np.int64),
            masks.reshape(len(t["feature"]), -1), np.array(t["importance"], float),
            np.array(t["oob"], np.int64)))
    return Forest(ForestConfig(**d["config"]), FeatureSchema.from_dict(d["schema"]),
                  tuple(trees), np.array(d["importance"], float))


def save_forest(forest: Forest, path, metadata=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(forest_to_dict(forest, metadata), fh)


def load_forest(path) -> Forest:
    with open(path, encoding="utf-8") as fh:
        return forest_from_dict(json.load(fh))
