"""Synthetic listings with known generating truth.

The landscape mimics a small country: four dense city clusters, a ring of
towns and a sparse rural background over a lon/lat rectangle. Regions are
Voronoi cells of seeded sites. Submarkets are assigned with the same
geographic rule the ingestion stage uses (city polygon, then town radius,
else Rural), so simulated and ingested records are labelled consistently.

The response follows the submarket GAM exactly::

    log_ppsm = b0 + Z beta + ber + type[sub] + f_beds[sub] + f_baths[sub]
               + f_size[sub] + f_month[sub] + field(x, y) + region + noise

Two seeds are used: ``seed`` fixes the landscape, truths and covariates;
``noise_seed`` only redraws the noise.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources

import numpy as np
from scipy.spatial import Voronoi, cKDTree

from .ingest.geo import (
    Polygon,
    RegionGraph,
    SubmarketConfig,
    assign_regions,
    assign_submarkets,
    dump_geometry,
    inverse_web_mercator,
    project_web_mercator,
)
from .records import BER_LEVELS, FEATURES, PROPERTY_TYPES, SUBMARKETS, PropertyRecord

SMOOTH_TERMS = ("beds", "baths", "size", "month")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class City:
    name: str
    lon: float
    lat: float
    radius_m: float
    weight: float
    uplift: float
    """Log-scale price bump at the centre."""


DEFAULT_CITIES = (
    City("Cork", -8.4756, 51.8985, 6000.0, 0.044, 0.40),
    City("Dublin", -6.2603, 53.3498, 12000.0, 0.376, 0.80),
    City("Galway", -9.0568, 53.2707, 4000.0, 0.019, 0.42),
    City("Limerick", -8.6267, 52.6638, 4500.0, 0.018, 0.18),
)
TOWN_SHARE = 0.209
TOWN_UPLIFT = 0.22

# Counts per (submarket, type) shaped like national listing data.
TYPE_COUNTS = {
    "Cork": (208, 462, 208, 134, 145, 119, 23),
    "Dublin": (992, 3555, 1966, 1100, 781, 2256, 415),
    "Galway": (82, 193, 49, 39, 39, 122, 37),
    "Limerick": (41, 236, 52, 43, 38, 96, 24),
    "Rural": (3141, 3946, 884, 644, 577, 548, 105),
    "Towns": (1142, 2772, 602, 503, 347, 633, 159),
}

# multiplicative effects on price per m2
FEATURE_SCALINGS = (0.99, 1.03, 1.00, 1.03, 1.04, 1.11, 1.02, 0.99, 1.00, 1.15, 1.01)
FEATURE_RATES = (0.024, 0.67, 0.15, 0.32, 0.14, 0.021, 0.13, 0.0, 0.0, 0.0, 0.23)
APARTMENT_FLOOR_RATES = (0.30, 0.10, 0.04)  # ground, second, penthouse
BER_SCALINGS = (1.15, 1.16, 1.12, 1.08, 1.05, 1.04, 1.00, 0.99, 0.98, 0.96, 0.95,
                0.93, 0.92, 0.88, 0.85, 1.0)
BER_RATES = (0.005, 0.03, 0.06, 0.05, 0.06, 0.08, 0.09, 0.09, 0.08, 0.07, 0.06,
             0.04, 0.03, 0.03, 0.03, 0.17)
TYPE_SCALINGS = (1.24, 1.09, 0.96, 1.01, 0.93, 0.92, 0.89)
TYPE_LOG_SIZE = (5.05, 4.75, 4.55, 4.6, 4.7, 4.3, 4.5)

SMOOTH_MULTIPLIER = {"Cork": 1.0, "Dublin": 1.2, "Galway": 0.9, "Limerick": 0.8,
                     "Rural": 1.1, "Towns": 1.0}


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings. Scale factors of 0 switch a component off."""

    n: int = 5000
    seed: int = 1
    noise_seed: int | None = None
    lon_range: tuple = (-10.5, -6.0)
    lat_range: tuple = (51.4, 55.4)
    cities: tuple = DEFAULT_CITIES
    town_share: float = TOWN_SHARE
    town_radius_m: float = 10_000.0
    n_regions: int = 139
    n_counties: int = 26
    intercept: float = math.log(2214.0)
    coef_scale: float = 1.0
    smooth_scale: float = 1.0
    month_slope: float = 0.003
    gp_amplitude: float = 1.0
    n_field_bumps: int = 30
    field_bump_sd: float = 0.12
    region_sd: float = 0.05
    sigma: float = 0.12

    def __post_init__(self):
        if self.n < 100:
            raise ConfigError("n must be at least 100")
        if self.n_regions > self.n:
            raise ConfigError("more regions than records")
        if self.n_regions < 3:
            raise ConfigError("need at least 3 regions")
        if not self.sigma >= 0:
            raise ConfigError("sigma must be >= 0")
        w = sum(c.weight for c in self.cities) + self.town_share
        if not 0 < w <= 1 + 1e-12:
            raise ConfigError("city and town weights must sum to at most 1")

    @property
    def rural_share(self):
        return 1.0 - sum(c.weight for c in self.cities) - self.town_share

    @property
    def effective_noise_seed(self):
        return self.seed if self.noise_seed is None else self.noise_seed

    def as_dict(self):
        d = asdict(self)
        d["cities"] = [asdict(c) for c in self.cities]
        d["lon_range"] = list(self.lon_range)
        d["lat_range"] = list(self.lat_range)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "cities" in d:
            d["cities"] = tuple(City(**c) for c in d["cities"])
        for k in ("lon_range", "lat_range"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def with_rural_share(self, share: float) -> "SynthConfig":
        """Rescale city and town weights so that rural draws take ``share``."""
        if not 0 <= share < 1:
            raise ConfigError("rural share must lie in [0, 1)")
        f = (1.0 - share) / (1.0 - self.rural_share)
        cities = tuple(replace(c, weight=c.weight * f) for c in self.cities)
        return replace(self, cities=cities, town_share=self.town_share * f)


# ---------------------------------------------------------------------------
# bundled town list and city shapes
# ---------------------------------------------------------------------------

def default_towns() -> tuple:
    txt = resources.files("propval").joinpath("data/towns.csv").read_text("utf-8")
    rows = csv.DictReader(txt.splitlines())
    return tuple((r["name"], float(r["lon"]), float(r["lat"])) for r in rows)


def city_polygon(city: City, sides: int = 8) -> Polygon:
    """Regular polygon of ground radius ``radius_m`` (vertices on the circle)."""
    cx, cy = project_web_mercator(city.lon, city.lat)
    r = city.radius_m / math.cos(math.radians(city.lat))
    ang = 2 * np.pi * np.arange(sides) / sides + np.pi / sides
    lon, lat = inverse_web_mercator(cx + r * np.cos(ang), cy + r * np.sin(ang))
    ring = np.column_stack([lon, lat])
    return Polygon(city.name, (np.vstack([ring, ring[:1]]),), {})


def submarket_config(cfg: SynthConfig, towns=None) -> SubmarketConfig:
    towns = default_towns() if towns is None else tuple(towns)
    return SubmarketConfig(tuple(city_polygon(c) for c in cfg.cities), towns, cfg.town_radius_m)


# ---------------------------------------------------------------------------
# regions
# ---------------------------------------------------------------------------

def _extent_xy(cfg):
    x0, y0 = project_web_mercator(cfg.lon_range[0], cfg.lat_range[0])
    x1, y1 = project_web_mercator(cfg.lon_range[1], cfg.lat_range[1])
    return float(x0), float(x1), float(y0), float(y1)


def _disc(rng, n, cx, cy, r):
    rad = r * np.sqrt(rng.uniform(size=n))
    th = rng.uniform(0, 2 * np.pi, size=n)
    return cx + rad * np.cos(th), cy + rad * np.sin(th)


def voronoi_regions(sites_xy, extent, prefix="R") -> tuple[list[Polygon], list[set]]:
    """Voronoi cells clipped to a rectangle, as lon/lat polygons.

    Clipping uses reflected copies of the sites across each side, which
    makes every original cell finite and bounded by the rectangle.
    Adjacency comes from the Voronoi ridges.
    """
    x0, x1, y0, y1 = extent
    p = np.asarray(sites_xy, dtype=float)
    m = len(p)
    mirrors = [p,
               np.column_stack([2 * x0 - p[:, 0], p[:, 1]]),
               np.column_stack([2 * x1 - p[:, 0], p[:, 1]]),
               np.column_stack([p[:, 0], 2 * y0 - p[:, 1]]),
               np.column_stack([p[:, 0], 2 * y1 - p[:, 1]])]
    vor = Voronoi(np.vstack(mirrors))
    verts = vor.vertices.copy()
    # snap near-boundary vertices onto the rectangle
    for col, lo, hi in ((0, x0, x1), (1, y0, y1)):
        scale = hi - lo
        verts[np.abs(verts[:, col] - lo) < 1e-9 * scale, col] = lo
        verts[np.abs(verts[:, col] - hi) < 1e-9 * scale, col] = hi
    vlon, vlat = inverse_web_mercator(verts[:, 0], verts[:, 1])
    polys = []
    width = len(str(m))
    for i in range(m):
        region = vor.regions[vor.point_region[i]]
        if -1 in region or not region:
            raise RuntimeError("unbounded Voronoi cell after reflection")
        idx = np.array(region)
        cx, cy = verts[idx].mean(axis=0)
        order = np.argsort(np.arctan2(verts[idx, 1] - cy, verts[idx, 0] - cx))
        idx = idx[order]
        ring = np.column_stack([vlon[idx], vlat[idx]])
        ring = np.vstack([ring, ring[:1]])
        polys.append(Polygon(f"{prefix}{i:0{width}d}", (ring,), {}))
    adj = [set() for _ in range(m)]
    for (a, b), rv in zip(vor.ridge_points, vor.ridge_vertices):
        if a < m and b < m and -1 not in rv:
            if np.linalg.norm(verts[rv[0]] - verts[rv[1]]) > 0:
                adj[a].add(int(b))
                adj[b].add(int(a))
    return polys, adj


def _kmeans_labels(points, k, rng):
    from scipy.cluster.vq import kmeans2

    k = min(k, len(points))
    _, labels = kmeans2(points, k, minit="++", seed=rng)
    return labels


def build_region_graph(cfg: SynthConfig, rng) -> tuple[RegionGraph, np.ndarray]:
    """Voronoi regions (sites denser in cities) with county labels."""
    extent = _extent_xy(cfg)
    m = cfg.n_regions
    n_city = int(round(0.35 * m))
    xs, ys = [], []
    w = np.array([c.weight for c in cfg.cities])
    alloc = rng.multinomial(n_city, w / w.sum()) if len(w) else []
    for c, k in zip(cfg.cities, alloc):
        cx, cy = project_web_mercator(c.lon, c.lat)
        r = 2.5 * c.radius_m / math.cos(math.radians(c.lat))
        px, py = _disc(rng, k, cx, cy, r)
        xs.append(px)
        ys.append(py)
    rest = m - n_city
    xs.append(rng.uniform(extent[0], extent[1], rest))
    ys.append(rng.uniform(extent[2], extent[3], rest))
    sites = np.column_stack([np.concatenate(xs), np.concatenate(ys)])
    sites[:, 0] = np.clip(sites[:, 0], extent[0] + 1.0, extent[1] - 1.0)
    sites[:, 1] = np.clip(sites[:, 1], extent[2] + 1.0, extent[3] - 1.0)
    order = np.lexsort((sites[:, 0], -sites[:, 1]))  # north to south
    sites = sites[order]
    polys, adj = voronoi_regions(sites, extent)
    counties = _kmeans_labels(sites, cfg.n_counties, rng)
    polys = [Polygon(p.id, p.rings, {"county": f"C{int(c):02d}"}) for p, c in zip(polys, counties)]
    return RegionGraph.from_polygons(polys, adj), sites


# ---------------------------------------------------------------------------
# truth
# ---------------------------------------------------------------------------

def true_smooth(term, submarket, x, month_slope=0.003, scale=1.0):
    """Closed-form generating smooth (uncentered)."""
    x = np.asarray(x, dtype=float)
    m = SMOOTH_MULTIPLIER.get(submarket, 1.0) if submarket is not None else 1.0
    if term == "beds":
        out = m * 0.08 * np.log(x)
    elif term == "baths":
        out = m * 0.05 * np.sqrt(x)
    elif term == "size":
        out = -m * 0.25 * np.log(x / 100.0) + 0.04 * np.tanh((x - 150.0) / 50.0)
    elif term == "month":
        return month_slope * (x - 1.0)
    else:
        raise KeyError(term)
    return scale * out


@dataclass(eq=False)
class GroundTruth:
    config: SynthConfig
    intercept: float
    feature_effects: np.ndarray
    ber_effects: np.ndarray
    type_effects: dict
    bump_centres: np.ndarray
    bump_weights: np.ndarray
    bump_lengths: np.ndarray
    region_effects: np.ndarray
    latent: dict = field(default_factory=dict)
    """Per-record components (arrays, aligned with the records)."""

    def spatial_field(self, x, y) -> np.ndarray:
        """Smooth spatial surface on the log scale (before amplitude)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.zeros(np.broadcast(x, y).shape)
        for (cx, cy), w, ell in zip(self.bump_centres, self.bump_weights, self.bump_lengths):
            out = out + w * np.exp(-0.5 * ((x - cx) ** 2 + (y - cy) ** 2) / ell ** 2)
        return self.config.gp_amplitude * out

    def smooth(self, term, submarket, x):
        return true_smooth(term, submarket, x, self.config.month_slope, self.config.smooth_scale)

    def centered_type_effects(self, submarket):
        e = self.type_effects[submarket]
        return e - e.mean()

    def centered_ber_effects(self):
        return self.ber_effects - self.ber_effects.mean()

    def to_dict(self):
        return {
            "format": "propval-truth", "version": 1,
            "config": self.config.as_dict(), "intercept": self.intercept,
            "feature_effects": self.feature_effects.tolist(),
            "ber_effects": self.ber_effects.tolist(),
            "type_effects": {k: v.tolist() for k, v in self.type_effects.items()},
            "bump_centres": self.bump_centres.tolist(),
            "bump_weights": self.bump_weights.tolist(),
            "bump_lengths": self.bump_lengths.tolist(),
            "region_effects": self.region_effects.tolist(),
            "latent": {k: np.asarray(v).tolist() for k, v in self.latent.items()},
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != "propval-truth":
            raise ValueError("not a truth file")
        return cls(
            SynthConfig.from_dict(d["config"]), float(d["intercept"]),
            np.array(d["feature_effects"]), np.array(d["ber_effects"]),
            {k: np.array(v) for k, v in d["type_effects"].items()},
            np.array(d["bump_centres"]).reshape(-1, 2), np.array(d["bump_weights"]),
            np.array(d["bump_lengths"]), np.array(d["region_effects"]),
            {k: np.array(v) for k, v in d["latent"].items()},
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _field_bumps(cfg, rng, towns):
    x0, x1, y0, y1 = _extent_xy(cfg)
    k = cfg.n_field_bumps
    centres = [np.column_stack([rng.uniform(x0, x1, k), rng.uniform(y0, y1, k)])]
    weights = [rng.normal(0.0, cfg.field_bump_sd, k)]
    lengths = [rng.uniform(40e3, 120e3, k)]
    # east-west gradient as a very wide bump on the east coast
    centres.append(np.array([[x1 + 50e3, 0.5 * (y0 + y1)]]))
    weights.append(np.array([0.25]))
    lengths.append(np.array([150e3]))
    for c in cfg.cities:
        cx, cy = project_web_mercator(c.lon, c.lat)
        centres.append(np.array([[cx, cy]]))
        weights.append(np.array([c.uplift]))
        lengths.append(np.array([1.2 * c.radius_m / math.cos(math.radians(c.lat))]))
    for _, lon, lat in towns:
        tx, ty = project_web_mercator(lon, lat)
        centres.append(np.array([[tx, ty]]))
        weights.append(np.array([TOWN_UPLIFT]))
        lengths.append(np.array([6e3 / math.cos(math.radians(lat))]))
    return np.vstack(centres), np.concatenate(weights), np.concatenate(lengths)


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class SyntheticDataset:
    records: list
    truth: GroundTruth
    graph: RegionGraph
    submarkets: SubmarketConfig


def _locations(cfg, rng, towns, n):
    x0, x1, y0, y1 = _extent_xy(cfg)
    shares = [c.weight for c in cfg.cities] + [cfg.town_share, cfg.rural_share]
    counts = rng.multinomial(n, np.array(shares) / sum(shares))
    xs, ys = [], []
    for c, k in zip(cfg.cities, counts):
        cx, cy = project_web_mercator(c.lon, c.lat)
        # stay inside the inscribed circle of the city polygon
        r = 0.9 * c.radius_m / math.cos(math.radians(c.lat))
        px, py = _disc(rng, k, cx, cy, r)
        xs.append(px)
        ys.append(py)
    k_town = counts[len(cfg.cities)]
    if towns and k_town:
        which = rng.integers(0, len(towns), k_town)
        px = np.empty(k_town)
        py = np.empty(k_town)
        for j, (_, lon, lat) in enumerate(towns):
            sel = which == j
            tx, ty = project_web_mercator(lon, lat)
            r = 0.85 * cfg.town_radius_m / math.cos(math.radians(lat))
            px[sel], py[sel] = _disc(rng, int(sel.sum()), tx, ty, r)
        xs.append(px)
        ys.append(py)
    else:
        counts[-1] += k_town
    k_rural = counts[-1]
    xs.append(rng.uniform(x0, x1, k_rural))
    ys.append(rng.uniform(y0, y1, k_rural))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    perm = rng.permutation(n)
    return x[perm], y[perm]


def _covariates(rng, submarket):
    n = len(submarket)
    ptype = np.empty(n, dtype=object)
    for s in SUBMARKETS:
        sel = np.flatnonzero(submarket == s)
        if len(sel):
            p = np.array(TYPE_COUNTS[s], dtype=float)
            ptype[sel] = np.array(PROPERTY_TYPES, dtype=object)[rng.choice(7, len(sel), p=p / p.sum())]
    tidx = np.array([PROPERTY_TYPES.index(t) for t in ptype])
    size = np.exp(np.array(TYPE_LOG_SIZE)[tidx] + rng.normal(0.0, 0.25, n))
    size = np.round(np.clip(size, 30.0, 600.0), 1)
    beds = np.clip(np.round(size / 35.0 + rng.normal(0.0, 0.7, n)), 1, 8).astype(int)
    baths = np.clip(np.round(0.3 + 0.45 * beds + rng.normal(0.0, 0.5, n)), 1, 6).astype(int)
    month = rng.integers(1, 13, n)
    feats = rng.uniform(size=(n, len(FEATURES))) < np.array(FEATURE_RATES)
    apt = ptype == "apartment"
    for j, rate in zip((7, 8, 9), APARTMENT_FLOOR_RATES):
        feats[:, j] = apt & (rng.uniform(size=n) < rate)
    pb = np.array(BER_RATES)
    ber = np.array(BER_LEVELS, dtype=object)[rng.choice(len(BER_LEVELS), n, p=pb / pb.sum())]
    return ptype, tidx, size, beds, baths, month, feats, ber


def simulate_dataset(config: SynthConfig | None = None, towns=None) -> SyntheticDataset:
    """Draw records and the truth that generated them (deterministic in the seeds)."""
    cfg = config or SynthConfig()
    towns = default_towns() if towns is None else tuple(towns)
    rng = np.random.default_rng([cfg.seed, 0])
    graph, _ = build_region_graph(cfg, rng)
    subcfg = submarket_config(cfg, towns)

    trng = np.random.default_rng([cfg.seed, 1])
    centres, weights, lengths = _field_bumps(cfg, trng, towns)
    region_effects = trng.normal(0.0, cfg.region_sd, len(graph))
    s = cfg.coef_scale
    type_effects = {}
    base_type = np.log(TYPE_SCALINGS)
    for sm in SUBMARKETS:
        type_effects[sm] = s * (base_type + trng.normal(0.0, 0.03, len(PROPERTY_TYPES)))
    truth = GroundTruth(
        cfg, cfg.intercept, s * np.log(FEATURE_SCALINGS), s * np.log(BER_SCALINGS),
        type_effects, centres, weights, lengths, region_effects,
    )

    crng = np.random.default_rng([cfg.seed, 2])
    x, y = _locations(cfg, crng, towns, cfg.n)
    lon, lat = inverse_web_mercator(x, y)
    region = assign_regions(lon, lat, graph)
    if np.any(region < 0):
        # numerically on the outer boundary: nearest region centroid
        cent = np.array([p.centroid() for p in graph.polygons])
        bad = region < 0
        _, region[bad] = cKDTree(cent).query(np.column_stack([lon[bad], lat[bad]]))
    submarket = assign_submarkets(lon, lat, subcfg)
    ptype, tidx, size, beds, baths, month, feats, ber = _covariates(crng, submarket)

    comp = {
        "intercept": np.full(cfg.n, truth.intercept),
        "features": feats.astype(float) @ truth.feature_effects,
        "ber": truth.ber_effects[[BER_LEVELS.index(b) for b in ber]],
        "property_type": np.array([type_effects[sm][t] for sm, t in zip(submarket, tidx)]),
        "spatial": truth.spatial_field(x, y),
        "region": region_effects[region],
    }
    for term, vals in (("beds", beds), ("baths", baths), ("size", size), ("month", month)):
        out = np.empty(cfg.n)
        for sm in SUBMARKETS:
            sel = submarket == sm
            out[sel] = truth.smooth(term, sm, vals[sel])
        comp[term] = out
    noiseless = np.zeros(cfg.n)
    for k in ("intercept", "features", "ber", "property_type", "beds", "baths", "size",
              "month", "spatial", "region"):
        noiseless = noiseless + comp[k]
    nrng = np.random.default_rng([cfg.effective_noise_seed, 3])
    drawn = nrng.normal(0.0, cfg.sigma, cfg.n) if cfg.sigma > 0 else np.zeros(cfg.n)
    observed = noiseless + drawn
    # exact by Sterbenz: observed and noiseless are within a factor of two
    comp["noise"] = observed - noiseless
    comp["noiseless"] = noiseless
    truth.latent = comp

    width = len(str(cfg.n))
    records = [
        PropertyRecord(
            id=f"S{i:0{width}d}", log_ppsm=float(observed[i]),
            price=float(math.exp(observed[i]) * size[i]), month=int(month[i]),
            x=float(x[i]), y=float(y[i]), region_id=int(region[i]),
            submarket=str(submarket[i]), beds=int(beds[i]), baths=int(baths[i]),
            size=float(size[i]), property_type=str(ptype[i]), ber=str(ber[i]),
            features=tuple(bool(f) for f in feats[i]), lon=float(lon[i]), lat=float(lat[i]),
        )
        for i in range(cfg.n)
    ]
    return SyntheticDataset(records, truth, graph, subcfg)


# ---------------------------------------------------------------------------
# recovery
# ---------------------------------------------------------------------------

def recovery_grid(term, values, size=50):
    """Grid over the central 90% of observed covariate values."""
    values = np.asarray(values, dtype=float)
    lo, hi = np.quantile(values, [0.05, 0.95])
    if term in ("beds", "baths", "month"):
        return np.arange(math.ceil(lo), math.floor(hi) + 1, dtype=float)
    return np.linspace(lo, hi, size)


def recovery_error(model, truth: GroundTruth, records, grids=None) -> dict:
    """Per-component recovery errors of a fitted GAM against the truth.

    Smooth errors are RMSEs after mean-centering both curves on the grid
    (default: central 90% of that submarket's values). Factor errors
    compare decoded effects with sum-to-zero centered truths. The spatial
    correlation compares fitted GP + MRF with the true field + region
    effect at the record locations.
    """
    from .model import extract_smooth, spatial_components
    from .records import records_to_arrays

    a = records_to_arrays(records)
    out = {}
    labels = {t.label for t in model.terms}
    for t in model.terms:
        if t.kind != "smooth" or t.variable not in SMOOTH_TERMS:
            continue
        sel = np.ones(len(a["submarket"]), bool) if t.by is None else a["submarket"] == t.by
        if grids and t.variable in grids:
            g = np.asarray(grids[t.variable], dtype=float)
        else:
            g = recovery_grid(t.variable, a[t.variable][sel])
        if len(g) < 2:
            continue
        fit = extract_smooth(model, t.variable, t.by, grid=g).fit
        true = truth.smooth(t.variable, t.by, g)
        if t.by is None:
            # a national smooth estimates the record-weighted mix of submarket curves
            subs = a["submarket"]
            true = sum((subs == s).mean() * truth.smooth(t.variable, s, g) for s in SUBMARKETS)
        d = (fit - fit.mean()) - (true - true.mean())
        out[f"smooth:{t.label}"] = float(np.sqrt(np.mean(d ** 2)))

    coef = dict(zip(model.column_labels, model.coef))
    if "features" in labels:
        for j, f in enumerate(FEATURES):
            out[f"coef:{f}"] = abs(coef[f"feature:{f}"] - truth.feature_effects[j])
    for t, sl in zip(model.terms, model.slices):
        if t.kind != "factor":
            continue
        eff = t.decoder.effects(model.coef[sl])
        if t.variable == "ber":
            ref = truth.centered_ber_effects()
        elif t.by is not None:
            ref = truth.centered_type_effects(t.by)
        else:
            ref = np.mean([truth.centered_type_effects(s) for s in SUBMARKETS], axis=0)
        miss = set(model.absent_levels.get(t.label, ()))
        errs = [abs(e - r) for lv, e, r in zip(t.levels, eff, ref) if lv not in miss]
        out[f"coef:{t.label}"] = float(max(errs)) if errs else float("nan")

    if "s(location)" in labels and "s(region)" in labels:
        xy = np.column_stack([a["x"], a["y"]])
        _, gp, mrf = spatial_components(model, xy, a["region_id"])
        idx = _truth_rows(records, truth)
        if idx is not None:
            true = truth.latent["spatial"][idx] + truth.latent["region"][idx]
        else:
            true = truth.spatial_field(a["x"], a["y"]) + truth.region_effects[a["region_id"]]
        out["spatial_corr"] = float(np.corrcoef(gp + mrf, true)[0, 1])
    return out


def _truth_rows(records, truth):
    """Rows of the latent arrays for simulated ids ``S0000...``, else None."""
    n = len(truth.latent.get("spatial", ()))
    rows = []
    for r in records:
        tail = r.id[1:]
        if not (r.id.startswith("S") and tail.isdigit() and int(tail) < n):
            return None
        rows.append(int(tail))
    return rows


# ---------------------------------------------------------------------------
# fixtures
# ---------------------------------------------------------------------------

def write_submarket_files(subcfg: SubmarketConfig, city_path, towns_path) -> None:
    with open(city_path, "w", encoding="utf-8") as fh:
        fh.write(dump_geometry(subcfg.city_polygons))
    with open(towns_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "lon", "lat"])
        for name, lon, lat in subcfg.town_centres:
            w.writerow([name, repr(lon), repr(lat)])


def fixture_geometry(seed: int = 1) -> tuple[RegionGraph, SubmarketConfig]:
    """Region graph and submarket shapes of the default landscape."""
    cfg = SynthConfig(seed=seed)
    graph, _ = build_region_graph(cfg, np.random.default_rng([cfg.seed, 0]))
    return graph, submarket_config(cfg)
