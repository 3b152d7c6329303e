"""Projection, polygon geometry and areal-unit adjacency.

Polygons are held as lists of rings; a ring is an ``(m, 2)`` array of
``(lon, lat)`` vertices, closed or not. Containment uses the even-odd rule
across all rings of a feature, so holes and multi-part features need no
special casing. Points lying exactly on an edge count as inside.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

EARTH_RADIUS_MERCATOR = 6378137.0
EARTH_RADIUS_MEAN = 6371008.8
MAX_LATITUDE = 85.06


class DomainError(ValueError):
    pass


def project_web_mercator(lon, lat):
    """Map WGS84 degrees to Pseudo-Mercator metres.

    Accepts scalars or arrays. Raises :class:`DomainError` for latitudes
    outside ``[-85.06, 85.06]``.
    """
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    if np.any(~np.isfinite(lat)) or np.any(np.abs(lat) > MAX_LATITUDE):
        raise DomainError("latitude outside the Pseudo-Mercator domain")
    x = EARTH_RADIUS_MERCATOR * np.radians(lon)
    # asinh(tan(lat)) == ln(tan(pi/4 + lat/2)), without the rounding at lat = 0
    y = EARTH_RADIUS_MERCATOR * np.arcsinh(np.tan(np.radians(lat)))
    if x.ndim == 0:
        return float(x), float(y)
    return x, y


def inverse_web_mercator(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lon = np.degrees(x / EARTH_RADIUS_MERCATOR)
    lat = np.degrees(np.arctan(np.sinh(y / EARTH_RADIUS_MERCATOR)))
    if lon.ndim == 0:
        return float(lon), float(lat)
    return lon, lat


def haversine(lon1, lat1, lon2, lat2, radius=EARTH_RADIUS_MEAN):
    """Great-circle distance in metres (broadcasts)."""
    lon1, lat1, lon2, lat2 = (np.radians(np.asarray(v, dtype=float)) for v in (lon1, lat1, lon2, lat2))
    a = (np.sin((lat2 - lat1) / 2) ** 2
         + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2)
    return 2 * radius * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def _ring_edges(ring):
    ring = np.asarray(ring, dtype=float)
    if len(ring) > 1 and np.array_equal(ring[0], ring[-1]):
        ring = ring[:-1]
    return ring, np.roll(ring, -1, axis=0)


def points_in_rings(px, py, rings, tol=1e-12):
    """Even-odd ray casting of many points against one feature.

    Returns a boolean array; points on any edge are reported inside.
    """
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    inside = np.zeros(px.shape, dtype=bool)
    on_edge = np.zeros(px.shape, dtype=bool)
    for ring in rings:
        a, b = _ring_edges(ring)
        for (xi, yi), (xj, yj) in zip(a, b):
            crosses = (yi > py) != (yj > py)
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = (xj - xi) * (py - yi) / (yj - yi) + xi
            inside ^= crosses & (px < xint)
            # exact-ish boundary test: collinear and inside the segment's box
            cross = (xj - xi) * (py - yi) - (yj - yi) * (px - xi)
            scale = tol * max(1.0, abs(xj - xi) + abs(yj - yi))
            on_edge |= (
                (np.abs(cross) <= scale)
                & (px >= min(xi, xj) - tol) & (px <= max(xi, xj) + tol)
                & (py >= min(yi, yj) - tol) & (py <= max(yi, yj) + tol)
            )
    return inside | on_edge


def ring_area(ring) -> float:
    """Signed shoelace area in the ring's own coordinate units."""
    a, b = _ring_edges(ring)
    return 0.5 * float(np.sum(a[:, 0] * b[:, 1] - b[:, 0] * a[:, 1]))


@dataclass(frozen=True)
class Polygon:
    id: str
    rings: tuple
    properties: dict = field(default_factory=dict, compare=False)

    def bbox(self):
        pts = np.vstack(self.rings)
        return pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max()

    def contains(self, lon, lat):
        return points_in_rings(lon, lat, self.rings)

    def centroid(self):
        """Area-weighted centroid of the outer ring of the first part."""
        a, b = _ring_edges(self.rings[0])
        cr = a[:, 0] * b[:, 1] - b[:, 0] * a[:, 1]
        area = cr.sum() / 2
        if area == 0:
            return tuple(a.mean(axis=0))
        cx = ((a[:, 0] + b[:, 0]) * cr).sum() / (6 * area)
        cy = ((a[:, 1] + b[:, 1]) * cr).sum() / (6 * area)
        return float(cx), float(cy)


# ---------------------------------------------------------------------------
# plain-text geometry file: a strict subset of GeoJSON
# ---------------------------------------------------------------------------

def parse_geometry(text: str) -> list[Polygon]:
    """Parse a FeatureCollection of Polygon / MultiPolygon features.

    Each feature needs ``properties.id``; other properties are kept.
    Coordinates are ``[lon, lat]`` pairs.
    """
    doc = json.loads(text)
    if doc.get("type") != "FeatureCollection":
        raise ValueError("geometry file must be a FeatureCollection")
    out = []
    for k, feat in enumerate(doc.get("features", [])):
        props = dict(feat.get("properties") or {})
        if "id" not in props:
            raise ValueError(f"feature {k} has no properties.id")
        geom = feat.get("geometry") or {}
        gtype = geom.get("type")
        if gtype == "Polygon":
            parts = [geom["coordinates"]]
        elif gtype == "MultiPolygon":
            parts = geom["coordinates"]
        else:
            raise ValueError(f"feature {props['id']}: unsupported geometry {gtype!r}")
        rings = []
        for part in parts:
            for ring in part:
                arr = np.asarray(ring, dtype=float)
                if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) < 3:
                    raise ValueError(f"feature {props['id']}: malformed ring")
                rings.append(arr)
        out.append(Polygon(id=str(props.pop("id")), rings=tuple(rings), properties=props))
    return out


def dump_geometry(polygons, adjacency=None) -> str:
    feats = []
    for i, poly in enumerate(polygons):
        props = {"id": poly.id, **poly.properties}
        if adjacency is not None:
            props["neighbours"] = [polygons[j].id for j in sorted(adjacency[i])]
        rings = [np.asarray(r).tolist() for r in poly.rings]
        feats.append({
            "type": "Feature",
            "properties": props,
            "geometry": {"type": "Polygon", "coordinates": rings},
        })
    return json.dumps({"type": "FeatureCollection", "features": feats}, indent=1)


def load_geometry(path) -> list[Polygon]:
    with open(path, encoding="utf-8") as fh:
        return parse_geometry(fh.read())


def _shares_boundary(pa: Polygon, pb: Polygon, tol: float) -> bool:
    ea = np.vstack([np.hstack(_ring_edges(r)) for r in pa.rings])
    eb = np.vstack([np.hstack(_ring_edges(r)) for r in pb.rings])
    for x0, y0, x1, y1 in ea:
        dx, dy = x1 - x0, y1 - y0
        length = math.hypot(dx, dy)
        if length <= tol:
            continue
        # both endpoints of the other edges on this edge's line
        c0 = (dx * (eb[:, 1] - y0) - dy * (eb[:, 0] - x0)) / length
        c1 = (dx * (eb[:, 3] - y0) - dy * (eb[:, 2] - x0)) / length
        col = (np.abs(c0) <= tol) & (np.abs(c1) <= tol)
        if not col.any():
            continue
        t0 = (dx * (eb[col, 0] - x0) + dy * (eb[col, 1] - y0)) / length
        t1 = (dx * (eb[col, 2] - x0) + dy * (eb[col, 3] - y0)) / length
        lo = np.maximum(np.minimum(t0, t1), 0.0)
        hi = np.minimum(np.maximum(t0, t1), length)
        if np.any(hi - lo > tol):
            return True
    return False


def boundary_adjacency(polygons, tol=1e-9) -> list[frozenset]:
    """First-order neighbours: features sharing a boundary of positive length."""
    n = len(polygons)
    boxes = np.array([p.bbox() for p in polygons])
    adj = [set() for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if (boxes[i, 0] > boxes[j, 2] + tol or boxes[j, 0] > boxes[i, 2] + tol
                    or boxes[i, 1] > boxes[j, 3] + tol or boxes[j, 1] > boxes[i, 3] + tol):
                continue
            if _shares_boundary(polygons[i], polygons[j], tol):
                adj[i].add(j)
                adj[j].add(i)
    return [frozenset(a) for a in adj]


@dataclass(frozen=True)
class RegionGraph:
    """Areal units with first- and second-order neighbourhoods.

    ``first_order[i]`` is the set of indices sharing a boundary with region
    ``i``; ``second_order[i]`` adds neighbours of neighbours (never ``i``).
    """

    polygons: tuple
    first_order: tuple
    second_order: tuple

    @classmethod
    def from_polygons(cls, polygons, adjacency=None) -> "RegionGraph":
        polygons = tuple(polygons)
        ids = [p.id for p in polygons]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate region ids")
        if adjacency is None:
            if all("neighbours" in p.properties for p in polygons):
                index = {rid: i for i, rid in enumerate(ids)}
                adjacency = [set() for _ in polygons]
                for i, p in enumerate(polygons):
                    for nb in p.properties["neighbours"]:
                        j = index[str(nb)]
                        if j != i:
                            adjacency[i].add(j)
                            adjacency[j].add(i)
            else:
                adjacency = boundary_adjacency(polygons)
        first = tuple(frozenset(a) for a in adjacency)
        for i, nbs in enumerate(first):
            if i in nbs or any(i not in first[j] for j in nbs):
                raise ValueError("adjacency must be symmetric and irreflexive")
        return cls(polygons, first, second_order_neighbours(first))

    @classmethod
    def load(cls, path) -> "RegionGraph":
        return cls.from_polygons(load_geometry(path))

    def __len__(self):
        return len(self.polygons)

    @property
    def ids(self):
        return [p.id for p in self.polygons]

    def county_labels(self):
        """Per-region county label, or ``None`` if the file carries none."""
        labels = [p.properties.get("county") for p in self.polygons]
        return None if any(c is None for c in labels) else labels

    def laplacian(self, order: int = 2) -> np.ndarray:
        nbs = self.second_order if order == 2 else self.first_order
        return graph_laplacian(nbs)

    def n_components(self, order: int = 2) -> int:
        nbs = self.second_order if order == 2 else self.first_order
        seen = np.zeros(len(nbs), dtype=bool)
        count = 0
        for s in range(len(nbs)):
            if seen[s]:
                continue
            count += 1
            stack = [s]
            seen[s] = True
            while stack:
                u = stack.pop()
                for v in nbs[u]:
                    if not seen[v]:
                        seen[v] = True
                        stack.append(v)
        return count

    def to_geojson(self) -> str:
        return dump_geometry(self.polygons, self.first_order)


def second_order_neighbours(first):
    out = []
    for i, nbs in enumerate(first):
        s = set(nbs)
        for j in nbs:
            s |= first[j]
        s.discard(i)
        out.append(frozenset(s))
    return tuple(out)


def graph_laplacian(neighbours) -> np.ndarray:
    m = len(neighbours)
    L = np.zeros((m, m))
    for i, nbs in enumerate(neighbours):
        for j in nbs:
            L[i, j] = -1.0
        L[i, i] = len(nbs)
    return L


def assign_regions(lon, lat, graph: RegionGraph) -> np.ndarray:
    """Vectorised region lookup; ``-1`` where no polygon contains the point.

    A point on a shared boundary goes to the lowest-index region.
    """
    lon = np.atleast_1d(np.asarray(lon, dtype=float))
    lat = np.atleast_1d(np.asarray(lat, dtype=float))
    out = np.full(lon.shape, -1, dtype=int)
    for k, poly in enumerate(graph.polygons):
        x0, y0, x1, y1 = poly.bbox()
        todo = (out < 0) & (lon >= x0 - 1e-12) & (lon <= x1 + 1e-12) & (lat >= y0 - 1e-12) & (lat <= y1 + 1e-12)
        if not todo.any():
            continue
        idx = np.flatnonzero(todo)
        hit = poly.contains(lon[idx], lat[idx])
        out[idx[hit]] = k
    return out


def assign_region(point, graph: RegionGraph):
    k = int(assign_regions([point[0]], [point[1]], graph)[0])
    return None if k < 0 else k


@dataclass(frozen=True)
class SubmarketConfig:
    """City polygons (by submarket name) and town centres ``(name, lon, lat)``."""

    city_polygons: tuple
    town_centres: tuple
    town_radius_m: float = 10_000.0

    @classmethod
    def load(cls, city_path, towns_path, town_radius_m=10_000.0):
        cities = tuple(load_geometry(city_path))
        with open(towns_path, encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
        towns = tuple((r["name"], float(r["lon"]), float(r["lat"])) for r in rows)
        return cls(cities, towns, town_radius_m)


def assign_submarkets(lon, lat, config: SubmarketConfig) -> np.ndarray:
    """City polygon first, then any town centre within the radius, else Rural."""
    lon = np.atleast_1d(np.asarray(lon, dtype=float))
    lat = np.atleast_1d(np.asarray(lat, dtype=float))
    out = np.full(lon.shape, "Rural", dtype=object)
    done = np.zeros(lon.shape, dtype=bool)
    for poly in config.city_polygons:
        hit = ~done & poly.contains(lon, lat)
        out[hit] = poly.id
        done |= hit
    if config.town_centres:
        tl = np.array([t[1] for t in config.town_centres])
        tb = np.array([t[2] for t in config.town_centres])
        d = haversine(lon[:, None], lat[:, None], tl[None, :], tb[None, :]).min(axis=1)
        out[~done & (d <= config.town_radius_m)] = "Towns"
    return out


def assign_submarket(point, city_polygons, town_centres, town_radius_m=10_000.0) -> str:
    cfg = SubmarketConfig(tuple(city_polygons), tuple(town_centres), town_radius_m)
    return str(assign_submarkets([point[0]], [point[1]], cfg)[0])
