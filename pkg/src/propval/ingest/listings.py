"""Listing parsing and cleaning into :class:`PropertyRecord` objects."""
from __future__ import annotations

import csv
import io
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from ..records import BER_LEVELS, FEATURES, PROPERTY_TYPES, PropertyRecord, RawListing
from . import text as tm
from .geo import (
    MAX_LATITUDE,
    RegionGraph,
    SubmarketConfig,
    assign_regions,
    assign_submarkets,
    project_web_mercator,
)

log = logging.getLogger(__name__)

# exact input header names; the first five are mandatory
LISTING_COLUMNS = (
    "id", "price", "month", "longitude", "latitude",
    "eircode", "beds", "baths", "size", "property_type", "ber", "description",
)
MANDATORY_COLUMNS = LISTING_COLUMNS[:5]


class HeaderError(ValueError):
    pass


@dataclass(frozen=True)
class Rejection:
    row: int
    id: str
    reason: str


def _blank(v):
    return v is None or v.strip() == "" or v.strip().upper() in ("NA", "NAN", "NULL")


def _opt_int(v):
    if _blank(v):
        return None
    f = float(v)
    if not f.is_integer() or f < 0:
        raise ValueError(v)
    return int(f)


def _opt_float(v):
    if _blank(v):
        return None
    f = float(v)
    if not math.isfinite(f):
        raise ValueError(v)
    return f


def _parse_row(k, row):
    rid = (row.get("id") or "").strip() or f"row{k}"
    if _blank(row.get("price")):
        return Rejection(k, rid, "missing_price")
    if _blank(row.get("longitude")) or _blank(row.get("latitude")):
        return Rejection(k, rid, "missing_coordinates")
    try:
        price = float(row["price"].replace(",", ""))
    except ValueError:
        return Rejection(k, rid, "malformed_price")
    if not (math.isfinite(price) and price > 0):
        return Rejection(k, rid, "nonpositive_price")
    try:
        lon = float(row["longitude"])
        lat = float(row["latitude"])
    except ValueError:
        return Rejection(k, rid, "malformed_coordinates")
    if not (math.isfinite(lon) and math.isfinite(lat)):
        return Rejection(k, rid, "malformed_coordinates")
    if abs(lat) > MAX_LATITUDE or abs(lon) > 180:
        return Rejection(k, rid, "coordinate_out_of_range")
    try:
        month = int(row["month"])
    except (TypeError, ValueError):
        return Rejection(k, rid, "invalid_month")
    if not 1 <= month <= 12:
        return Rejection(k, rid, "invalid_month")
    opt = {}
    for name, conv in (("beds", _opt_int), ("baths", _opt_int), ("size", _opt_float)):
        try:
            opt[name] = conv(row.get(name))
        except ValueError:
            return Rejection(k, rid, f"malformed_{name}")
    ber = None if _blank(row.get("ber")) else row["ber"].strip().upper()
    if ber is not None and ber not in BER_LEVELS:
        ber = "unknown" if ber == "UNKNOWN" else None
    ptype = None if _blank(row.get("property_type")) else row["property_type"].strip().lower()
    if ptype is not None and ptype not in PROPERTY_TYPES:
        ptype = None
    ek = None if _blank(row.get("eircode")) else row["eircode"].strip().upper()[:3]
    features = None
    if all(f in row for f in FEATURES):
        try:
            features = tuple(bool(int(row[f])) for f in FEATURES)
        except (TypeError, ValueError):
            return Rejection(k, rid, "malformed_features")
    return RawListing(
        id=rid, price=price, sale_month=month, longitude=lon, latitude=lat,
        description=row.get("description") or "", beds=opt["beds"],
        baths=opt["baths"], size=opt["size"], ber=ber, property_type=ptype,
        eircode_key=ek, features=features,
    )


def parse_listings(stream) -> tuple[list[RawListing], list[Rejection]]:
    """Parse comma-separated listings.

    Returns accepted listings in input order and a rejection log. A missing
    mandatory header raises :class:`HeaderError`; bad rows never abort.
    Optional columns may be absent. If all eleven feature-flag columns are
    present they are read as explicit flags.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.DictReader(stream)
    header = [h.strip() for h in (reader.fieldnames or [])]
    missing = [c for c in MANDATORY_COLUMNS if c not in header]
    if missing:
        raise HeaderError(f"missing mandatory column(s): {', '.join(missing)}")
    reader.fieldnames = header
    accepted, rejected = [], []
    for k, row in enumerate(reader):
        out = _parse_row(k, row)
        (rejected if isinstance(out, Rejection) else accepted).append(out)
    return accepted, rejected


def default_commercial_keywords() -> tuple[str, ...]:
    txt = resources.files("propval.ingest").joinpath("data/commercial_keywords.txt").read_text("utf-8")
    return tuple(
        line.strip() for line in txt.splitlines() if line.strip() and not line.startswith("#")
    )


@dataclass
class CleanReport:
    n_input: int = 0
    n_output: int = 0
    dropped: Counter = field(default_factory=Counter)
    imputed: Counter = field(default_factory=Counter)

    def as_dict(self):
        return {
            "n_input": self.n_input,
            "n_output": self.n_output,
            "dropped": dict(sorted(self.dropped.items())),
            "imputed": dict(sorted(self.imputed.items())),
        }


def clean(listings, graph: RegionGraph, submarkets: SubmarketConfig,
          commercial_keywords=None) -> tuple[list[PropertyRecord], CleanReport]:
    """Impute missing fields from descriptions and emit valid records.

    Rows that stay missing type, beds, baths or size, rows matching a
    commercial keyword and rows outside every region are dropped; the
    report counts each reason and each imputed field.
    """
    if commercial_keywords is None:
        commercial_keywords = default_commercial_keywords()
    report = CleanReport(n_input=len(listings))
    if not listings:
        return [], report
    lon = np.array([r.longitude for r in listings])
    lat = np.array([r.latitude for r in listings])
    xs, ys = project_web_mercator(lon, lat)
    regions = assign_regions(lon, lat, graph)
    markets = assign_submarkets(lon, lat, submarkets)

    out = []
    for i, raw in enumerate(listings):
        desc = raw.description or ""
        if tm.is_commercial(desc, commercial_keywords):
            report.dropped["commercial"] += 1
            continue
        if regions[i] < 0:
            report.dropped["no_region"] += 1
            continue
        vals = {}
        imputed = []
        for name, explicit, mine in (
            ("property_type", raw.property_type, lambda: _known(tm.extract_property_type(desc))),
            ("beds", _gate(raw.beds, tm.MAX_ROOMS), lambda: tm.extract_counts(desc, "beds")),
            ("baths", _gate(raw.baths, tm.MAX_ROOMS), lambda: tm.extract_counts(desc, "baths")),
            ("size", _size_gate(raw.size), lambda: tm.extract_size(desc)),
        ):
            if explicit is None and desc:
                explicit = mine()
                if explicit is not None:
                    imputed.append(name)
            vals[name] = explicit
        if any(v is None for v in vals.values()):
            report.dropped["uninferable"] += 1
            continue
        ber = raw.ber
        if ber is None:
            ber = tm.extract_ber(desc)
            if ber != "unknown":
                imputed.append("ber")
        features = raw.features
        if features is None:
            features = tm.extract_features(desc)
            if desc:
                imputed.append("features")
        for name in imputed:
            report.imputed[name] += 1
        out.append(
            PropertyRecord.build(
                id=raw.id, price=raw.price, month=raw.sale_month,
                x=float(xs[i]), y=float(ys[i]), region_id=int(regions[i]),
                submarket=str(markets[i]), beds=int(vals["beds"]),
                baths=int(vals["baths"]), size=float(vals["size"]),
                property_type=vals["property_type"], ber=ber, features=features,
                lon=raw.longitude, lat=raw.latitude,
            )
        )
    report.n_output = len(out)
    return out, report


def _known(t):
    return None if t == "unknown" else t


def _gate(v, hi):
    return None if v is None or v > hi else v


def _size_gate(v):
    return None if v is None else tm.size_in_gate(v)


def records_to_listings(records) -> list[RawListing]:
    """Round-trip cleaned records back to fully explicit listings."""
    return [
        RawListing(
            id=r.id, price=r.price, sale_month=r.month, longitude=r.lon,
            latitude=r.lat, description="", beds=r.beds, baths=r.baths,
            size=r.size, ber=r.ber, property_type=r.property_type,
            features=r.features,
        )
        for r in records
    ]
