"""Record types, category enumerations and the delimited records file."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace

import numpy as np

SUBMARKETS = ("Cork", "Dublin", "Galway", "Limerick", "Rural", "Towns")
CITIES = ("Cork", "Dublin", "Galway", "Limerick")
PROPERTY_TYPES = (
    "detached",
    "semi-detached",
    "terraced",
    "end-of-terrace",
    "townhouse",
    "apartment",
    "duplex",
)
BER_LEVELS = (
    "A1", "A2", "A3", "B1", "B2", "B3", "C1", "C2", "C3",
    "D1", "D2", "E1", "E2", "F", "G", "unknown",
)
FEATURES = (
    "attic_conversion",
    "garden",
    "cul_de_sac",
    "garage",
    "renovated",
    "period",
    "south_facing",
    "ground_floor_apartment",
    "second_floor_apartment",
    "penthouse",
    "new_property",
)
FEATURE_LABELS = {
    "attic_conversion": "Attic Conversion",
    "garden": "Garden",
    "cul_de_sac": "Cul-de-sac",
    "garage": "Garage",
    "renovated": "Renovated Property",
    "period": "Period Property",
    "south_facing": "South Facing Property",
    "ground_floor_apartment": "Ground Floor Apartment",
    "second_floor_apartment": "Second Floor Apartment",
    "penthouse": "Penthouse Apartment",
    "new_property": "New Property",
}


@dataclass(frozen=True)
class RawListing:
    """One parsed input row; optional fields are ``None`` when absent."""

    id: str
    price: float
    sale_month: int
    longitude: float
    latitude: float
    description: str = ""
    beds: int | None = None
    baths: int | None = None
    size: float | None = None
    ber: str | None = None
    property_type: str | None = None
    eircode_key: str | None = None
    features: tuple[bool, ...] | None = None


@dataclass(frozen=True)
class PropertyRecord:
    id: str
    log_ppsm: float
    price: float
    month: int
    x: float
    y: float
    region_id: int
    submarket: str
    beds: int
    baths: int
    size: float
    property_type: str
    ber: str
    features: tuple[bool, ...]
    lon: float = math.nan
    lat: float = math.nan

    def __post_init__(self):
        if not self.size > 0:
            raise ValueError(f"record {self.id}: size must be positive")
        if self.submarket not in SUBMARKETS:
            raise ValueError(f"record {self.id}: unknown submarket {self.submarket!r}")
        if self.property_type not in PROPERTY_TYPES:
            raise ValueError(f"record {self.id}: unknown property type {self.property_type!r}")
        if self.ber not in BER_LEVELS:
            raise ValueError(f"record {self.id}: unknown BER {self.ber!r}")
        if len(self.features) != len(FEATURES):
            raise ValueError(f"record {self.id}: expected {len(FEATURES)} feature flags")

    @classmethod
    def build(cls, **kw) -> "PropertyRecord":
        """Construct a record, deriving ``log_ppsm`` from price and size."""
        if not (kw["price"] > 0 and kw["size"] > 0):
            raise ValueError(f"record {kw.get('id')}: price and size must be positive")
        kw["log_ppsm"] = math.log(kw["price"] / kw["size"])
        kw["features"] = tuple(bool(f) for f in kw["features"])
        return cls(**kw)

    def with_price(self, price: float) -> "PropertyRecord":
        return replace(self, price=price, log_ppsm=math.log(price / self.size))


def records_to_arrays(records) -> dict[str, np.ndarray]:
    """Column-wise numpy view of a record list."""
    n = len(records)
    out = {
        "log_ppsm": np.fromiter((r.log_ppsm for r in records), float, n),
        "price": np.fromiter((r.price for r in records), float, n),
        "month": np.fromiter((r.month for r in records), float, n),
        "x": np.fromiter((r.x for r in records), float, n),
        "y": np.fromiter((r.y for r in records), float, n),
        "region_id": np.fromiter((r.region_id for r in records), int, n),
        "beds": np.fromiter((r.beds for r in records), float, n),
        "baths": np.fromiter((r.baths for r in records), float, n),
        "size": np.fromiter((r.size for r in records), float, n),
        "submarket": np.array([r.submarket for r in records], dtype=object),
        "property_type": np.array([r.property_type for r in records], dtype=object),
        "ber": np.array([r.ber for r in records], dtype=object),
    }
    feats = np.zeros((n, len(FEATURES)))
    for i, r in enumerate(records):
        feats[i] = r.features
    out["features"] = feats
    return out


RECORD_COLUMNS = (
    "id", "price", "month", "lon", "lat", "x", "y", "region_id", "submarket",
    "beds", "baths", "size", "property_type", "ber", "log_ppsm",
) + FEATURES


def write_records(records, stream, header_comment: str | None = None) -> None:
    """Write records as comma-separated text; floats use round-trip ``repr``."""
    if header_comment:
        for line in header_comment.splitlines():
            stream.write(f"# {line}\n")
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(RECORD_COLUMNS)
    for r in records:
        w.writerow(
            [r.id, repr(r.price), r.month, repr(r.lon), repr(r.lat), repr(r.x),
             repr(r.y), r.region_id, r.submarket, r.beds, r.baths, repr(r.size),
             r.property_type, r.ber, repr(r.log_ppsm)]
            + [int(f) for f in r.features]
        )


def read_records(stream) -> list[PropertyRecord]:
    """Inverse of :func:`write_records`. Lines starting with ``#`` are skipped."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    lines = (line for line in stream if not line.startswith("#"))
    reader = csv.DictReader(lines)
    missing = set(RECORD_COLUMNS) - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"records file missing columns: {sorted(missing)}")
    out = []
    for row in reader:
        out.append(
            PropertyRecord(
                id=row["id"],
                log_ppsm=float(row["log_ppsm"]),
                price=float(row["price"]),
                month=int(row["month"]),
                x=float(row["x"]),
                y=float(row["y"]),
                region_id=int(row["region_id"]),
                submarket=row["submarket"],
                beds=int(row["beds"]),
                baths=int(row["baths"]),
                size=float(row["size"]),
                property_type=row["property_type"],
                ber=row["ber"],
                features=tuple(row[f] == "1" for f in FEATURES),
                lon=float(row["lon"]),
                lat=float(row["lat"]),
            )
        )
    return out
