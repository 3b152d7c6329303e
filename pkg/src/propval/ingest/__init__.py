"""Listing ingestion: parsing, text mining, projection and area labelling."""
from .geo import (
    DomainError,
    Polygon,
    RegionGraph,
    SubmarketConfig,
    assign_region,
    assign_regions,
    assign_submarket,
    assign_submarkets,
    haversine,
    inverse_web_mercator,
    load_geometry,
    parse_geometry,
    project_web_mercator,
)
from .listings import (
    LISTING_COLUMNS,
    CleanReport,
    HeaderError,
    Rejection,
    clean,
    parse_listings,
    records_to_listings,
)
from .text import (
    extract_ber,
    extract_counts,
    extract_features,
    extract_property_type,
    extract_size,
)
