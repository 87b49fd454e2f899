"""Land-cover class harmonization across source datasets.

Every supported source (ESA WorldCover, Esri 10 m land cover, Dynamic World,
OpenEarthMap Japan, UrbanWatch, OpenStreetMap) uses its own class labels.
They are mapped onto one shared set of 14 classes so that models built from
different sources are directly comparable.
"""
from __future__ import annotations

import enum
import re
from typing import Mapping


class HarmonizedClass(enum.IntEnum):
    BARELAND = 1
    RANGELAND = 2
    SHRUB = 3
    AGRICULTURE_LAND = 4
    TREE = 5
    MOSS_AND_LICHEN = 6
    WETLAND = 7
    MANGROVE = 8
    WATER = 9
    SNOW_AND_ICE = 10
    DEVELOPED_SPACE = 11
    ROAD = 12
    BUILDING = 13
    NO_DATA = 14


SOURCES = ("ESA", "Esri", "DW", "OEMJ", "UW", "OSM")

H = HarmonizedClass

# class -> {source: labels}; a missing source means the source has no such class
LANDCOVER_TABLE: dict[HarmonizedClass, dict[str, tuple[str, ...]]] = {
    H.BARELAND: {
        "ESA": ("Barren/sparse vegetation",),
        "Esri": ("Bare Ground",),
        "DW": ("Bare",),
        "OEMJ": ("Bareland",),
        "UW": ("Barren",),
        "OSM": ("quarry", "brownfield", "bare_rock", "scree", "shingle", "rock",
                "sand", "desert", "landfill", "beach"),
    },
    H.RANGELAND: {
        "ESA": ("Grassland",),
        "Esri": ("Grass",),
        "DW": ("Grass",),
        "OEMJ": ("Rangeland",),
        "UW": ("Grass/Shrub",),
        "OSM": ("grass", "meadow", "grassland", "heath", "garden", "park"),
    },
    H.SHRUB: {
        "ESA": ("Shrubland",),
        "Esri": ("Scrub/Shrub",),
        "DW": ("Shrub and Scrub",),
        "OEMJ": ("Shrub",),
        "OSM": ("scrub", "shrubland", "bush", "thicket"),
    },
    H.AGRICULTURE_LAND: {
        "ESA": ("Cropland",),
        "Esri": ("Crops",),
        "DW": ("Crops",),
        "OEMJ": ("Agriculture",),
        "UW": ("Agriculture",),
        "OSM": ("farmland", "orchard", "vineyard", "plant_nursery",
                "greenhouse_horticulture", "flowerbed", "allotments"),
    },
    H.TREE: {
        "ESA": ("Trees",),
        "Esri": ("Trees",),
        "DW": ("Trees",),
        "OEMJ": ("Tree",),
        "UW": ("Tree Canopy",),
        "OSM": ("wood", "forest", "tree", "tree_row"),
    },
    H.MOSS_AND_LICHEN: {
        "ESA": ("Moss and lichen",),
        "OSM": ("moss", "lichen", "tundra_vegetation"),
    },
    H.WETLAND: {
        "ESA": ("Herbaceous wetland",),
        "Esri": ("Flooded Vegetation",),
        "DW": ("Flooded Vegetation",),
        "OEMJ": ("Wetland",),
        "OSM": ("wetland", "marsh", "swamp", "bog", "fen"),
    },
    H.MANGROVE: {
        "ESA": ("Mangroves",),
        "OEMJ": ("Mangrove",),
        "OSM": ("mangrove", "mangrove_forest", "mangrove_swamp"),
    },
    H.WATER: {
        "ESA": ("Open water",),
        "Esri": ("Water",),
        "DW": ("Water",),
        "OEMJ": ("Water",),
        "UW": ("Water", "Sea"),
        "OSM": ("water", "waterway", "reservoir", "basin", "bay", "ocean", "sea",
                "river", "lake"),
    },
    H.SNOW_AND_ICE: {
        "ESA": ("Snow and ice",),
        "Esri": ("Snow/Ice",),
        "DW": ("Snow and Ice",),
        "OEMJ": ("Snow",),
        "OSM": ("glacier", "snow", "ice", "snowfield", "ice_shelf"),
    },
    H.DEVELOPED_SPACE: {
        "ESA": ("Built-up",),
        "Esri": ("Built Area",),
        "DW": ("Built",),
        "OEMJ": ("Developed",),
        "UW": ("Parking Lot",),
        "OSM": ("industrial", "retail", "commercial", "residential", "construction",
                "railway", "parking", "islet", "island"),
    },
    H.ROAD: {
        "OEMJ": ("Road",),
        "UW": ("Road",),
        "OSM": ("highway", "road", "path", "track", "street"),
    },
    H.BUILDING: {
        "OEMJ": ("Building",),
        "UW": ("Building",),
        "OSM": ("building", "house", "apartment", "commercial_building",
                "industrial_building"),
    },
    H.NO_DATA: {
        "Esri": ("No Data", "Clouds"),
        "UW": ("Unknown",),
        "OSM": ("unknown", "no_data", "clouds", "undefined"),
    },
}

# Published integer encodings of the raster products, used when a land-cover
# raster carries raw codes rather than labels.
NUMERIC_LEGENDS: dict[str, dict[int, str]] = {
    "ESA": {
        10: "Trees", 20: "Shrubland", 30: "Grassland", 40: "Cropland",
        50: "Built-up", 60: "Barren/sparse vegetation", 70: "Snow and ice",
        80: "Open water", 90: "Herbaceous wetland", 95: "Mangroves",
        100: "Moss and lichen",
    },
    "Esri": {
        0: "No Data", 1: "Water", 2: "Trees", 3: "Grass", 4: "Flooded Vegetation",
        5: "Crops", 6: "Scrub/Shrub", 7: "Built Area", 8: "Bare Ground",
        9: "Snow/Ice", 10: "Clouds",
        # later releases renamed Grass to Rangeland under a new code
        11: "Grass",
    },
    "DW": {
        0: "Water", 1: "Trees", 2: "Grass", 3: "Flooded Vegetation", 4: "Crops",
        5: "Shrub and Scrub", 6: "Built", 7: "Bare", 8: "Snow and Ice",
    },
}


def _normalize(label: str) -> str:
    return re.sub(r"[\s_]+", " ", label.strip().lower())


def _build_lookup() -> dict[str, dict[str, HarmonizedClass]]:
    lookup: dict[str, dict[str, HarmonizedClass]] = {s: {} for s in SOURCES}
    for cls, by_source in LANDCOVER_TABLE.items():
        for source, labels in by_source.items():
            for label in labels:
                key = _normalize(label)
                if key in lookup[source] and lookup[source][key] != cls:
                    raise AssertionError(f"ambiguous label {label!r} for {source}")
                lookup[source][key] = cls
    return lookup


_LOOKUP = _build_lookup()
_SOURCE_BY_KEY = {s.lower(): s for s in SOURCES}


def canonical_source(source: str) -> str:
    try:
        return _SOURCE_BY_KEY[source.strip().lower()]
    except KeyError:
        raise ValueError(
            f"unknown land-cover source {source!r}; expected one of {', '.join(SOURCES)}"
        ) from None


def harmonize_landcover(source: str, label: str) -> HarmonizedClass:
    """Map a source dataset label to its harmonized class.

    Matching ignores case and treats underscores and runs of whitespace as
    equivalent. Labels the source does not define map to ``NO_DATA``; an
    unrecognized ``source`` raises ``ValueError``.
    """
    table = _LOOKUP[canonical_source(source)]
    return table.get(_normalize(label), HarmonizedClass.NO_DATA)


def code_lookup(source: str, legend: Mapping[int, str] | None = None) -> dict[int, int]:
    """Raw raster code -> harmonized code for ``source``.

    ``legend`` overrides the built-in numeric legend; sources without a
    published integer encoding (OEMJ, UW, OSM) require one.
    """
    src = canonical_source(source)
    if legend is None:
        if src not in NUMERIC_LEGENDS:
            raise ValueError(f"no built-in numeric legend for {src}; supply one")
        legend = NUMERIC_LEGENDS[src]
    return {int(code): int(harmonize_landcover(src, label)) for code, label in legend.items()}
