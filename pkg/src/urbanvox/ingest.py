"""Readers for the on-disk inputs: ESRI ASCII grids, GeoJSON footprints, EPW weather."""
from __future__ import annotations

import calendar
import json
import logging
import math
import re
from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import Any, Hashable, Literal, Mapping, Sequence

import numpy as np
from shapely.geometry import Polygon
from shapely.strtree import STRtree

from .geogrid import (CATEGORICAL_NODATA, CONTINUOUS_NODATA, GridSpec, RasterLayer,
                      resample)
from .landcover import HarmonizedClass

log = logging.getLogger(__name__)


class ParseError(ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class TreeOpticalParams:
    extinction_coefficient: float = 0.5
    leaf_area_density: float = 1.0
    trunk_height_ratio: float = 0.3

    def __post_init__(self):
        if not self.extinction_coefficient > 0:
            raise ValueError("extinction coefficient must be positive")
        if not self.leaf_area_density >= 0:
            raise ValueError("leaf area density must be non-negative")
        if not 0 <= self.trunk_height_ratio < 1:
            raise ValueError("trunk height ratio must lie in [0, 1)")


# --------------------------------------------------------------------------
# ESRI ASCII grid

@dataclass
class AscRaster:
    values: np.ndarray
    xll: float
    yll: float
    dx: float
    dy: float
    nodata: float | None


_ASC_KEYS = {"ncols", "nrows", "xllcorner", "yllcorner", "xllcenter", "yllcenter",
             "cellsize", "dx", "dy", "nodata_value"}


def read_asc(text: str) -> AscRaster:
    """Parse ESRI ASCII grid text into values (north row first) and header."""
    lines = text.splitlines()
    header: dict[str, float] = {}
    i = 0
    while i < len(lines):
        parts = lines[i].split()
        if not parts:
            i += 1
            continue
        key = parts[0].lower()
        if key not in _ASC_KEYS:
            break
        if len(parts) != 2:
            raise ParseError(f"malformed header entry {lines[i]!r}", i + 1)
        try:
            header[key] = float(parts[1])
        except ValueError:
            raise ParseError(f"non-numeric header value {parts[1]!r}", i + 1) from None
        i += 1
    for key in ("ncols", "nrows"):
        if key not in header:
            raise ParseError(f"missing header key {key}")
    if "cellsize" in header:
        dx = dy = header["cellsize"]
    elif "dx" in header and "dy" in header:
        dx, dy = header["dx"], header["dy"]
    else:
        raise ParseError("missing header key cellsize")
    if dx <= 0 or dy <= 0:
        raise ParseError("cell size must be positive")
    if "xllcorner" in header:
        xll = header["xllcorner"]
    elif "xllcenter" in header:
        xll = header["xllcenter"] - dx / 2
    else:
        raise ParseError("missing header key xllcorner")
    if "yllcorner" in header:
        yll = header["yllcorner"]
    elif "yllcenter" in header:
        yll = header["yllcenter"] - dy / 2
    else:
        raise ParseError("missing header key yllcorner")
    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    if ncols < 1 or nrows < 1:
        raise ParseError("ncols and nrows must be positive")

    rows = []
    for lineno in range(i, len(lines)):
        parts = lines[lineno].split()
        if not parts:
            continue
        if len(parts) != ncols:
            raise ParseError(f"expected {ncols} values, found {len(parts)}", lineno + 1)
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise ParseError(f"non-numeric cell value ({exc})", lineno + 1) from None
    if len(rows) != nrows:
        raise ParseError(f"expected {nrows} data rows, found {len(rows)}")
    return AscRaster(np.array(rows), xll, yll, dx, dy, header.get("nodata_value"))


def _asc_edges(asc: AscRaster, grid: GridSpec, units: str):
    nrows, ncols = asc.values.shape
    top = asc.yll + nrows * asc.dy
    y = top - np.arange(nrows + 1) * asc.dy
    x = asc.xll + np.arange(ncols + 1) * asc.dx
    if units == "degrees":
        return y, x
    if units == "meters":
        return grid.lat_min + y / grid.meters_per_deg_lat, grid.lon_min + x / grid.meters_per_deg_lon
    raise ValueError(f"units must be 'degrees' or 'meters', got {units!r}")


def parse_asc(text: str, grid: GridSpec, *, units: Literal["degrees", "meters"] = "degrees",
              kind: Literal["continuous", "categorical"] = "continuous",
              mode: Literal["dominant", "mean"] | None = None,
              code_map: Mapping[int, int] | None = None) -> RasterLayer:
    """Read an ASCII grid and resample it onto ``grid``.

    With ``units="meters"`` the header corner is measured in metres east and
    north of the grid's (lon_min, lat_min) corner. Categorical rasters are
    translated through ``code_map`` (raw code -> harmonized code, unknown codes
    becoming NO_DATA) unless their values already are harmonized codes.
    ``mode`` defaults to ``dominant`` for categorical and ``mean`` otherwise.
    """
    asc = read_asc(text)
    values = asc.values
    missing = np.zeros(values.shape, dtype=bool)
    if asc.nodata is not None:
        missing = values == asc.nodata
    if kind == "categorical":
        codes = np.full(values.shape, CATEGORICAL_NODATA, dtype=np.int32)
        raw = values.astype(np.int64)
        if code_map is None:
            known = {int(c) for c in HarmonizedClass}
            mapped = np.where(np.isin(raw, list(known)), raw, int(HarmonizedClass.NO_DATA))
        else:
            lut = {int(k): int(v) for k, v in code_map.items()}
            mapped = np.array([lut.get(int(v), int(HarmonizedClass.NO_DATA)) for v in raw.ravel()],
                              dtype=np.int32).reshape(raw.shape)
        codes[~missing] = mapped[~missing]
        values, nodata = codes, CATEGORICAL_NODATA
    else:
        values = np.where(missing, CONTINUOUS_NODATA, values)
        nodata = CONTINUOUS_NODATA
    lat_edges, lon_edges = _asc_edges(asc, grid, units)
    if mode is None:
        mode = "dominant" if kind == "categorical" else "mean"
    return resample(values, lat_edges, lon_edges, nodata, grid, mode, kind)


def write_asc(layer: RasterLayer, *, units: Literal["degrees", "meters"] = "degrees") -> str:
    """Serialize a layer as ASCII grid text on its own lattice.

    Degree cells are not square, so the header uses ``dx``/``dy``.
    """
    grid = layer.grid
    if units == "degrees":
        xll, yll, dx, dy = grid.lon_min, grid.lat_south, grid.dlon, grid.dlat
    elif units == "meters":
        xll = 0.0
        yll = (grid.lat_south - grid.lat_min) * grid.meters_per_deg_lat
        dx = dy = grid.voxel_size_m
    else:
        raise ValueError(f"units must be 'degrees' or 'meters', got {units!r}")
    out = [f"ncols {grid.n_cols}", f"nrows {grid.n_rows}",
           f"xllcorner {xll!r}", f"yllcorner {yll!r}"]
    out += [f"cellsize {dx!r}"] if dx == dy else [f"dx {dx!r}", f"dy {dy!r}"]
    if layer.kind == "categorical":
        out.append(f"NODATA_value {int(layer.nodata)}")
        out += [" ".join(str(int(v)) for v in row) for row in layer.values]
    else:
        out.append(f"NODATA_value {layer.nodata!r}")
        vals = np.where(layer.mask, layer.values, layer.nodata)
        out += [" ".join(repr(float(v)) for v in row) for row in vals]
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# footprints

@dataclass(frozen=True)
class BuildingFootprint:
    """Polygon footprint; rings hold (lat, lon) vertices, the first ring is the outline."""

    rings: tuple[tuple[tuple[float, float], ...], ...]
    height_top: float | None = None
    height_bottom: float = 0.0
    source: str = ""
    feature_id: Hashable = None

    def __post_init__(self):
        rings = []
        for ring in self.rings:
            pts = tuple((float(a), float(b)) for a, b in ring)
            if len(pts) < 3:
                raise ValueError("polygon ring needs at least three vertices")
            if pts[0] != pts[-1]:
                pts = pts + (pts[0],)
            rings.append(pts)
        if not rings:
            raise ValueError("footprint has no rings")
        object.__setattr__(self, "rings", tuple(rings))
        if self.height_bottom is None or self.height_bottom < 0:
            raise ValueError("height_bottom must be >= 0")
        if self.height_top is not None and self.height_top < self.height_bottom:
            raise ValueError("height_top below height_bottom")

    def shape(self) -> Polygon:
        """Shapely polygon with x = lon, y = lat."""
        rings = [[(lon, lat) for lat, lon in ring] for ring in self.rings]
        return Polygon(rings[0], rings[1:])


def _as_height(value: Any) -> float | None:
    if value is None or isinstance(value, bool):
        return None
    try:
        h = float(value)
    except (TypeError, ValueError):
        return parse_height_tag(str(value))
    return h if math.isfinite(h) else None


def parse_height_tag(text: str) -> float | None:
    """Metres from a free-form height like ``"12 m"``, ``"12.5"`` or ``"40 ft"``."""
    m = re.match(r"^\s*([+-]?\d+(?:[.,]\d+)?)\s*(.*?)\s*$", text.lower())
    if not m:
        return None
    h = float(m.group(1).replace(",", "."))
    unit = m.group(2)
    if unit in ("ft", "feet", "'"):
        h *= 0.3048
    elif unit not in ("", "m", "meter", "meters", "metre", "metres"):
        return None
    return h


def parse_footprints_geojson(text: str, source: str = "geojson") -> list[BuildingFootprint]:
    """Footprints from a GeoJSON FeatureCollection of (Multi)Polygon features.

    Heights come from the ``height`` and ``min_height`` properties. Each part
    of a MultiPolygon becomes its own footprint sharing the feature id, which
    is the feature's ``id`` member, an ``id`` property, or its index.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc.msg}", exc.lineno) from None
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise ParseError("expected a GeoJSON FeatureCollection")
    out: list[BuildingFootprint] = []
    bad = []
    for idx, feat in enumerate(doc.get("features") or []):
        geom = (feat or {}).get("geometry") or {}
        gtype = geom.get("type")
        if gtype == "Polygon":
            parts = [geom.get("coordinates")]
        elif gtype == "MultiPolygon":
            parts = geom.get("coordinates")
        else:
            bad.append((idx, gtype))
            continue
        props = feat.get("properties") or {}
        fid = feat.get("id", props.get("id", idx))
        top = _as_height(props.get("height"))
        bottom = _as_height(props.get("min_height")) or 0.0
        if top is not None and top < bottom:
            log.warning("feature %s: height %.2f below min_height %.2f; height dropped",
                        fid, top, bottom)
            top = None
        try:
            for part in parts:
                rings = tuple(tuple((float(lat), float(lon)) for lon, lat, *_ in ring)
                              for ring in part)
                out.append(BuildingFootprint(rings, top, bottom, source, fid))
        except (TypeError, ValueError) as exc:
            raise ParseError(f"feature {idx}: bad coordinates ({exc})") from None
    if bad:
        listing = ", ".join(f"#{i} ({t})" for i, t in bad)
        raise ParseError(f"unsupported geometry types in features {listing}")
    return out


def footprints_to_geojson(footprints: Sequence[BuildingFootprint]) -> dict:
    feats = []
    for fp in footprints:
        props: dict[str, Any] = {"min_height": fp.height_bottom, "source": fp.source}
        if fp.height_top is not None:
            props["height"] = fp.height_top
        coords = [[[lon, lat] for lat, lon in ring] for ring in fp.rings]
        feats.append({"type": "Feature", "id": fp.feature_id, "properties": props,
                      "geometry": {"type": "Polygon", "coordinates": coords}})
    return {"type": "FeatureCollection", "features": feats}


@dataclass
class MergeSummary:
    filled: int = 0
    unresolved: int = 0


def merge_heights(base: Sequence[BuildingFootprint],
                  complementary: Sequence[BuildingFootprint],
                  summary: MergeSummary | None = None) -> list[BuildingFootprint]:
    """Fill missing base heights from intersecting complementary footprints.

    The filled height is the intersection-area weighted mean of the donor
    heights; each donor is intersected with the base polygon independently.
    Base footprints that already carry a height are returned unchanged.
    """
    summary = summary if summary is not None else MergeSummary()
    donors = [fp for fp in complementary if fp.height_top is not None]
    shapes = [fp.shape() for fp in donors]
    tree = STRtree(shapes) if shapes else None
    out = []
    for fp in base:
        if fp.height_top is not None or tree is None:
            if fp.height_top is None:
                summary.unresolved += 1
            out.append(fp)
            continue
        poly = fp.shape()
        if not poly.is_valid:
            poly = poly.buffer(0)
        num = den = 0.0
        used = []
        for j in tree.query(poly, predicate="intersects"):
            area = poly.intersection(shapes[j]).area
            if area > 0:
                num += donors[j].height_top * area
                den += area
                used.append(donors[j].height_top)
        h = min(max(num / den, min(used)), max(used)) if den > 0 else None
        if h is not None and h >= fp.height_bottom:
            out.append(replace(fp, height_top=h))
            summary.filled += 1
        else:
            summary.unresolved += 1
            out.append(fp)
    if summary.unresolved:
        log.info("merge_heights: %d footprints filled, %d left without height",
                 summary.filled, summary.unresolved)
    return out


# --------------------------------------------------------------------------
# EPW

@dataclass(frozen=True)
class WeatherSeries:
    """Hourly radiation records; timestamps are local standard time, hour 0-23."""

    latitude: float
    longitude: float
    timezone: float
    timestamps: tuple[datetime, ...]
    dni: np.ndarray
    dhi: np.ndarray
    clamped: int = 0

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def records(self):
        return list(zip(self.timestamps, self.dni.tolist(), self.dhi.tolist()))

    def select(self, start: datetime | None = None, end: datetime | None = None) -> "WeatherSeries":
        """Records with ``start <= t < end``."""
        keep = [i for i, t in enumerate(self.timestamps)
                if (start is None or t >= start) and (end is None or t < end)]
        idx = np.array(keep, dtype=np.int64)
        return replace(self, timestamps=tuple(self.timestamps[i] for i in keep),
                       dni=self.dni[idx], dhi=self.dhi[idx])


EPW_HEADER_LINES = 8
# 0-based column indices of the EnergyPlus weather data dictionary
EPW_DNI = 14
EPW_DHI = 15


def parse_epw(text: str) -> WeatherSeries:
    """Parse an EnergyPlus weather file.

    Site coordinates and time zone come from the LOCATION line. Typical
    meteorological years stitch months from different years, so every record
    is placed in the first record's year (the preceding leap year if the file
    carries 29 February).
    """
    lines = text.splitlines()
    if not lines or not lines[0].upper().startswith("LOCATION"):
        raise ParseError("first line must be the LOCATION header", 1)
    loc = [f.strip() for f in lines[0].split(",")]
    try:
        lat, lon, tz = float(loc[6]), float(loc[7]), float(loc[8])
    except (IndexError, ValueError):
        raise ParseError("LOCATION header lacks latitude/longitude/time zone", 1) from None

    raw = []
    for lineno in range(EPW_HEADER_LINES, len(lines)):
        line = lines[lineno]
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) < 35:
            raise ParseError(f"data row has {len(fields)} fields, expected at least 35",
                             lineno + 1)
        try:
            y, m, d, h = (int(float(f)) for f in fields[:4])
            dni, dhi = float(fields[EPW_DNI]), float(fields[EPW_DHI])
        except ValueError:
            raise ParseError("non-numeric date or radiation field", lineno + 1) from None
        if not (math.isfinite(dni) and math.isfinite(dhi)):
            raise ParseError("non-finite radiation field", lineno + 1)
        if not 1 <= h <= 24:
            raise ParseError(f"hour {h} outside 1-24", lineno + 1)
        raw.append((lineno + 1, y, m, d, h, dni, dhi))
    if not raw:
        raise ParseError("no data rows")

    year = raw[0][1]
    if any(m == 2 and d == 29 for _, _, m, d, *_ in raw) and not calendar.isleap(year):
        while not calendar.isleap(year):
            year -= 1
    stamps, dnis, dhis = [], [], []
    clamped = 0
    for lineno, _, m, d, h, dni, dhi in raw:
        try:
            t = datetime(year, m, d, h - 1)
        except ValueError:
            raise ParseError(f"invalid date {m}/{d}", lineno) from None
        if stamps and t <= stamps[-1]:
            raise ParseError("timestamps are not strictly increasing", lineno)
        if dni < 0 or dhi < 0:
            clamped += 1
        stamps.append(t)
        dnis.append(max(dni, 0.0))
        dhis.append(max(dhi, 0.0))
    if clamped:
        log.warning("parse_epw: %d negative radiation values clamped to 0", clamped)
    return WeatherSeries(lat, lon, tz, tuple(stamps), np.array(dnis), np.array(dhis), clamped)


from .overpass import (OverpassError, OverpassHTTPError, OverpassMalformed,  # noqa: E402
                       OverpassRateLimited, fetch_osm_buildings)
