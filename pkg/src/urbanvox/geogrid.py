"""Georeferenced cell lattices and the 2D raster operations built on them.

Coordinates use a local equirectangular approximation: one degree of
latitude is 111 132 m everywhere and one degree of longitude is
111 320 m scaled by the cosine of the box's centre latitude. Row 0 of every
raster is the northernmost row.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Literal, Sequence

import numpy as np
import shapely
from shapely.geometry import Polygon

from .landcover import HarmonizedClass, harmonize_landcover  # noqa: F401  (re-export)

log = logging.getLogger(__name__)

METERS_PER_DEG_LAT = 111_132.0
METERS_PER_DEG_LON_EQUATOR = 111_320.0

CONTINUOUS_NODATA = -9999.0
CATEGORICAL_NODATA = 0

_EPS = 1e-9


def meters_per_deg_lon(lat: float) -> float:
    return METERS_PER_DEG_LON_EQUATOR * math.cos(math.radians(lat))


@dataclass(frozen=True)
class GridSpec:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    voxel_size_m: float
    n_rows: int
    n_cols: int
    meters_per_deg_lat: float
    meters_per_deg_lon: float

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def dlat(self) -> float:
        return self.voxel_size_m / self.meters_per_deg_lat

    @property
    def dlon(self) -> float:
        return self.voxel_size_m / self.meters_per_deg_lon

    @property
    def lat_south(self) -> float:
        """Southern edge of the last row (the lattice may stop short of lat_min)."""
        return self.lat_max - self.n_rows * self.dlat

    @property
    def lon_east(self) -> float:
        return self.lon_min + self.n_cols * self.dlon

    def lat_edges(self) -> np.ndarray:
        """Row boundaries, north to south (length n_rows + 1)."""
        return self.lat_max - np.arange(self.n_rows + 1) * self.dlat

    def lon_edges(self) -> np.ndarray:
        return self.lon_min + np.arange(self.n_cols + 1) * self.dlon

    def to_rowcol(self, lat, lon):
        """Fractional (row, col) lattice coordinates of lat/lon points."""
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        return (self.lat_max - lat) / self.dlat, (lon - self.lon_min) / self.dlon

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        return (self.lat_max - (row + 0.5) * self.dlat, self.lon_min + (col + 0.5) * self.dlon)


def make_grid(bbox: Sequence[float], voxel_size_m: float) -> GridSpec:
    """Build the cell lattice covering ``bbox = (lat_min, lon_min, lat_max, lon_max)``.

    Cells are square with edge ``voxel_size_m``; the lattice is anchored at
    the north-west corner and holds as many whole cells as fit.
    """
    lat_min, lon_min, lat_max, lon_max = (float(v) for v in bbox)
    if not voxel_size_m > 0:
        raise ValueError(f"voxel_size_m must be positive, got {voxel_size_m}")
    if not all(math.isfinite(v) for v in (lat_min, lon_min, lat_max, lon_max)):
        raise ValueError("bbox contains non-finite coordinates")
    if abs(lat_min) > 90 or abs(lat_max) > 90:
        raise ValueError("latitude outside [-90, 90]")
    if lon_min > lon_max:
        raise ValueError(
            "bbox spans the antimeridian (lon_min > lon_max); split it into two boxes"
        )
    if not (lat_min < lat_max and lon_min < lon_max):
        raise ValueError("degenerate bbox: zero area")
    mlat = METERS_PER_DEG_LAT
    mlon = meters_per_deg_lon(0.5 * (lat_min + lat_max))
    n_rows = math.floor((lat_max - lat_min) * mlat / voxel_size_m + _EPS)
    n_cols = math.floor((lon_max - lon_min) * mlon / voxel_size_m + _EPS)
    if n_rows < 1 or n_cols < 1:
        raise ValueError("bbox is smaller than one voxel")
    return GridSpec(lat_min, lat_max, lon_min, lon_max, float(voxel_size_m),
                    n_rows, n_cols, mlat, mlon)


@dataclass(frozen=True)
class RasterLayer:
    grid: GridSpec
    values: np.ndarray
    kind: Literal["continuous", "categorical"] = "continuous"
    nodata: float = CONTINUOUS_NODATA

    def __post_init__(self):
        values = np.array(self.values, dtype=np.int32 if self.kind == "categorical" else float)
        if values.shape != self.grid.shape:
            raise ValueError(f"values shape {values.shape} does not match grid {self.grid.shape}")
        if self.kind == "categorical":
            allowed = {int(c) for c in HarmonizedClass} | {int(self.nodata)}
            present = set(np.unique(values).tolist())
            if not present <= allowed:
                raise ValueError(f"unregistered class codes {sorted(present - allowed)}")
        elif self.kind != "continuous":
            raise ValueError(f"unknown raster kind {self.kind!r}")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def mask(self) -> np.ndarray:
        """True where the cell holds data."""
        if self.kind == "continuous":
            return np.isfinite(self.values) & (self.values != self.nodata)
        return self.values != self.nodata

    @classmethod
    def empty(cls, grid: GridSpec, kind="continuous") -> "RasterLayer":
        nodata = CATEGORICAL_NODATA if kind == "categorical" else CONTINUOUS_NODATA
        return cls(grid, np.full(grid.shape, nodata), kind, nodata)


# --------------------------------------------------------------------------
# polygons

def polygon_in_grid(rings: Sequence[Sequence[tuple[float, float]]], grid: GridSpec) -> Polygon:
    """Shapely polygon in (col, row) lattice coordinates from (lat, lon) rings."""
    conv = []
    for ring in rings:
        arr = np.asarray(ring, dtype=float)
        r, c = grid.to_rowcol(arr[:, 0], arr[:, 1])
        conv.append(np.column_stack([c, r]))
    return Polygon(conv[0], conv[1:])


def polygon_coverage(polygons: Sequence[Polygon], grid: GridSpec, supersample: int = 4):
    """Yield ``(index, row0, col0, counts)`` per polygon.

    ``counts[i, j]`` is the number of the ``supersample**2`` sub-cell centres
    of cell ``(row0 + i, col0 + j)`` falling inside the polygon. Invalid
    (self-intersecting) polygons are logged and skipped.
    """
    k = int(supersample)
    if k < 1:
        raise ValueError("supersample must be >= 1")
    sub = (np.arange(k) + 0.5) / k
    for idx, poly in enumerate(polygons):
        if poly.is_empty or not poly.is_valid:
            log.warning("polygon %d skipped: %s", idx, shapely.is_valid_reason(poly))
            continue
        cmin, rmin, cmax, rmax = poly.bounds
        r0, r1 = max(0, math.floor(rmin)), min(grid.n_rows, math.ceil(rmax))
        c0, c1 = max(0, math.floor(cmin)), min(grid.n_cols, math.ceil(cmax))
        if r0 >= r1 or c0 >= c1:
            continue
        ys = (np.arange(r0, r1)[:, None] + sub[None, :]).ravel()
        xs = (np.arange(c0, c1)[:, None] + sub[None, :]).ravel()
        X, Y = np.meshgrid(xs, ys)
        inside = shapely.contains_xy(poly, X, Y)
        counts = inside.reshape(r1 - r0, k, c1 - c0, k).sum(axis=(1, 3))
        if counts.any():
            yield idx, r0, c0, counts


def dominant_polygon_index(polygons: Sequence[Polygon], grid: GridSpec,
                           tie_keys: Sequence[float] | None = None,
                           supersample: int = 4) -> np.ndarray:
    """Per-cell index of the polygon covering the largest area, or -1.

    Equal coverage goes to the polygon with the smaller ``tie_keys`` entry
    (default: smaller index).
    """
    best = np.full(grid.shape, -1, dtype=np.int64)
    best_count = np.zeros(grid.shape, dtype=np.int64)
    best_key = np.full(grid.shape, np.inf)
    keys = np.arange(len(polygons), dtype=float) if tie_keys is None else np.asarray(tie_keys, float)
    for idx, r0, c0, counts in polygon_coverage(polygons, grid, supersample):
        sl = np.s_[r0:r0 + counts.shape[0], c0:c0 + counts.shape[1]]
        key = keys[idx]
        better = (counts > best_count[sl]) | (
            (counts == best_count[sl]) & (counts > 0) & (key < best_key[sl]))
        best[sl][better] = idx
        best_count[sl][better] = counts[better]
        best_key[sl][better] = key
    return best


def rasterize_polygons(footprints, grid: GridSpec, field: Literal["top", "bottom"] = "top",
                       supersample: int = 4) -> RasterLayer:
    """Rasterize footprint heights by dominant coverage.

    Each cell takes the ``height_top`` (or ``height_bottom``) of the footprint
    covering most of it, estimated with ``supersample x supersample`` point
    sampling. Footprints without a top height are ignored.
    """
    if field not in ("top", "bottom"):
        raise ValueError(f"field must be 'top' or 'bottom', got {field!r}")
    usable = [fp for fp in footprints if fp.height_top is not None]
    polys = [polygon_in_grid(fp.rings, grid) for fp in usable]
    vals = np.array([fp.height_top if field == "top" else fp.height_bottom for fp in usable],
                    dtype=float)
    idx = dominant_polygon_index(polys, grid, tie_keys=vals, supersample=supersample)
    out = np.full(grid.shape, CONTINUOUS_NODATA)
    hit = idx >= 0
    out[hit] = vals[idx[hit]]
    return RasterLayer(grid, out, "continuous", CONTINUOUS_NODATA)


# --------------------------------------------------------------------------
# resampling

def _axis_overlaps(src_edges: np.ndarray, n_dst: int):
    """Overlap lengths between source intervals and unit destination cells.

    ``src_edges`` is increasing and expressed in destination cell units.
    Returns (src_index, dst_index, overlap_in_dst_units).
    """
    lo, hi = src_edges[:-1], src_edges[1:]
    first = np.clip(np.floor(lo).astype(np.int64), 0, n_dst)
    last = np.clip(np.ceil(hi).astype(np.int64), 0, n_dst)
    n = np.maximum(last - first, 0)
    src = np.repeat(np.arange(len(lo)), n)
    offs = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n)
    dst = np.repeat(first, n) + offs
    w = np.minimum(hi[src], dst + 1.0) - np.maximum(lo[src], dst.astype(float))
    keep = w > _EPS
    return src[keep], dst[keep], w[keep]


def resample(values: np.ndarray, lat_edges: np.ndarray, lon_edges: np.ndarray, nodata: float,
             dst_grid: GridSpec, mode: Literal["dominant", "mean"], kind="continuous") -> RasterLayer:
    """Area-weighted resampling of a north-up lattice onto ``dst_grid``.

    ``lat_edges`` run north to south and ``lon_edges`` west to east. In
    ``mean`` mode nodata is ignored; in ``dominant`` mode the value with the
    largest total overlap wins, ties going to the smaller value. Destination
    cells with no valid contribution are nodata.
    """
    values = np.asarray(values)
    lat_edges = np.asarray(lat_edges, dtype=float)
    lon_edges = np.asarray(lon_edges, dtype=float)
    if values.shape != (len(lat_edges) - 1, len(lon_edges) - 1):
        raise ValueError("edge arrays do not match value shape")
    rows_e, cols_e = dst_grid.to_rowcol(lat_edges, lon_edges)
    if (rows_e[-1] <= 0 or rows_e[0] >= dst_grid.n_rows
            or cols_e[-1] <= 0 or cols_e[0] >= dst_grid.n_cols):
        raise ValueError("source raster does not overlap the destination grid")
    out_nodata = CATEGORICAL_NODATA if kind == "categorical" else CONTINUOUS_NODATA
    sr, dr, wr = _axis_overlaps(rows_e, dst_grid.n_rows)
    sc, dc, wc = _axis_overlaps(cols_e, dst_grid.n_cols)
    out = np.full(dst_grid.shape, out_nodata, dtype=float)

    s_r = np.repeat(sr, len(sc)); s_c = np.tile(sc, len(sr))
    d_idx = np.repeat(dr, len(dc)) * dst_grid.n_cols + np.tile(dc, len(dr))
    w = np.repeat(wr, len(wc)) * np.tile(wc, len(wr))
    v = values[s_r, s_c].astype(float)
    valid = v != nodata
    if np.issubdtype(v.dtype, np.floating):
        valid &= np.isfinite(v)
    d_idx, w, v = d_idx[valid], w[valid], v[valid]
    flat = out.reshape(-1)

    if mode == "mean":
        size = dst_grid.n_rows * dst_grid.n_cols
        wsum = np.bincount(d_idx, weights=w, minlength=size)
        vsum = np.bincount(d_idx, weights=w * v, minlength=size)
        has = wsum > 0
        mean = vsum[has] / wsum[has]
        # keep the result inside the contributing range despite rounding
        lo = np.full(size, np.inf); np.minimum.at(lo, d_idx, v)
        hi = np.full(size, -np.inf); np.maximum.at(hi, d_idx, v)
        flat[has] = np.clip(mean, lo[has], hi[has])
    elif mode == "dominant":
        if len(d_idx):
            order = np.lexsort((v, d_idx))
            d_s, v_s, w_s = d_idx[order], v[order], w[order]
            start = np.ones(len(d_s), dtype=bool)
            start[1:] = (d_s[1:] != d_s[:-1]) | (v_s[1:] != v_s[:-1])
            gi = np.flatnonzero(start)
            g_d, g_v = d_s[gi], v_s[gi]
            g_w = np.round(np.add.reduceat(w_s, gi), 9)
            pick = np.lexsort((g_v, -g_w, g_d))
            g_d, g_v = g_d[pick], g_v[pick]
            first = np.ones(len(g_d), dtype=bool)
            first[1:] = g_d[1:] != g_d[:-1]
            flat[g_d[first]] = g_v[first]
    else:
        raise ValueError(f"unknown aggregation mode {mode!r}")
    return RasterLayer(dst_grid, out, kind, out_nodata)


def aggregate_raster(src: RasterLayer, dst_grid: GridSpec,
                     mode: Literal["dominant", "mean"]) -> RasterLayer:
    return resample(src.values, src.grid.lat_edges(), src.grid.lon_edges(), src.nodata,
                    dst_grid, mode, src.kind)


# --------------------------------------------------------------------------
# polylines

@dataclass(frozen=True)
class Polyline:
    vertices: tuple[tuple[float, float], ...]
    edge_id: Hashable = None

    def __post_init__(self):
        verts = tuple((float(a), float(b)) for a, b in self.vertices)
        if len(verts) < 2:
            raise ValueError("a polyline needs at least two vertices")
        object.__setattr__(self, "vertices", verts)


def _clip_segment(p0, p1, n_rows, n_cols):
    """Liang-Barsky clip of a (row, col) segment to the lattice rectangle."""
    t0, t1 = 0.0, 1.0
    d = (p1[0] - p0[0], p1[1] - p0[1])
    for axis, hi in ((0, n_rows), (1, n_cols)):
        for p, q in ((-d[axis], p0[axis]), (d[axis], hi - p0[axis])):
            if p == 0:
                if q < 0:
                    return None
            else:
                t = q / p
                if p < 0:
                    t0 = max(t0, t)
                else:
                    t1 = min(t1, t)
    if t0 > t1:
        return None
    return ((p0[0] + t0 * d[0], p0[1] + t0 * d[1]), (p0[0] + t1 * d[0], p0[1] + t1 * d[1]))


def traverse_cells_2d(p0, p1, n_rows: int, n_cols: int) -> list[tuple[int, int]]:
    """Cells pierced by a segment in fractional (row, col) coordinates, in order.

    Incremental grid stepping; a point on a cell boundary belongs to the cell
    on the positive side.
    """
    clipped = _clip_segment(p0, p1, n_rows, n_cols)
    if clipped is None:
        return []
    (r, c), (r1, c1) = clipped
    dr, dc = r1 - r, c1 - c
    i = min(int(math.floor(r)), n_rows - 1)
    j = min(int(math.floor(c)), n_cols - 1)
    cells = [(i, j)]
    steps = []
    for pos, d, cell in ((r, dr, i), (c, dc, j)):
        if d > 0:
            steps.append((1, (cell + 1 - pos) / d, 1 / d))
        elif d < 0:
            steps.append((-1, (cell - pos) / d, -1 / d))
        else:
            steps.append((0, math.inf, math.inf))
    (si, ti, di), (sj, tj, dj) = steps
    while True:
        if ti < tj:
            if ti >= 1.0:
                break
            i += si; ti += di
        else:
            if tj >= 1.0:
                break
            j += sj; tj += dj
        if not (0 <= i < n_rows and 0 <= j < n_cols):
            break
        cells.append((i, j))
    return cells


def aggregate_along_edges(result: RasterLayer, edges: Iterable[Polyline],
                          stat: Literal["mean", "max", "min"] = "mean"):
    """Summarize ``result`` over the cells each polyline passes through.

    Returns ``[(edge_id, value), ...]`` in input order; ``value`` is None when
    the edge misses the raster or only crosses nodata cells.
    """
    reducers = {"mean": np.mean, "max": np.max, "min": np.min}
    if stat not in reducers:
        raise ValueError(f"unknown statistic {stat!r}")
    grid = result.grid
    mask = result.mask
    out = []
    for n, edge in enumerate(edges):
        verts = np.asarray(edge.vertices)
        rows, cols = grid.to_rowcol(verts[:, 0], verts[:, 1])
        seen: dict[tuple[int, int], None] = {}
        for k in range(len(verts) - 1):
            for cell in traverse_cells_2d((rows[k], cols[k]), (rows[k + 1], cols[k + 1]),
                                          grid.n_rows, grid.n_cols):
                seen[cell] = None
        eid = edge.edge_id if edge.edge_id is not None else n
        vals = [result.values[cell] for cell in seen if mask[cell]]
        if not seen:
            log.warning("edge %s lies outside the raster extent", eid)
        if not vals:
            out.append((eid, None))
        else:
            out.append((eid, float(reducers[stat](vals))))
    return out
