"""Extrusion of 2D layers into a semantic voxel grid.

Voxels are indexed ``voxels[row, col, z]`` with row 0 north and z = 0 the
lowest layer. Terrain columns are filled from z = 0 and capped with a
land-cover surface voxel; buildings and trees are stacked in the levels above
that surface voxel.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np
from scipy import ndimage

from .geogrid import GridSpec, RasterLayer, dominant_polygon_index, polygon_in_grid
from .ingest import BuildingFootprint, TreeOpticalParams
from .landcover import HarmonizedClass

log = logging.getLogger(__name__)


class VoxelClass(enum.IntEnum):
    VOID = 0
    BARELAND = 1
    RANGELAND = 2
    SHRUB = 3
    AGRICULTURE_LAND = 4
    TREE_COVER = 5
    MOSS_AND_LICHEN = 6
    WETLAND = 7
    MANGROVE = 8
    WATER = 9
    SNOW_AND_ICE = 10
    DEVELOPED_SPACE = 11
    ROAD = 12
    BUILDING_LAND = 13
    NO_DATA = 14
    BUILDING = 20
    TREE = 21
    LANDMARK = 22
    TERRAIN = 30


SURFACE_CODES = tuple(range(1, 15))
assert [int(c) for c in HarmonizedClass] == list(SURFACE_CODES)

# integration precedence: higher wins
_RANK = np.zeros(256, dtype=np.int8)
_RANK[list(SURFACE_CODES)] = 2
_RANK[VoxelClass.TERRAIN] = 1
_RANK[VoxelClass.TREE] = 3
_RANK[VoxelClass.BUILDING] = 4
_RANK[VoxelClass.LANDMARK] = 5

HEADROOM_LAYERS = 2


@dataclass(frozen=True)
class VoxelGrid:
    grid: GridSpec
    voxels: np.ndarray
    base_elevation_m: float = 0.0

    def __post_init__(self):
        v = np.ascontiguousarray(self.voxels, dtype=np.uint8)
        if v.ndim != 3 or v.shape[:2] != self.grid.shape or v.shape[2] < 1:
            raise ValueError(f"voxel array shape {v.shape} inconsistent with grid {self.grid.shape}")
        v.flags.writeable = False
        object.__setattr__(self, "voxels", v)

    @property
    def voxel_size_m(self) -> float:
        return self.grid.voxel_size_m

    @property
    def n_z(self) -> int:
        return self.voxels.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.voxels.shape

    def counts(self) -> dict[VoxelClass, int]:
        codes, n = np.unique(self.voxels, return_counts=True)
        return {VoxelClass(int(c)): int(k) for c, k in zip(codes, n)}

    def surface_index(self) -> np.ndarray:
        """z of the topmost land-cover surface voxel per column (-1 if none)."""
        return _top_index(np.isin(self.voxels, SURFACE_CODES))

    def with_voxels(self, voxels: np.ndarray) -> "VoxelGrid":
        return VoxelGrid(self.grid, voxels, self.base_elevation_m)


def _top_index(mask: np.ndarray) -> np.ndarray:
    n_z = mask.shape[2]
    top = n_z - 1 - np.argmax(mask[:, :, ::-1], axis=2)
    return np.where(mask.any(axis=2), top, -1)


def _fill_nodata(layer: RasterLayer) -> np.ndarray:
    values = np.array(layer.values, dtype=float)
    mask = layer.mask
    if not mask.any():
        raise ValueError("elevation layer has no data")
    if not mask.all():
        log.warning("%d nodata elevation cells filled from nearest neighbours",
                    int((~mask).sum()))
        _, (ri, ci) = ndimage.distance_transform_edt(~mask, return_indices=True)
        values = values[ri, ci]
    return values


def layers_for_height(height_m: float, voxel_size_m: float) -> int:
    return int(math.floor(height_m / voxel_size_m + 0.5)) if height_m > 0 else 0


def structure_span(bottom_m: float, top_m: float, voxel_size_m: float) -> tuple[int, int]:
    """Levels above the surface voxel (1-based, inclusive) filled by a structure.

    Tops are rounded to the nearest level and bottoms rounded up, so a 50 m
    building on 5 m voxels spans levels 1..10.
    """
    lo = math.ceil(bottom_m / voxel_size_m - 1e-9) + 1 if bottom_m > 0 else 1
    return lo, layers_for_height(top_m, voxel_size_m)


def extrude_terrain(dem: RasterLayer, land_cover: RasterLayer, grid: GridSpec,
                    structure_top_m: float = 0.0) -> VoxelGrid:
    """Terrain columns from an elevation layer, capped with land-cover codes.

    Column height is ``floor(relative_elevation / voxel) + 1`` voxels where
    elevation is taken relative to the lowest cell. The grid is tall enough
    for the highest column plus ``structure_top_m`` plus two headroom layers.
    """
    if dem.grid.shape != grid.shape or land_cover.grid.shape != grid.shape:
        raise ValueError("layers are not aligned to the grid")
    if land_cover.kind != "categorical":
        raise ValueError("land cover must be a categorical layer")
    elev = _fill_nodata(dem)
    base = float(elev.min())
    rel = elev - base
    v = grid.voxel_size_m
    n_terrain = np.floor(rel / v + 1e-9).astype(np.int64) + 1
    n_z = int(n_terrain.max()) + math.ceil(max(structure_top_m, 0.0) / v - 1e-9) + HEADROOM_LAYERS
    z = np.arange(n_z)
    vox = np.where(z[None, None, :] < n_terrain[:, :, None], VoxelClass.TERRAIN, VoxelClass.VOID)
    lc = np.where(land_cover.mask, land_cover.values, int(HarmonizedClass.NO_DATA))
    r, c = np.indices(grid.shape)
    vox[r, c, n_terrain - 1] = lc
    return VoxelGrid(grid, vox.astype(np.uint8), base)


def _ensure_layers(vg: VoxelGrid, top_level: int) -> np.ndarray:
    vox = np.array(vg.voxels)
    needed = top_level + 1 + HEADROOM_LAYERS
    if needed > vg.n_z:
        pad = np.zeros(vox.shape[:2] + (needed - vg.n_z,), dtype=np.uint8)
        vox = np.concatenate([vox, pad], axis=2)
    return vox


def _stack(vg: VoxelGrid, lo: np.ndarray, hi: np.ndarray, code: int,
           protect: Sequence[int]) -> VoxelGrid:
    """Fill levels [lo, hi] above each column's surface voxel with ``code``."""
    surface = vg.surface_index()
    z_lo = surface + lo
    z_hi = surface + hi
    active = (hi >= lo) & (surface >= 0)
    if not active.any():
        return vg
    vox = _ensure_layers(vg, int(z_hi[active].max()))
    z = np.arange(vox.shape[2])[None, None, :]
    fill = active[:, :, None] & (z >= z_lo[:, :, None]) & (z <= z_hi[:, :, None])
    fill &= ~np.isin(vox, protect)
    vox[fill] = code
    return vg.with_voxels(vox)


def _spans(bottom: np.ndarray, top: np.ndarray, v: float):
    lo = np.where(bottom > 0, np.ceil(bottom / v - 1e-9).astype(np.int64) + 1, 1)
    hi = np.where(top > 0, np.floor(top / v + 0.5).astype(np.int64), 0)
    return lo, hi


def place_buildings(vg: VoxelGrid, height_top: RasterLayer,
                    height_bottom: RasterLayer | None = None) -> VoxelGrid:
    """Stack Building voxels between each cell's bottom and top heights.

    Heights are metres above the terrain surface. A positive bottom leaves
    Void between the surface voxel and the building.
    """
    v = vg.voxel_size_m
    top = np.where(height_top.mask, height_top.values, 0.0)
    if height_bottom is None:
        bottom = np.zeros_like(top)
    else:
        bottom = np.where(height_bottom.mask, height_bottom.values, 0.0)
    bad = (top > 0) & (top < bottom)
    if bad.any():
        log.warning("%d cells skipped: building top below bottom", int(bad.sum()))
        top = np.where(bad, 0.0, top)
    lo, hi = _spans(np.maximum(bottom, 0.0), top, v)
    return _stack(vg, lo, hi, VoxelClass.BUILDING, protect=(VoxelClass.LANDMARK,))


def place_trees(vg: VoxelGrid, canopy_height: RasterLayer,
                params: TreeOpticalParams = TreeOpticalParams()) -> VoxelGrid:
    """Stack Tree voxels from ``h * trunk_height_ratio`` up to canopy height ``h``.

    Existing Building voxels are left in place.
    """
    v = vg.voxel_size_m
    h = np.where(canopy_height.mask, canopy_height.values, 0.0)
    neg = h < 0
    if neg.any():
        log.warning("%d negative canopy heights treated as 0", int(neg.sum()))
        h = np.where(neg, 0.0, h)
    lo, hi = _spans(h * params.trunk_height_ratio, h, v)
    return _stack(vg, lo, hi, VoxelClass.TREE,
                  protect=(VoxelClass.BUILDING, VoxelClass.LANDMARK))


def integrate(terrain_lc: VoxelGrid, *others: VoxelGrid) -> VoxelGrid:
    """Merge voxel grids per voxel with Building > Tree > surface > terrain > Void."""
    grids = (terrain_lc,) + others
    for g in others:
        if g.shape != terrain_lc.shape or g.grid != terrain_lc.grid:
            raise ValueError(f"cannot integrate grids of shapes {terrain_lc.shape} and {g.shape}")
    out = np.array(terrain_lc.voxels)
    for g in others:
        take = _RANK[g.voxels] > _RANK[out]
        out[take] = g.voxels[take]
    return terrain_lc.with_voxels(out)


def pad_to(vg: VoxelGrid, n_z: int) -> VoxelGrid:
    if n_z < vg.n_z:
        raise ValueError("cannot shrink a voxel grid")
    if n_z == vg.n_z:
        return vg
    pad = np.zeros(vg.shape[:2] + (n_z - vg.n_z,), dtype=np.uint8)
    return vg.with_voxels(np.concatenate([vg.voxels, pad], axis=2))


def footprint_columns(footprints: Sequence[BuildingFootprint], grid: GridSpec,
                      supersample: int = 4) -> np.ndarray:
    """Per-cell index into ``footprints`` of the dominant footprint, or -1."""
    polys = [polygon_in_grid(fp.rings, grid) for fp in footprints]
    return dominant_polygon_index(polys, grid, supersample=supersample)


def mark_landmarks(vg: VoxelGrid, footprint_ids: Sequence[Hashable],
                   footprints: Sequence[BuildingFootprint], supersample: int = 4) -> VoxelGrid:
    """Recode the Building voxels under the named footprints as LANDMARK."""
    ids = list(footprint_ids)
    if not ids:
        return vg
    known = {str(fp.feature_id) for fp in footprints}
    missing = [i for i in ids if str(i) not in known]
    if missing:
        raise KeyError(f"unknown footprint ids: {', '.join(map(str, missing))}")
    wanted = {str(i) for i in ids}
    columns = footprint_columns([fp for fp in footprints if fp.height_top is not None],
                                vg.grid, supersample)
    placed = [fp for fp in footprints if fp.height_top is not None]
    sel = np.zeros(vg.grid.shape, dtype=bool)
    for k, fp in enumerate(placed):
        if str(fp.feature_id) in wanted:
            sel |= columns == k
    vox = np.array(vg.voxels)
    recode = sel[:, :, None] & (vox == VoxelClass.BUILDING)
    n = int(recode.sum())
    if n == 0:
        log.warning("no building voxels found for landmark ids %s", ids)
    vox[recode] = VoxelClass.LANDMARK
    return vg.with_voxels(vox)
