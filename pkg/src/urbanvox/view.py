"""View indices (green/sky/any class) and landmark visibility from street level."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .geogrid import CONTINUOUS_NODATA, RasterLayer
from .raycast import any_visible, count_first_hits, opaque_table, walkable_observers
from .solar import sky_vector
from .voxelizer import VoxelClass, VoxelGrid

SKY = -1

GREEN_CLASSES = frozenset({VoxelClass.TREE, VoxelClass.RANGELAND, VoxelClass.SHRUB,
                           VoxelClass.AGRICULTURE_LAND, VoxelClass.MOSS_AND_LICHEN})

MAX_LANDMARK_TARGETS = 512


@dataclass(frozen=True)
class ViewConfig:
    """Ray fan spanning 360 degrees of azimuth and [v_min, v_max] of elevation.

    Target classes are voxel codes; ``SKY`` (-1) counts rays that leave the
    domain. Trees are opaque for every view analysis.
    """

    target_classes: frozenset = GREEN_CLASSES
    v_min: float = -30.0
    v_max: float = 30.0
    angular_step: float = 6.0
    eye_height_m: float = 1.5

    def __post_init__(self):
        object.__setattr__(self, "target_classes", frozenset(int(c) for c in self.target_classes))
        if not -90 <= self.v_min < self.v_max <= 90:
            raise ValueError("need -90 <= v_min < v_max <= 90")
        if self.angular_step <= 0:
            raise ValueError("angular step must be positive")
        for span, name in ((360.0, "360"), (self.v_max - self.v_min, "v_max - v_min")):
            q = span / self.angular_step
            if abs(q - round(q)) > 1e-9:
                raise ValueError(f"{name} must be a multiple of the angular step")
        if self.eye_height_m < 0:
            raise ValueError("eye height must be non-negative")

    @property
    def n_azimuth(self) -> int:
        return round(360.0 / self.angular_step)

    @property
    def n_elevation(self) -> int:
        return round((self.v_max - self.v_min) / self.angular_step)

    @property
    def ray_count(self) -> int:
        return self.n_azimuth * self.n_elevation

    def directions(self) -> np.ndarray:
        """Unit ray directions; azimuth from north, elevations at band centres."""
        az = np.arange(self.n_azimuth) * self.angular_step
        el = self.v_min + (np.arange(self.n_elevation) + 0.5) * self.angular_step
        A, E = np.meshgrid(az, el, indexing="ij")
        return np.ascontiguousarray(sky_vector(A.ravel(), E.ravel()))


def gvi_config(**kw) -> ViewConfig:
    return ViewConfig(GREEN_CLASSES, -30.0, 30.0, 6.0, **kw)


def svi_config(**kw) -> ViewConfig:
    return ViewConfig(frozenset({SKY}), 0.0, 30.0, 6.0, **kw)


def _target_table(classes: Iterable[int]) -> np.ndarray:
    lut = np.zeros(257, dtype=np.uint8)
    for c in classes:
        lut[int(c) + 1] = 1
    return lut


def view_counts(vg: VoxelGrid, cfg: ViewConfig):
    """(walkable mask, per-observer target-hit counts, rays per observer)."""
    if not cfg.target_classes:
        raise ValueError("target class set is empty")
    mask, origins = walkable_observers(vg, cfg.eye_height_m)
    counts = count_first_hits(vg.voxels, origins, cfg.directions(),
                              _target_table(cfg.target_classes), opaque_table(True))
    return mask, counts, cfg.ray_count


def view_index(vg: VoxelGrid, cfg: ViewConfig) -> RasterLayer:
    """Fraction of the ray fan whose first hit is a target class, per walkable cell."""
    mask, counts, n = view_counts(vg, cfg)
    out = np.full(vg.grid.shape, CONTINUOUS_NODATA)
    out[mask] = counts / n
    return RasterLayer(vg.grid, out)


def exposed_voxels(vg: VoxelGrid, code: int) -> np.ndarray:
    """Indices (row-major) of ``code`` voxels with at least one Void face neighbour."""
    vox = vg.voxels
    void = vox == VoxelClass.VOID
    nb = np.zeros(vox.shape, dtype=bool)
    nb[1:] |= void[:-1]; nb[:-1] |= void[1:]
    nb[:, 1:] |= void[:, :-1]; nb[:, :-1] |= void[:, 1:]
    nb[:, :, 1:] |= void[:, :, :-1]; nb[:, :, :-1] |= void[:, :, 1:]
    return np.argwhere((vox == code) & nb)


def landmark_visibility(vg: VoxelGrid, cfg: ViewConfig | None = None,
                        max_targets: int = MAX_LANDMARK_TARGETS) -> RasterLayer:
    """1 where an unobstructed sight line reaches a landmark voxel, else 0.

    Sight lines run from the observer's eye to the centres of exposed
    landmark voxels, uniformly subsampled to at most ``max_targets``.
    """
    eye = cfg.eye_height_m if cfg is not None else 1.5
    if not np.any(vg.voxels == VoxelClass.LANDMARK):
        raise ValueError("the model contains no landmark voxels")
    targets = exposed_voxels(vg, VoxelClass.LANDMARK)
    mask, origins = walkable_observers(vg, eye)
    out = np.full(vg.grid.shape, CONTINUOUS_NODATA)
    if len(targets) == 0:
        # fully enclosed: nothing can be seen from anywhere
        out[mask] = 0.0
        return RasterLayer(vg.grid, out)
    if len(targets) > max_targets:
        pick = np.unique(np.round(np.linspace(0, len(targets) - 1, max_targets)).astype(int))
        targets = targets[pick]
    vis = any_visible(vg.voxels, origins, np.ascontiguousarray(targets + 0.5),
                      int(VoxelClass.LANDMARK), opaque_table(True))
    out[mask] = vis
    return RasterLayer(vg.grid, out)
