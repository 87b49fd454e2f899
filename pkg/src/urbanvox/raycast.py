"""Incremental voxel traversal shared by the solar and view simulations.

Rays march voxel by voxel (Amanatides & Woo stepping), so the cost of a ray
is proportional to the number of voxels it crosses. All kernels work in voxel
units on the raw ``uint8`` array; the public wrappers convert to metres.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from numba import njit, prange

from .ingest import TreeOpticalParams
from .voxelizer import SURFACE_CODES, VoxelClass, VoxelGrid

ESCAPED = -1
NUDGE = 1e-6
CORNER_EPS = 1e-9

TREE_CODE = int(VoxelClass.TREE)


def opaque_table(tree_opaque: bool) -> np.ndarray:
    lut = np.zeros(256, dtype=np.uint8)
    lut[list(SURFACE_CODES)] = 1
    for c in (VoxelClass.BUILDING, VoxelClass.LANDMARK, VoxelClass.TERRAIN):
        lut[c] = 1
    lut[VoxelClass.TREE] = 1 if tree_opaque else 0
    return lut


@njit(cache=True, nogil=True)
def _trace(vox, ox, oy, oz, dx, dy, dz, opaque, transmissive):
    """Return (hit code or -1, distance to hit or exit, tree path length), voxel units."""
    nx, ny, nz = vox.shape
    # enter the box if the origin sits on or outside a face
    t0 = 0.0
    t1 = np.inf
    for o, d, n in ((ox, dx, nx), (oy, dy, ny), (oz, dz, nz)):
        if d == 0.0:
            if o < 0.0 or o > n:
                return -1, 0.0, 0.0
        else:
            a = (0.0 - o) / d
            b = (n - o) / d
            if a > b:
                a, b = b, a
            if a > t0:
                t0 = a
            if b < t1:
                t1 = b
    if t0 >= t1:
        return -1, 0.0, 0.0
    px = ox + t0 * dx
    py = oy + t0 * dy
    pz = oz + t0 * dz
    i = min(max(int(math.floor(px)), 0), nx - 1)
    j = min(max(int(math.floor(py)), 0), ny - 1)
    k = min(max(int(math.floor(pz)), 0), nz - 1)

    if dx > 0:
        si, tmx, tdx = 1, t0 + (i + 1 - px) / dx, 1.0 / dx
    elif dx < 0:
        si, tmx, tdx = -1, t0 + (i - px) / dx, -1.0 / dx
    else:
        si, tmx, tdx = 0, np.inf, np.inf
    if dy > 0:
        sj, tmy, tdy = 1, t0 + (j + 1 - py) / dy, 1.0 / dy
    elif dy < 0:
        sj, tmy, tdy = -1, t0 + (j - py) / dy, -1.0 / dy
    else:
        sj, tmy, tdy = 0, np.inf, np.inf
    if dz > 0:
        sk, tmz, tdz = 1, t0 + (k + 1 - pz) / dz, 1.0 / dz
    elif dz < 0:
        sk, tmz, tdz = -1, t0 + (k - pz) / dz, -1.0 / dz
    else:
        sk, tmz, tdz = 0, np.inf, np.inf

    t = t0
    tree = 0.0
    while True:
        c = vox[i, j, k]
        if opaque[c]:
            return np.int64(c), t, tree
        t_next = min(tmx, tmy, tmz)
        if transmissive and c == TREE_CODE:
            tree += t_next - t
        t = t_next
        # a ray through an edge or corner steps every tied axis at once, so
        # the cells it only touches are skipped whichever way it travels
        tie = CORNER_EPS * max(1.0, t_next)
        if tmx - t_next <= tie:
            i += si
            tmx += tdx
            if i < 0 or i >= nx:
                return -1, t, tree
        if tmy - t_next <= tie:
            j += sj
            tmy += tdy
            if j < 0 or j >= ny:
                return -1, t, tree
        if tmz - t_next <= tie:
            k += sk
            tmz += tdz
            if k < 0 or k >= nz:
                return -1, t, tree


@njit(cache=True, parallel=True)
def trace_many(vox, origins, dirs, opaque, transmissive):
    """Trace ray i from origins[i] along dirs[i] (voxel units, nudged by the caller)."""
    n = origins.shape[0]
    codes = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    tree = np.empty(n)
    for r in prange(n):
        c, t, l = _trace(vox, origins[r, 0], origins[r, 1], origins[r, 2],
                         dirs[r, 0], dirs[r, 1], dirs[r, 2], opaque, transmissive)
        codes[r] = c
        dist[r] = t
        tree[r] = l
    return codes, dist, tree


@dataclass(frozen=True)
class Ray:
    origin: tuple[float, float, float]
    direction: tuple[float, float, float]

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        norm = float(np.linalg.norm(d))
        if norm == 0 or not math.isfinite(norm):
            raise ValueError("ray direction must be a non-zero finite vector")
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"ray direction must be a unit vector (|d| = {norm})")


@dataclass(frozen=True)
class TraversalResult:
    hit_class: VoxelClass | None
    distance_m: float
    tree_path_length_m: float

    @property
    def escaped(self) -> bool:
        return self.hit_class is None


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise ValueError("zero direction vector")
    return v / n


def traverse(vg: VoxelGrid, ray: Ray,
             tree_mode: Literal["opaque", "transmissive"] = "opaque") -> TraversalResult:
    """Cast one ray; origin in metres in (row, col, z) voxel-space axes.

    Axis 0 points south, axis 1 east and axis 2 up. The origin is nudged a
    millionth of a voxel along the ray before marching.
    """
    if tree_mode not in ("opaque", "transmissive"):
        raise ValueError(f"unknown tree mode {tree_mode!r}")
    v = vg.voxel_size_m
    d = np.asarray(ray.direction, dtype=float)
    o = np.asarray(ray.origin, dtype=float) / v + d * NUDGE
    c, t, l = _trace(vg.voxels, o[0], o[1], o[2], d[0], d[1], d[2],
                     opaque_table(tree_mode == "opaque"), tree_mode == "transmissive")
    hit = None if c < 0 else VoxelClass(int(c))
    return TraversalResult(hit, (t + NUDGE) * v, l * v)


def transmittance(path_length_m, params: TreeOpticalParams = TreeOpticalParams()):
    """Beer-Lambert canopy transmittance ``exp(-K * LAD * l)``."""
    l = np.asarray(path_length_m, dtype=float)
    if np.any(l < 0):
        raise ValueError("path length must be non-negative")
    tau = np.exp(-params.extinction_coefficient * params.leaf_area_density * l)
    return float(tau) if tau.ndim == 0 else tau


# --------------------------------------------------------------------------
# batched kernels; origins and directions in voxel units, origins un-nudged

@njit(cache=True, parallel=True)
def sky_exposure(vox, origins, dirs, weights, opaque, attenuation):
    """Per origin, sum of weights over rays that escape, scaled by canopy transmittance.

    ``attenuation`` is K * LAD * voxel_size; zero disables canopy attenuation.
    """
    n = origins.shape[0]
    out = np.zeros(n)
    transmissive = opaque[TREE_CODE] == 0
    for p in prange(n):
        acc = 0.0
        for r in range(dirs.shape[0]):
            dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
            c, t, l = _trace(vox, origins[p, 0] + dx * NUDGE, origins[p, 1] + dy * NUDGE,
                             origins[p, 2] + dz * NUDGE, dx, dy, dz, opaque, transmissive)
            if c < 0:
                acc += weights[r] * math.exp(-attenuation * l)
        out[p] = acc
    return out


@njit(cache=True, parallel=True)
def sun_exposure(vox, origins, d, opaque, attenuation):
    """Per origin, canopy transmittance along direction ``d`` (0 when blocked)."""
    n = origins.shape[0]
    out = np.zeros(n)
    transmissive = opaque[TREE_CODE] == 0
    for p in prange(n):
        c, t, l = _trace(vox, origins[p, 0] + d[0] * NUDGE, origins[p, 1] + d[1] * NUDGE,
                         origins[p, 2] + d[2] * NUDGE, d[0], d[1], d[2], opaque, transmissive)
        if c < 0:
            out[p] = math.exp(-attenuation * l)
    return out


@njit(cache=True, parallel=True)
def count_first_hits(vox, origins, dirs, target, opaque):
    """Per origin, number of rays whose first hit is a target.

    ``target[code + 1]`` flags target classes; ``target[0]`` flags escape (sky).
    """
    n = origins.shape[0]
    out = np.zeros(n, dtype=np.int64)
    for p in prange(n):
        k = 0
        for r in range(dirs.shape[0]):
            dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
            c, t, l = _trace(vox, origins[p, 0] + dx * NUDGE, origins[p, 1] + dy * NUDGE,
                             origins[p, 2] + dz * NUDGE, dx, dy, dz, opaque, False)
            if target[c + 1]:
                k += 1
        out[p] = k
    return out


@njit(cache=True, parallel=True)
def any_visible(vox, origins, targets, goal, opaque):
    """1 where some ray from the origin toward a target point first hits class ``goal``."""
    n = origins.shape[0]
    out = np.zeros(n, dtype=np.uint8)
    for p in prange(n):
        for q in range(targets.shape[0]):
            dx = targets[q, 0] - origins[p, 0]
            dy = targets[q, 1] - origins[p, 1]
            dz = targets[q, 2] - origins[p, 2]
            norm = math.sqrt(dx * dx + dy * dy + dz * dz)
            if norm == 0.0:
                continue
            dx /= norm
            dy /= norm
            dz /= norm
            c, t, l = _trace(vox, origins[p, 0] + dx * NUDGE, origins[p, 1] + dy * NUDGE,
                             origins[p, 2] + dz * NUDGE, dx, dy, dz, opaque, False)
            if c == goal:
                out[p] = 1
                break
    return out


def walkable_observers(vg: VoxelGrid, eye_height_m: float):
    """Ground observer cells and their eye positions in voxel units.

    A cell is walkable when its land-cover surface voxel has Void directly
    above it. Returns (mask, origins[N, 3]) with origins in row-major order.
    """
    surface = vg.surface_index()
    r, c = np.indices(surface.shape)
    above = np.clip(surface + 1, 0, vg.n_z - 1)
    mask = (surface >= 0) & (surface + 1 < vg.n_z) & (vg.voxels[r, c, above] == VoxelClass.VOID)
    rr, cc = np.nonzero(mask)
    zz = surface[rr, cc] + 1 + eye_height_m / vg.voxel_size_m
    origins = np.column_stack([rr + 0.5, cc + 0.5, zz]).astype(float)
    return mask, np.ascontiguousarray(origins)
