"""Sun position and ray-traced solar irradiance on the ground and on building faces.

Direct irradiance is DNI projected onto the receiving surface and attenuated
by the canopy along the sun ray; diffuse irradiance is DHI times the
cosine-weighted fraction of an isotropic sky that the receiver sees, with
tree voxels transmitting ``exp(-K * LAD * l)`` of each sky ray.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Literal, Sequence

import numpy as np

from .geogrid import CONTINUOUS_NODATA, RasterLayer
from .ingest import TreeOpticalParams, WeatherSeries
from .raycast import opaque_table, sky_exposure, sun_exposure, walkable_observers
from .voxelizer import VoxelClass, VoxelGrid

TREGENZA_BANDS = ((0.0, 12.0, 30), (12.0, 24.0, 30), (24.0, 36.0, 24), (36.0, 48.0, 24),
                  (48.0, 60.0, 18), (60.0, 72.0, 12), (72.0, 84.0, 6), (84.0, 90.0, 1))


@dataclass(frozen=True)
class SunPosition:
    azimuth: float
    elevation: float

    def direction(self) -> np.ndarray:
        """Unit vector toward the sun in (south, east, up) voxel axes."""
        return sky_vector(self.azimuth, self.elevation)


def sky_vector(azimuth_deg, elevation_deg) -> np.ndarray:
    az = np.radians(azimuth_deg)
    el = np.radians(elevation_deg)
    return np.stack([-np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1)


@dataclass(frozen=True)
class ObserverConfig:
    eye_height_m: float = 1.5
    diffuse_ray_count: int = 145
    period: tuple[datetime | None, datetime | None] = (None, None)

    def __post_init__(self):
        if self.eye_height_m < 0:
            raise ValueError("eye height must be non-negative")
        if self.diffuse_ray_count < 1:
            raise ValueError("diffuse ray count must be >= 1")


# --------------------------------------------------------------------------
# sun position (NOAA solar calculator equations)

def _julian_day(t: datetime) -> float:
    if t.tzinfo is not None:
        t = t.astimezone(timezone.utc).replace(tzinfo=None)
    return (t - datetime(2000, 1, 1, 12)).total_seconds() / 86400.0 + 2451545.0


def _refraction(elev: float) -> float:
    if elev > 85.0:
        return 0.0
    te = math.tan(math.radians(elev))
    if elev > 5.0:
        arcsec = 58.1 / te - 0.07 / te ** 3 + 0.000086 / te ** 5
    elif elev > -0.575:
        arcsec = 1735.0 + elev * (-518.2 + elev * (103.4 + elev * (-12.79 + elev * 0.711)))
    else:
        arcsec = -20.772 / te
    return arcsec / 3600.0


def sun_position(lat: float, lon: float, t: datetime, refraction: bool = True) -> SunPosition:
    """Apparent solar azimuth (clockwise from north) and elevation.

    ``t`` is UTC; naive datetimes are taken as UTC.
    """
    if abs(lat) > 90:
        raise ValueError("latitude outside [-90, 90]")
    jd = _julian_day(t)
    T = (jd - 2451545.0) / 36525.0
    L0 = (280.46646 + T * (36000.76983 + T * 0.0003032)) % 360.0
    M = 357.52911 + T * (35999.05029 - 0.0001537 * T)
    e = 0.016708634 - T * (0.000042037 + 0.0000001267 * T)
    Mr = math.radians(M)
    C = (math.sin(Mr) * (1.914602 - T * (0.004817 + 0.000014 * T))
         + math.sin(2 * Mr) * (0.019993 - 0.000101 * T)
         + math.sin(3 * Mr) * 0.000289)
    omega = math.radians(125.04 - 1934.136 * T)
    app_long = math.radians(L0 + C - 0.00569 - 0.00478 * math.sin(omega))
    eps0 = 23.0 + (26.0 + (21.448 - T * (46.815 + T * (0.00059 - T * 0.001813))) / 60.0) / 60.0
    eps = math.radians(eps0 + 0.00256 * math.cos(omega))
    decl = math.asin(math.sin(eps) * math.sin(app_long))

    y = math.tan(eps / 2) ** 2
    L0r = math.radians(L0)
    eot = 4.0 * math.degrees(
        y * math.sin(2 * L0r) - 2 * e * math.sin(Mr) + 4 * e * y * math.sin(Mr) * math.cos(2 * L0r)
        - 0.5 * y * y * math.sin(4 * L0r) - 1.25 * e * e * math.sin(2 * Mr))
    minutes = ((jd + 0.5) % 1.0) * 1440.0
    tst = (minutes + eot + 4.0 * lon) % 1440.0
    ha = math.radians(tst / 4.0 - 180.0)

    latr = math.radians(lat)
    cos_zen = math.sin(latr) * math.sin(decl) + math.cos(latr) * math.cos(decl) * math.cos(ha)
    elev = 90.0 - math.degrees(math.acos(max(-1.0, min(1.0, cos_zen))))
    az = (math.degrees(math.atan2(math.sin(ha), math.cos(ha) * math.sin(latr)
                                  - math.tan(decl) * math.cos(latr))) + 180.0) % 360.0
    if refraction:
        elev = min(90.0, elev + _refraction(elev))
    return SunPosition(az, elev)


# --------------------------------------------------------------------------
# sky sampling

def _band_layout(count: int):
    if count == 145:
        return TREGENZA_BANDS
    n_bands = max(1, min(count, round(math.sqrt(count / 2.0))))
    edges = np.linspace(0.0, 90.0, n_bands + 1)
    share = np.cos(np.radians(0.5 * (edges[:-1] + edges[1:])))
    raw = share / share.sum() * count
    k = np.maximum(np.floor(raw).astype(int), 1)
    while k.sum() > count:
        k[np.argmax(k)] -= 1
    order = np.argsort(-(raw - np.floor(raw)))
    i = 0
    while k.sum() < count:
        k[order[i % n_bands]] += 1
        i += 1
    return tuple((float(edges[b]), float(edges[b + 1]), int(k[b])) for b in range(n_bands))


def hemisphere_directions(count: int = 145):
    """Deterministic cosine-weighted sky patches around the +z axis.

    Returns (directions[N, 3] in (south, east, up) axes, weights[N]); each
    weight is the patch's exact cosine-weighted solid angle, normalized so an
    unobstructed hemisphere sums to one. 145 gives the Tregenza subdivision.
    """
    dirs, weights = [], []
    for lo, hi, n in _band_layout(int(count)):
        alt = 90.0 if hi == 90.0 and n == 1 else 0.5 * (lo + hi)
        az = (np.arange(n) + 0.5) * 360.0 / n
        dirs.append(sky_vector(az, np.full(n, alt)))
        w = (math.sin(math.radians(hi)) ** 2 - math.sin(math.radians(lo)) ** 2) / n
        weights.append(np.full(n, w))
    d = np.concatenate(dirs)
    w = np.concatenate(weights)
    return np.ascontiguousarray(d), w / w.sum()


def _rotate_to(dirs: np.ndarray, normal) -> np.ndarray:
    """Map directions given around +z onto the hemisphere around ``normal``."""
    n = np.asarray(normal, dtype=float)
    helper = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    t1 = np.cross(helper, n)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    return np.ascontiguousarray(dirs[:, :1] * t1 + dirs[:, 1:2] * t2 + dirs[:, 2:3] * n)


# --------------------------------------------------------------------------
# irradiance

@dataclass(frozen=True)
class IrradianceMap:
    direct: RasterLayer
    diffuse: RasterLayer
    global_: RasterLayer
    mode: Literal["instantaneous", "cumulative"] = "instantaneous"
    steps: int = 1

    @property
    def grid(self):
        return self.global_.grid


class _GroundScene:
    """Observer geometry and sky exposure of one grid, reused across time steps."""

    def __init__(self, vg: VoxelGrid, cfg: ObserverConfig, params: TreeOpticalParams):
        self.vg = vg
        self.mask, self.origins = walkable_observers(vg, cfg.eye_height_m)
        self.opaque = opaque_table(tree_opaque=False)
        self.atten = params.extinction_coefficient * params.leaf_area_density * vg.voxel_size_m
        dirs, w = hemisphere_directions(cfg.diffuse_ray_count)
        self.svf = sky_exposure(vg.voxels, self.origins, dirs, w, self.opaque, self.atten)

    def components(self, sun: SunPosition, dni: float, dhi: float):
        direct = np.zeros(len(self.origins))
        sin_el = math.sin(math.radians(sun.elevation))
        if sun.elevation > 0 and dni > 0:
            tau = sun_exposure(self.vg.voxels, self.origins, sun.direction(), self.opaque,
                               self.atten)
            direct = dni * sin_el * tau
        diffuse = dhi * self.svf
        return direct, diffuse, direct + diffuse

    def layer(self, values: np.ndarray) -> RasterLayer:
        out = np.full(self.vg.grid.shape, CONTINUOUS_NODATA)
        out[self.mask] = values
        return RasterLayer(self.vg.grid, out)


def sky_view_factor(vg: VoxelGrid, cfg: ObserverConfig = ObserverConfig(),
                    params: TreeOpticalParams = TreeOpticalParams()) -> RasterLayer:
    """Cosine-weighted visible sky fraction at each walkable cell."""
    scene = _GroundScene(vg, cfg, params)
    return scene.layer(scene.svf)


def instantaneous_ground(vg: VoxelGrid, sun: SunPosition, dni: float, dhi: float,
                         cfg: ObserverConfig = ObserverConfig(),
                         params: TreeOpticalParams = TreeOpticalParams()) -> IrradianceMap:
    """Ground-level irradiance (W/m^2) for one sun position.

    Cells without a walkable surface (under buildings) are nodata.
    """
    if dni < 0 or dhi < 0:
        raise ValueError("irradiance inputs must be non-negative")
    scene = _GroundScene(vg, cfg, params)
    d, f, g = scene.components(sun, dni, dhi)
    return IrradianceMap(scene.layer(d), scene.layer(f), scene.layer(g))


def record_sun_time(stamp: datetime, tz_hours: float) -> datetime:
    """UTC instant at the middle of the hour ending at an EPW record's hour."""
    return stamp + timedelta(minutes=30) - timedelta(hours=tz_hours)


def _period(weather: WeatherSeries, cfg: ObserverConfig) -> WeatherSeries:
    start, end = cfg.period
    sel = weather.select(start, end)
    if len(sel) == 0:
        raise ValueError("the requested period contains no weather records")
    return sel


def cumulative_ground(vg: VoxelGrid, weather: WeatherSeries,
                      cfg: ObserverConfig = ObserverConfig(),
                      params: TreeOpticalParams = TreeOpticalParams()) -> IrradianceMap:
    """Ground irradiation (Wh/m^2) summed over the hourly records in ``cfg.period``.

    Each record contributes its instantaneous irradiance times one hour; the
    period is half-open, ``start <= t < end``.
    """
    series = _period(weather, cfg)
    scene = _GroundScene(vg, cfg, params)
    n = len(scene.origins)
    acc_d, acc_f, acc_g = np.zeros(n), np.zeros(n), np.zeros(n)
    for stamp, dni, dhi in zip(series.timestamps, series.dni, series.dhi):
        sun = sun_position(weather.latitude, weather.longitude,
                           record_sun_time(stamp, weather.timezone))
        d, f, g = scene.components(sun, float(dni), float(dhi))
        acc_d += d * 1.0
        acc_f += f * 1.0
        acc_g += g * 1.0
    return IrradianceMap(scene.layer(acc_d), scene.layer(acc_f), scene.layer(acc_g),
                         "cumulative", len(series))


# --------------------------------------------------------------------------
# building faces

FACE_NORMALS = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
                        dtype=np.int64)

BUILDING_CODES = (VoxelClass.BUILDING, VoxelClass.LANDMARK)


@dataclass(frozen=True)
class SurfaceIrradiance:
    voxel_index: np.ndarray      # (N, 3) row, col, z
    normal: np.ndarray           # (N, 3) in (south, east, up) axes
    direct: np.ndarray
    diffuse: np.ndarray
    global_: np.ndarray
    mode: Literal["instantaneous", "cumulative"] = "instantaneous"

    def __len__(self) -> int:
        return len(self.direct)


def exposed_building_faces(vg: VoxelGrid):
    """Building faces whose in-domain neighbour is Void: (voxel index, normal id)."""
    vox = vg.voxels
    solid = np.isin(vox, BUILDING_CODES)
    idx, nid = [], []
    for k, n in enumerate(FACE_NORMALS):
        nb_void = np.zeros(vox.shape, dtype=bool)
        src = [slice(None)] * 3
        dst = [slice(None)] * 3
        axis = int(np.flatnonzero(n)[0])
        if n[axis] > 0:
            src[axis], dst[axis] = slice(0, -1), slice(1, None)
        else:
            src[axis], dst[axis] = slice(1, None), slice(0, -1)
        nb_void[tuple(src)] = vox[tuple(dst)] == VoxelClass.VOID
        hit = np.argwhere(solid & nb_void)
        idx.append(hit)
        nid.append(np.full(len(hit), k))
    idx = np.concatenate(idx) if idx else np.zeros((0, 3), dtype=np.int64)
    nid = np.concatenate(nid) if nid else np.zeros(0, dtype=np.int64)
    order = np.lexsort((nid, idx[:, 2], idx[:, 1], idx[:, 0]))
    return idx[order], nid[order]


class _FaceScene:
    def __init__(self, vg: VoxelGrid, cfg: ObserverConfig, params: TreeOpticalParams):
        self.vg = vg
        self.index, self.nid = exposed_building_faces(vg)
        self.normals = FACE_NORMALS[self.nid].astype(float)
        self.origins = np.ascontiguousarray(self.index + 0.5 + 0.5 * self.normals
                                            + 1e-4 * self.normals)
        self.opaque = opaque_table(tree_opaque=False)
        self.atten = params.extinction_coefficient * params.leaf_area_density * vg.voxel_size_m
        dirs, w = hemisphere_directions(cfg.diffuse_ray_count)
        self.svf = np.zeros(len(self.index))
        for k, n in enumerate(FACE_NORMALS):
            sel = self.nid == k
            if sel.any():
                rot = _rotate_to(dirs, n.astype(float))
                self.svf[sel] = sky_exposure(vg.voxels, np.ascontiguousarray(self.origins[sel]),
                                             rot, w, self.opaque, self.atten)

    def components(self, sun: SunPosition, dni: float, dhi: float):
        direct = np.zeros(len(self.index))
        if sun.elevation > 0 and dni > 0 and len(direct):
            s = sun.direction()
            cos_inc = self.normals @ s
            lit = cos_inc > 0
            if lit.any():
                tau = sun_exposure(self.vg.voxels, np.ascontiguousarray(self.origins[lit]), s,
                                   self.opaque, self.atten)
                direct[lit] = dni * cos_inc[lit] * tau
        diffuse = dhi * self.svf
        return direct, diffuse, direct + diffuse


def surface_irradiance(vg: VoxelGrid, sun: SunPosition | None = None, dni: float = 0.0,
                       dhi: float = 0.0, cfg: ObserverConfig = ObserverConfig(),
                       params: TreeOpticalParams = TreeOpticalParams(),
                       weather: WeatherSeries | None = None) -> SurfaceIrradiance:
    """Irradiance on every exposed building face.

    Pass ``sun``/``dni``/``dhi`` for an instantaneous result (W/m^2) or
    ``weather`` for a sum over ``cfg.period`` (Wh/m^2). Diffuse sky is
    sampled over the hemisphere around each face normal, so walls see the
    ground half as blocked.
    """
    scene = _FaceScene(vg, cfg, params)
    normals = FACE_NORMALS[scene.nid]
    if weather is None:
        if sun is None:
            raise ValueError("pass either a sun position or a weather series")
        d, f, g = scene.components(sun, dni, dhi)
        return SurfaceIrradiance(scene.index, normals, d, f, g)
    series = _period(weather, cfg)
    n = len(scene.index)
    acc_d, acc_f, acc_g = np.zeros(n), np.zeros(n), np.zeros(n)
    for stamp, dn, dh in zip(series.timestamps, series.dni, series.dhi):
        s = sun_position(weather.latitude, weather.longitude,
                         record_sun_time(stamp, weather.timezone))
        d, f, g = scene.components(s, float(dn), float(dh))
        acc_d += d
        acc_f += f
        acc_g += g
    return SurfaceIrradiance(scene.index, normals, acc_d, acc_f, acc_g, "cumulative")
