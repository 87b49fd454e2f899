import json
import math
from datetime import datetime
from pathlib import Path

import numpy as np
import pytest

from conftest import flat_scene, vgrid
from oracles import epw_text
from urbanvox.geogrid import CONTINUOUS_NODATA
from urbanvox.ingest import TreeOpticalParams, WeatherSeries, parse_epw
from urbanvox.solar import (FACE_NORMALS, ObserverConfig, SunPosition, cumulative_ground,
                            exposed_building_faces, hemisphere_directions,
                            instantaneous_ground, record_sun_time, sky_vector, sky_view_factor,
                            sun_position, surface_irradiance)
from urbanvox.voxelizer import VoxelClass as V

DATA = Path(__file__).parent / "data"


def angular_separation(a: SunPosition, b_az: float, b_el: float) -> float:
    u, v = a.direction(), sky_vector(b_az, b_el)
    return math.degrees(math.acos(min(1.0, float(u @ v))))


# --- sun position -----------------------------------------------------------------------

def test_sun_reference_points():
    ref = json.loads((DATA / "sun_reference.json").read_text())["points"]
    assert len(ref) >= 10
    for p in ref:
        t = datetime.strptime(p["utc"], "%Y-%m-%d %H:%M")
        s = sun_position(p["lat"], p["lon"], t)
        assert abs(s.elevation - p["apparent_elevation"]) <= 0.5, p
        assert angular_separation(s, p["azimuth"], p["apparent_elevation"]) <= 0.5, p


def test_sun_examples():
    assert sun_position(0, 0, datetime(2023, 3, 20, 12, 7)).elevation > 85
    assert sun_position(0, 0, datetime(2023, 3, 20, 0, 0)).elevation < 0
    # polar night: local noon at 15.6 E is about 11:00 UTC
    assert sun_position(78.2, 15.6, datetime(2023, 12, 15, 11, 0)).elevation < 0
    with pytest.raises(ValueError):
        sun_position(91, 0, datetime(2023, 1, 1))


def test_sun_ranges_and_unit_direction(rng):
    for _ in range(200):
        lat, lon = rng.uniform(-66, 66), rng.uniform(-180, 180)
        t = datetime(2023, 1, 1) + (datetime(2024, 1, 1) - datetime(2023, 1, 1)) * rng.random()
        s = sun_position(lat, lon, t)
        assert 0 <= s.azimuth < 360 and -90 <= s.elevation <= 90
        assert np.linalg.norm(s.direction()) == pytest.approx(1.0, abs=1e-12)


def test_sky_vector_axes():
    # axes are (south, east, up); azimuth clockwise from north
    assert np.allclose(sky_vector(0, 0), [-1, 0, 0])
    assert np.allclose(sky_vector(90, 0), [0, 1, 0])
    assert np.allclose(sky_vector(180, 0), [1, 0, 0])
    assert np.allclose(sky_vector(0, 90), [0, 0, 1])


def test_record_sun_time():
    assert record_sun_time(datetime(2023, 6, 1, 11), 9) == datetime(2023, 6, 1, 2, 30)


# --- sky sampling --------------------------------------------------------------------------

@pytest.mark.parametrize("count", [1, 7, 50, 145, 300])
def test_hemisphere_directions(count):
    d, w = hemisphere_directions(count)
    assert d.shape == (count, 3) and w.shape == (count,)
    assert np.allclose(np.linalg.norm(d, axis=1), 1.0)
    assert np.all(d[:, 2] > 0)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    # cosine-weighted mean of cos(zenith) over the hemisphere is 2/3
    if count >= 7:
        assert float(w @ d[:, 2]) == pytest.approx(2 / 3, abs=0.03)


def test_tregenza_layout():
    d, _ = hemisphere_directions(145)
    alt = np.degrees(np.arcsin(d[:, 2]))
    counts = [int(np.sum(np.isclose(alt, a))) for a in (6, 18, 30, 42, 54, 66, 78, 90)]
    assert counts == [30, 30, 24, 24, 18, 12, 6, 1]


# --- ground irradiance -----------------------------------------------------------------------

def test_flat_scene_global_500():
    m = instantaneous_ground(flat_scene(), SunPosition(123.0, 30.0), 800, 100)
    assert np.allclose(m.global_.values, 500.0, atol=1e-9)
    assert np.allclose(m.direct.values, 400.0, atol=1e-9)


def test_night_is_zero():
    m = instantaneous_ground(flat_scene(), SunPosition(0.0, -10.0), 0, 0)
    assert np.all(m.global_.values == 0)


def test_sun_below_horizon_keeps_diffuse():
    m = instantaneous_ground(flat_scene(), SunPosition(0.0, -2.0), 300, 20)
    assert np.all(m.direct.values == 0)
    assert np.allclose(m.diffuse.values, 20.0)


def test_svf_flat_and_enclosed():
    assert np.all(np.abs(sky_view_factor(flat_scene()).values - 1.0) <= 0.02)
    vg = flat_scene(7, 7, 6)
    vox = vg.voxels.copy()
    vox[:, :, 4] = V.BUILDING
    vox[[0, -1], :, 1:5] = V.BUILDING
    vox[:, [0, -1], 1:5] = V.BUILDING
    svf = sky_view_factor(vg.with_voxels(vox))
    inner = svf.values[1:-1, 1:-1]
    assert np.all(inner == 0.0)
    assert np.all(svf.values[0, :] == CONTINUOUS_NODATA)
    m = instantaneous_ground(vg.with_voxels(vox), SunPosition(180.0, 60.0), 900, 150)
    assert np.all(m.global_.values[1:-1, 1:-1] == 0.0)


def test_tree_canopy_attenuates_direct():
    vg = flat_scene(3, 3, 8)
    vox = vg.voxels.copy()
    vox[1, 1, 5] = V.TREE
    m = instantaneous_ground(vg.with_voxels(vox), SunPosition(0.0, 90.0), 1000, 0)
    assert m.direct.values[1, 1] == pytest.approx(1000 * math.exp(-0.5), rel=1e-9)
    assert m.direct.values[0, 0] == pytest.approx(1000.0)
    dense = instantaneous_ground(vg.with_voxels(vox), SunPosition(0.0, 90.0), 1000, 0,
                                 params=TreeOpticalParams(0.5, 2.0))
    assert dense.direct.values[1, 1] == pytest.approx(1000 * math.exp(-1.0), rel=1e-9)


def test_negative_inputs_rejected():
    with pytest.raises(ValueError):
        instantaneous_ground(flat_scene(), SunPosition(0, 30), -1, 0)
    with pytest.raises(ValueError):
        ObserverConfig(eye_height_m=-1)
    with pytest.raises(ValueError):
        ObserverConfig(diffuse_ray_count=0)


def random_city(rng, n=10, n_z=8):
    vox = np.zeros((n, n, n_z), np.uint8)
    vox[:, :, 0] = rng.choice([3, 5, 11], size=(n, n))
    for _ in range(6):
        r, c = rng.integers(0, n, 2)
        vox[r, c, 1:rng.integers(2, n_z)] = V.BUILDING
    u = rng.random((n, n, n_z))
    vox[:, :, 3:][(u[:, :, 3:] < 0.08) & (vox[:, :, 3:] == 0)] = V.TREE
    return vgrid(vox, 2.0)


def test_identity_and_non_negative(rng):
    for _ in range(5):
        vg = random_city(rng)
        sun = SunPosition(rng.uniform(0, 360), rng.uniform(5, 85))
        m = instantaneous_ground(vg, sun, 700, 90)
        ok = m.global_.mask
        assert np.array_equal(m.global_.values[ok], m.direct.values[ok] + m.diffuse.values[ok])
        assert np.all(m.global_.values[ok] >= 0)
        assert np.all(m.diffuse.values[ok] <= 90 + 1e-9)


def test_shadow_dominance(rng):
    for _ in range(30):
        vg = random_city(rng)
        sun = SunPosition(rng.uniform(0, 360), rng.uniform(5, 85))
        before = instantaneous_ground(vg, sun, 800, 100)
        vox = vg.voxels.copy()
        # above the eye level so no observer is displaced
        r, c, z = rng.integers(0, 10), rng.integers(0, 10), rng.integers(3, 8)
        if vox[r, c, z] != V.VOID:
            continue
        vox[r, c, z] = rng.choice([V.BUILDING, V.TREE])
        after = instantaneous_ground(vg.with_voxels(vox), sun, 800, 100)
        ok = before.direct.mask & after.direct.mask
        assert np.all(after.direct.values[ok] <= before.direct.values[ok] + 1e-12)
        assert np.all(after.diffuse.values[ok] <= before.diffuse.values[ok] + 1e-12)


# --- cumulative -----------------------------------------------------------------------------

def series(stamps, dni, dhi, lat=35.68, lon=139.77, tz=9.0):
    return WeatherSeries(lat, lon, tz, tuple(stamps), np.asarray(dni, float),
                         np.asarray(dhi, float))


def test_cumulative_two_records_equals_sum(rng):
    vg = random_city(rng)
    ws = series([datetime(2023, 6, 1, 9), datetime(2023, 6, 1, 14)], [600, 450], [80, 120])
    cum = cumulative_ground(vg, ws)
    assert cum.mode == "cumulative" and cum.steps == 2
    parts = [instantaneous_ground(vg, sun_position(ws.latitude, ws.longitude,
                                                   record_sun_time(t, ws.timezone)), n, f)
             for t, n, f in ws.records]
    ok = cum.global_.mask
    total = parts[0].global_.values + parts[1].global_.values
    assert np.array_equal(cum.global_.values[ok], total[ok])
    assert np.array_equal(cum.global_.mask, parts[0].global_.mask)
    assert np.allclose(cum.global_.values[ok],
                       cum.direct.values[ok] + cum.diffuse.values[ok], rtol=1e-9, atol=0)


def test_cumulative_single_step(rng):
    vg = random_city(rng)
    t = datetime(2023, 3, 1, 10)
    one = cumulative_ground(vg, series([t], [500], [70]))
    inst = instantaneous_ground(vg, sun_position(35.68, 139.77, record_sun_time(t, 9)), 500, 70)
    ok = one.global_.mask
    assert one.steps == 1
    assert np.array_equal(one.global_.values[ok], inst.global_.values[ok])


def test_cumulative_equal_steps_double(rng):
    vg = random_city(rng)
    t = datetime(2023, 8, 1, 15)
    one = cumulative_ground(vg, series([t], [640], [85]))
    two = cumulative_ground(vg, series([t, t], [640, 640], [85, 85]))
    ok = one.global_.mask
    assert np.array_equal(two.global_.values[ok], 2 * one.global_.values[ok])


def test_cumulative_flat_closed_form():
    ws = series([datetime(2023, 6, 1, 12), datetime(2023, 6, 1, 13)], [800, 800], [100, 100],
                lat=0.0, lon=0.0, tz=0.0)
    cum = cumulative_ground(flat_scene(), ws)
    el = [sun_position(0, 0, record_sun_time(t, 0)).elevation for t in ws.timestamps]
    want = sum(800 * math.sin(math.radians(e)) + 100 for e in el)
    assert np.allclose(cum.global_.values, want, rtol=1e-12)


def test_cumulative_additive_over_split(rng):
    vg = random_city(rng)
    ws = parse_epw(epw_text(n_days=3))
    a, b, c = datetime(2023, 1, 1), datetime(2023, 1, 2, 7), datetime(2023, 1, 4)
    whole = cumulative_ground(vg, ws, ObserverConfig(period=(a, c)))
    left = cumulative_ground(vg, ws, ObserverConfig(period=(a, b)))
    right = cumulative_ground(vg, ws, ObserverConfig(period=(b, c)))
    ok = whole.global_.mask
    assert whole.steps == left.steps + right.steps == 72
    assert np.allclose(whole.global_.values[ok],
                       left.global_.values[ok] + right.global_.values[ok], rtol=1e-12)


def test_full_year_steps():
    ws = parse_epw(epw_text())
    cum = cumulative_ground(flat_scene(2, 2, 4), ws)
    assert cum.steps == 8760
    assert np.all(cum.global_.values > 0)


def test_empty_period_rejected():
    ws = parse_epw(epw_text(n_days=1))
    with pytest.raises(ValueError, match="no weather records"):
        cumulative_ground(flat_scene(), ws,
                          ObserverConfig(period=(datetime(2024, 1, 1), datetime(2024, 2, 1))))


# --- building surfaces ------------------------------------------------------------------------

def brute_faces(vox):
    out = set()
    for i, j, k in np.argwhere(np.isin(vox, [V.BUILDING, V.LANDMARK])):
        for nid, n in enumerate(FACE_NORMALS):
            a, b, c = i + n[0], j + n[1], k + n[2]
            inside = 0 <= a < vox.shape[0] and 0 <= b < vox.shape[1] and 0 <= c < vox.shape[2]
            if inside and vox[a, b, c] == V.VOID:
                out.add((int(i), int(j), int(k), nid))
    return out


def test_exposed_faces_match_brute_force(rng):
    for _ in range(10):
        vg = random_city(rng)
        idx, nid = exposed_building_faces(vg)
        got = {(int(i), int(j), int(k), int(n)) for (i, j, k), n in zip(idx, nid)}
        assert len(got) == len(idx)
        assert got == brute_faces(vg.voxels)


def single_building():
    vg = flat_scene(3, 3, 4)
    vox = vg.voxels.copy()
    vox[1, 1, 1] = V.BUILDING
    return vg.with_voxels(vox)


def face(res, normal):
    k = [i for i, n in enumerate(res.normal.tolist()) if n == list(normal)]
    assert len(k) == 1
    return k[0]


def test_roof_at_zenith():
    res = surface_irradiance(single_building(), SunPosition(0.0, 90.0), 1000.0, 0.0)
    assert len(res) == 5  # four walls and a roof; the floor touches grass
    assert res.direct[face(res, (0, 0, 1))] == pytest.approx(1000.0, abs=1e-9)


def test_north_wall_unlit_by_southern_sun():
    res = surface_irradiance(single_building(), SunPosition(180.0, 30.0), 1000.0, 0.0)
    assert res.direct[face(res, (-1, 0, 0))] == 0.0
    assert res.direct[face(res, (1, 0, 0))] == pytest.approx(1000 * math.cos(math.radians(30)))


def test_wall_behind_one_tree_voxel():
    vox = np.zeros((4, 1, 1), np.uint8)
    vox[0, 0, 0] = V.BUILDING
    vox[2, 0, 0] = V.TREE
    # a sun just above the southern horizon: n . s = 1 to within 1e-16
    res = surface_irradiance(vgrid(vox), SunPosition(180.0, 1e-6), 1000.0, 0.0)
    k = face(res, (1, 0, 0))
    assert res.direct[k] == pytest.approx(606.5, abs=0.05)
    assert res.direct[k] == pytest.approx(1000 * math.exp(-0.5), rel=1e-9)


def test_surface_cumulative_and_identity(rng):
    vg = random_city(rng)
    ws = parse_epw(epw_text(n_days=2))
    res = surface_irradiance(vg, weather=ws)
    assert res.mode == "cumulative"
    # global accumulates per-step globals, so the identity holds to rounding
    assert np.allclose(res.global_, res.direct + res.diffuse, rtol=1e-9, atol=0)
    assert np.all(res.direct >= 0) and np.all(res.diffuse >= 0)
    with pytest.raises(ValueError):
        surface_irradiance(vg)
