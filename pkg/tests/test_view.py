import numpy as np
import pytest

from conftest import flat_scene, vgrid
from oracles import march
from urbanvox.geogrid import CONTINUOUS_NODATA
from urbanvox.view import (GREEN_CLASSES, SKY, ViewConfig, exposed_voxels, gvi_config,
                           landmark_visibility, svi_config, view_counts, view_index)
from urbanvox.voxelizer import SURFACE_CODES, VoxelClass as V


def test_ray_budgets():
    assert gvi_config().ray_count == 600
    assert svi_config().ray_count == 300
    assert len(gvi_config().directions()) == 600
    assert ViewConfig(frozenset({SKY}), -90, 90, 10).ray_count == 36 * 18


def test_directions_layout():
    d = svi_config().directions()
    assert np.allclose(np.linalg.norm(d, axis=1), 1.0)
    el = np.degrees(np.arcsin(d[:, 2]))
    assert sorted(set(np.round(el, 9))) == [3, 9, 15, 21, 27]
    # first ray points north (-row) at the lowest band centre
    assert np.allclose(d[0], [-np.cos(np.radians(3)), 0, np.sin(np.radians(3))])


@pytest.mark.parametrize("kw", [dict(v_min=10, v_max=10), dict(v_min=-91, v_max=0),
                                dict(angular_step=7), dict(angular_step=0),
                                dict(v_min=0, v_max=25), dict(eye_height_m=-1)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        ViewConfig(**kw)


def test_empty_target_set():
    with pytest.raises(ValueError, match="empty"):
        view_index(flat_scene(), ViewConfig(frozenset()))


def test_svi_flat_is_one():
    svi = view_index(flat_scene(), svi_config())
    assert np.all(svi.values == 1.0)


def test_gvi_flat_ground_eye_on_surface():
    # with the eye on the ground every downward ray hits the cell's own surface voxel
    assert np.all(view_index(flat_scene(surface=V.RANGELAND), gvi_config(eye_height_m=0)).values
                  == 0.5)
    assert np.all(view_index(flat_scene(surface=V.DEVELOPED_SPACE),
                             gvi_config(eye_height_m=0)).values == 0.0)


def test_gvi_counts_tree_walls():
    vg = flat_scene(5, 5, 12, surface=V.DEVELOPED_SPACE)
    vox = vg.voxels.copy()
    vox[[0, -1], :, 1:] = V.TREE
    vox[:, [0, -1], 1:] = V.TREE
    gvi = view_index(vg.with_voxels(vox), gvi_config(eye_height_m=0))
    # the upward half of the fan meets the tree walls, the downward half the paving
    assert gvi.values[2, 2] == 0.5
    assert gvi.values[0, 0] == CONTINUOUS_NODATA


def random_scene(rng, n=10, n_z=10):
    vox = np.zeros((n, n, n_z), np.uint8)
    vox[:, :, 0] = rng.choice(SURFACE_CODES, size=(n, n))
    for _ in range(8):
        r, c = rng.integers(0, n, 2)
        vox[r, c, 1:rng.integers(2, n_z)] = rng.choice([V.BUILDING, V.LANDMARK])
    u = rng.random((n, n, n_z))
    vox[:, :, 3:][(u[:, :, 3:] < 0.08) & (vox[:, :, 3:] == 0)] = V.TREE
    vox[:, :, 4:][(u[:, :, 4:] > 0.97) & (vox[:, :, 4:] == 0)] = V.TERRAIN
    return vgrid(vox)


def test_partition_sums_to_one(rng):
    parts = [{SKY}, {V.BUILDING, V.LANDMARK}, {V.TREE}, set(SURFACE_CODES) | {V.TERRAIN}]
    for _ in range(3):
        vg = random_scene(rng)
        total = None
        for p in parts:
            mask, counts, n = view_counts(vg, ViewConfig(frozenset(p), -60, 60, 12))
            total = counts if total is None else total + counts
        assert np.all(total == n)


def test_indices_in_unit_interval(rng):
    vg = random_scene(rng)
    for cfg in (gvi_config(), svi_config()):
        v = view_index(vg, cfg)
        ok = v.mask
        assert np.all((v.values[ok] >= 0) & (v.values[ok] <= 1))


def test_svi_monotone_under_insertion(rng):
    vg = random_scene(rng, n=8, n_z=8)
    cfg = svi_config()
    before = view_index(vg, cfg)
    done = 0
    while done < 100:
        r, c, z = rng.integers(0, 8), rng.integers(0, 8), rng.integers(3, 8)
        if vg.voxels[r, c, z] != V.VOID:
            continue
        vox = vg.voxels.copy()
        vox[r, c, z] = rng.choice([V.BUILDING, V.TREE, V.TERRAIN])
        after = view_index(vg.with_voxels(vox), cfg)
        ok = before.mask & after.mask
        assert np.all(after.values[ok] <= before.values[ok])
        vg, before = vg.with_voxels(vox), after
        done += 1


# --- landmarks --------------------------------------------------------------------------

def line_scene(wall: bool):
    vox = np.zeros((1, 21, 6), np.uint8)
    vox[:, :, 0] = V.DEVELOPED_SPACE
    vox[0, 20, 1] = V.LANDMARK
    if wall:
        vox[0, 15, 1:4] = V.BUILDING
    return vgrid(vox)


@pytest.mark.parametrize("wall", [False, True])
def test_landmark_midway_wall(wall):
    vg = line_scene(wall)
    vis = landmark_visibility(vg)
    o = np.array([0.5, 10.5, 2.5])
    target = np.array([0.5, 20.5, 1.5])
    d = (target - o) / np.linalg.norm(target - o)
    code, _, _ = march(vg.voxels, o, d)
    assert vis.values[0, 10] == (1.0 if code == V.LANDMARK else 0.0)
    assert vis.values[0, 10] == (0.0 if wall else 1.0)
    assert vis.values[0, 19] == 1.0  # adjacent, clear air
    assert vis.values[0, 20] == CONTINUOUS_NODATA


def test_landmark_enclosed_by_shell():
    vox = np.zeros((7, 7, 5), np.uint8)
    vox[:, :, 0] = V.DEVELOPED_SPACE
    vox[3, 3, 1] = V.LANDMARK
    vox[2:5, 2:5, 1:3] = V.BUILDING
    vox[3, 3, 1] = V.LANDMARK
    vis = landmark_visibility(vgrid(vox))
    assert len(exposed_voxels(vgrid(vox), V.LANDMARK)) == 0
    assert vis.mask.sum() == 49 - 9
    assert np.all(vis.values[vis.mask] == 0.0)


def test_no_landmark_is_error():
    with pytest.raises(ValueError, match="no landmark"):
        landmark_visibility(flat_scene())


def test_landmark_subsampling_cap():
    vox = np.zeros((4, 30, 4), np.uint8)
    vox[:, :, 0] = V.DEVELOPED_SPACE
    vox[0, :, 1:4] = V.LANDMARK
    vg = vgrid(vox)
    full = landmark_visibility(vg)
    capped = landmark_visibility(vg, max_targets=3)
    assert np.all(full.values[1:] == 1.0)
    assert np.all(capped.values[1:] <= full.values[1:])


def test_landmark_visibility_symmetry(rng):
    # a landmark voxel placed at B's eye is visible from A iff one at A's eye is visible from B
    base = np.zeros((10, 10, 6), np.uint8)
    base[:, :, 0] = V.DEVELOPED_SPACE
    blocks = rng.random((10, 10, 5)) < 0.06
    base[:, :, 1:][blocks] = rng.choice([V.BUILDING, V.TREE, V.TERRAIN], size=blocks.sum())
    clear = np.argwhere((base[:, :, 1:4] == V.VOID).all(axis=2))
    seen = set()
    for _ in range(60):
        a, b = clear[rng.choice(len(clear), 2, replace=False)]
        # eye at 1 + 1.5 = 2.5 voxels: the centre of level 2
        fwd = base.copy()
        fwd[b[0], b[1], 2] = V.LANDMARK
        back = base.copy()
        back[a[0], a[1], 2] = V.LANDMARK
        ab = landmark_visibility(vgrid(fwd)).values[tuple(a)]
        ba = landmark_visibility(vgrid(back)).values[tuple(b)]
        assert ab == ba
        seen.add(ab)
    assert seen == {0.0, 1.0}


def test_green_classes_default():
    assert {V.TREE, V.RANGELAND, V.SHRUB, V.AGRICULTURE_LAND, V.MOSS_AND_LICHEN} == \
        set(GREEN_CLASSES)
