import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from urbanvox.geogrid import GridSpec, make_grid

settings.register_profile("repo", derandomize=True, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def grid_of(n_rows: int, n_cols: int, voxel: float = 1.0, lat0: float = 0.0,
            lon0: float = 0.0) -> GridSpec:
    """Grid with exactly n_rows x n_cols cells whose north-west corner is near (lat0, lon0)."""
    lat_span = (n_rows + 0.5) * voxel / 111_132.0
    mid = math.radians(lat0 + 0.5 * lat_span)
    lon_span = (n_cols + 0.5) * voxel / (111_320.0 * math.cos(mid))
    g = make_grid((lat0, lon0, lat0 + lat_span, lon0 + lon_span), voxel)
    assert g.shape == (n_rows, n_cols)
    return g


def rc_to_latlon(grid: GridSpec, r: float, c: float) -> tuple[float, float]:
    return grid.lat_max - r * grid.dlat, grid.lon_min + c * grid.dlon


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def vgrid(vox, voxel: float = 1.0):
    """VoxelGrid over an equatorial grid matching ``vox``'s horizontal shape."""
    from urbanvox.voxelizer import VoxelGrid

    vox = np.asarray(vox, dtype=np.uint8)
    return VoxelGrid(grid_of(vox.shape[0], vox.shape[1], voxel), vox)


def flat_scene(n_rows: int = 6, n_cols: int = 6, n_z: int = 6, surface: int = 11,
               voxel: float = 1.0):
    """Grass floor at z = 0 and Void above."""
    vox = np.zeros((n_rows, n_cols, n_z), np.uint8)
    vox[:, :, 0] = surface
    return vgrid(vox, voxel)


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
