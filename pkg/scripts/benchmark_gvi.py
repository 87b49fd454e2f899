"""Time model generation and a 600-ray green view index on a synthetic city.

    python3 scripts/benchmark_gvi.py --size 400 --layers 60 --voxel 2

Prints the model shape, walkable cell count and wall-clock seconds for each
stage. Numba compiles on first use and caches to disk, so the first run is
slower; pass --warmup to exclude compilation from the timing.
"""
import argparse
import time

import numpy as np

from urbanvox.geogrid import CATEGORICAL_NODATA, RasterLayer, make_grid
from urbanvox.view import gvi_config, view_index
from urbanvox.voxelizer import VoxelGrid, extrude_terrain, place_buildings, place_trees


def synthetic_city(size: int, layers: int, voxel: float, seed: int) -> VoxelGrid:
    rng = np.random.default_rng(seed)
    lat_span = (size + 0.5) * voxel / 111_132.0
    lon_span = (size + 0.5) * voxel / (111_320.0 * np.cos(np.radians(35.68 + lat_span / 2)))
    g = make_grid((35.68, 139.76, 35.68 + lat_span, 139.76 + lon_span), voxel)
    dem = RasterLayer(g, np.cumsum(rng.normal(0, 0.05, g.shape), axis=1))
    cover = RasterLayer(g, rng.choice([2, 3, 11, 12], size=g.shape), "categorical",
                        CATEGORICAL_NODATA)
    top = layers * voxel
    heights = np.zeros(g.shape)
    for _ in range(size * size // 250):
        r, c = rng.integers(0, size - 5, 2)
        heights[r:r + rng.integers(3, 8), c:c + rng.integers(3, 8)] = rng.uniform(4, 0.5 * top)
    canopy = np.where((heights == 0) & (rng.random(g.shape) < 0.15),
                      rng.uniform(4, 20, g.shape), 0.0)
    vg = place_trees(place_buildings(extrude_terrain(dem, cover, g, 0.5 * top),
                                     RasterLayer(g, heights)), RasterLayer(g, canopy))
    if vg.n_z < layers:
        vg = vg.with_voxels(np.pad(vg.voxels, ((0, 0), (0, 0), (0, layers - vg.n_z))))
    return vg


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--size", type=int, default=400, help="cells per side")
    p.add_argument("--layers", type=int, default=60, help="vertical voxel layers")
    p.add_argument("--voxel", type=float, default=2.0, help="voxel size (m)")
    p.add_argument("--seed", type=int, default=10)
    p.add_argument("--warmup", action="store_true", help="compile kernels before timing")
    args = p.parse_args()

    if args.warmup:
        view_index(synthetic_city(8, 8, args.voxel, 0), gvi_config())
    t0 = time.perf_counter()
    vg = synthetic_city(args.size, args.layers, args.voxel, args.seed)
    t1 = time.perf_counter()
    gvi = view_index(vg, gvi_config())
    t2 = time.perf_counter()
    walk = int(gvi.mask.sum())
    print(f"model {vg.shape[0]} x {vg.shape[1]} x {vg.shape[2]}, {walk} walkable cells")
    print(f"generate {t1 - t0:.2f} s, GVI (600 rays) {t2 - t1:.2f} s, "
          f"total {t2 - t0:.2f} s")
    print(f"mean GVI {gvi.values[gvi.mask].mean():.4f}")


if __name__ == "__main__":
    main()
