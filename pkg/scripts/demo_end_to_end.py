"""Build a small synthetic site and run every CLI stage on it.

    python3 scripts/demo_end_to_end.py /tmp/demo

Writes a config, two footprints, a sloped DEM and a synthetic weather file
into the target directory, then runs generate, three simulations and the
exports. Outputs land in <dir>/out.
"""
import argparse
import json
import sys
from pathlib import Path

from urbanvox.cli import main as cli

BBOX = (35.6800, 139.7600, 35.6812, 139.7615)


def box(lon, lat, dlon, dlat):
    return [[[lon, lat], [lon + dlon, lat], [lon + dlon, lat + dlat], [lon, lat + dlat],
             [lon, lat]]]


def epw(n_days: int = 365) -> str:
    head = ["LOCATION,Demo,,JPN,synthetic,000000,35.68,139.76,9.0,10.0"]
    head += [f"HEADER{i}" for i in range(7)]
    mdays = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31]
    rows, day = [], 0
    for m, nd in enumerate(mdays, 1):
        for d in range(1, nd + 1):
            if day >= n_days:
                break
            day += 1
            for h in range(1, 25):
                sun = max(0.0, 1 - abs(h - 12.5) / 6)
                vals = ["0"] * 35
                vals[:5] = ["2023", str(m), str(d), str(h), "0"]
                vals[14] = f"{700 * sun:.0f}"   # direct normal
                vals[15] = f"{120 * sun:.0f}"   # diffuse horizontal
                rows.append(",".join(vals))
    return "\n".join(head + rows) + "\n"


def write_site(root: Path) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    fc = {"type": "FeatureCollection", "features": [
        {"type": "Feature", "id": 1, "properties": {"height": 40},
         "geometry": {"type": "Polygon", "coordinates": box(139.7603, 35.6803, 3e-4, 2e-4)}},
        {"type": "Feature", "id": 2, "properties": {"height": 15},
         "geometry": {"type": "Polygon", "coordinates": box(139.7609, 35.6806, 2e-4, 3e-4)}}]}
    (root / "buildings.geojson").write_text(json.dumps(fc))
    rows = [" ".join(f"{10 + 0.5 * c:.1f}" for c in range(4)) for _ in range(4)]
    (root / "dem.asc").write_text("ncols 4\nnrows 4\nxllcorner 139.759\nyllcorner 35.679\n"
                                  "cellsize 0.001\nNODATA_value -9999\n" + "\n".join(rows) + "\n")
    (root / "site.epw").write_text(epw())
    cfg = root / "site.cfg"
    cfg.write_text("\n".join([
        "area.bbox = " + ", ".join(map(str, BBOX)),
        "area.voxel_size = 5",
        "inputs.footprints = buildings.geojson",
        "inputs.dem = dem.asc",
        "inputs.epw = site.epw",
        "output.dir = out",
    ]) + "\n")
    return cfg


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("dir", type=Path)
    cfg = str(write_site(p.parse_args().dir))
    steps = [
        ["generate", "-c", cfg],
        ["simulate", "view", "-c", cfg, "--target", "sky", "--vmin", "0", "--vmax", "30"],
        ["simulate", "solar-instant", "-c", cfg, "--time", "2023-06-21T12:00", "--tz", "9",
         "--dni", "800", "--dhi", "100"],
        ["simulate", "solar-cumulative", "-c", cfg, "--start", "06-01", "--end", "06-30"],
        ["simulate", "landmark", "-c", cfg, "--ids", "1"],
        ["export", "-c", cfg, "--format", "obj,vox,png", "--greedy"],
    ]
    for argv in steps:
        print("$ urbanvox " + " ".join(argv))
        rc = cli(argv)
        if rc:
            return rc
    return 0


if __name__ == "__main__":
    sys.exit(main())
