"""Command-line entry point: ``urbanvox fetch|generate|simulate|export``.

Exit codes: 0 success, 1 internal error, 2 configuration or input error,
3 network error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from contextlib import contextmanager
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from . import __version__
from .config import KEYS, ConfigError, RunConfig, load_config
from .export import (ExportError, ModelFormatError, read_model, to_mesh, write_categorical_png,
                     write_heatmap_png, write_model, write_obj, write_vox)
from .geogrid import (CATEGORICAL_NODATA, CONTINUOUS_NODATA, Polyline, RasterLayer,
                      aggregate_along_edges, make_grid, rasterize_polygons)
from .ingest import (MergeSummary, OverpassError, ParseError, fetch_osm_buildings, merge_heights,
                     parse_asc, parse_epw, parse_footprints_geojson, write_asc)
from .landcover import HarmonizedClass, code_lookup
from .solar import (ObserverConfig, cumulative_ground, instantaneous_ground, sun_position)
from .view import SKY, GREEN_CLASSES, ViewConfig, landmark_visibility, view_index
from .voxelizer import (VoxelClass, VoxelGrid, extrude_terrain, integrate, mark_landmarks,
                        pad_to, place_buildings, place_trees)

log = logging.getLogger("urbanvox")

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_NETWORK = 0, 1, 2, 3


class StageError(Exception):
    def __init__(self, stage: str, exc: BaseException):
        self.stage, self.exc = stage, exc
        super().__init__(f"{stage}: {exc}")


@contextmanager
def stage(name: str, timings: dict | None = None):
    t0 = time.perf_counter()
    try:
        yield
    except (StageError, ConfigError):
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc
    if timings is not None:
        timings[name] = time.perf_counter() - t0


# --------------------------------------------------------------------------
# generate

def build_model(cfg: RunConfig, timings: dict | None = None) -> VoxelGrid:
    bbox = cfg.require_bbox()
    with stage("grid", timings):
        grid = make_grid(bbox, cfg.voxel_size_m)
    units = cfg.raster_units
    with stage("dem", timings):
        if cfg.dem is not None:
            dem = parse_asc(cfg.dem.read_text(), grid, units=units)
        else:
            dem = RasterLayer(grid, np.zeros(grid.shape))
    with stage("landcover", timings):
        if cfg.landcover is not None:
            source = cfg.landcover_source
            code_map = None if source.lower() == "harmonized" else code_lookup(source)
            lc = parse_asc(cfg.landcover.read_text(), grid, units=units, kind="categorical",
                           code_map=code_map)
        else:
            HarmonizedClass(cfg.landcover_default)
            lc = RasterLayer(grid, np.full(grid.shape, cfg.landcover_default, dtype=np.int32),
                             "categorical", CATEGORICAL_NODATA)
    footprints = []
    with stage("footprints", timings):
        if cfg.footprints is not None:
            footprints = parse_footprints_geojson(cfg.footprints.read_text(), "primary")
        if cfg.complementary is not None:
            extra = parse_footprints_geojson(cfg.complementary.read_text(), "complementary")
            summary = MergeSummary()
            footprints = merge_heights(footprints, extra, summary)
            print(f"height merge: {summary.filled} filled, {summary.unresolved} unresolved")
        top = rasterize_polygons(footprints, grid, "top")
        bottom = rasterize_polygons(footprints, grid, "bottom")
    with stage("canopy", timings):
        if cfg.canopy is not None:
            canopy = parse_asc(cfg.canopy.read_text(), grid, units=units)
        else:
            canopy = RasterLayer(grid, np.zeros(grid.shape))
    with stage("voxelize", timings):
        tallest = max(float(top.values[top.mask].max(initial=0.0)),
                      float(canopy.values[canopy.mask].max(initial=0.0)))
        terrain = extrude_terrain(dem, lc, grid, tallest)
        buildings = place_buildings(terrain, top, bottom)
        trees = place_trees(terrain, canopy, cfg.tree)
        n_z = max(terrain.n_z, buildings.n_z, trees.n_z)
        vg = integrate(pad_to(terrain, n_z), pad_to(buildings, n_z), pad_to(trees, n_z))
        if cfg.landmark_ids:
            vg = mark_landmarks(vg, cfg.landmark_ids, footprints)
    return vg


def cmd_generate(cfg: RunConfig, args) -> int:
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    vg = build_model(cfg, timings)
    with stage("write", timings):
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        cfg.model_path.write_bytes(write_model(vg))
    print(f"model {cfg.model_path} ({vg.shape[0]} x {vg.shape[1]} x {vg.shape[2]} voxels)")
    print("voxel counts:")
    for cls, n in sorted(vg.counts().items()):
        print(f"  {cls.name.lower():<18} {n}")
    print("timings (s):")
    for name, dt in timings.items():
        print(f"  {name:<18} {dt:.3f}")
    print(f"  {'total':<18} {time.perf_counter() - t0:.3f}")
    return EXIT_OK


# --------------------------------------------------------------------------
# simulate

def _load_model(cfg: RunConfig, args) -> VoxelGrid:
    path = Path(args.model) if getattr(args, "model", None) else cfg.model_path
    if not path.is_file():
        raise ConfigError(f"model file not found: {path} (run 'generate' first)")
    with stage("read model"):
        return read_model(path.read_bytes())


def _parse_edges(text: str) -> list[Polyline]:
    doc = json.loads(text)
    edges = []
    for n, feat in enumerate(doc.get("features", [])):
        geom = feat.get("geometry") or {}
        eid = feat.get("id", (feat.get("properties") or {}).get("id", n))
        if geom.get("type") == "LineString":
            parts = [geom["coordinates"]]
        elif geom.get("type") == "MultiLineString":
            parts = geom["coordinates"]
        else:
            raise ValueError(f"edge feature {n}: expected a LineString geometry")
        for part in parts:
            edges.append(Polyline(tuple((lat, lon) for lon, lat, *_ in part), eid))
    return edges


def _write_result(cfg: RunConfig, name: str, layer: RasterLayer, args,
                  ramp: str = "heat", vrange=None) -> None:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.asc").write_text(write_asc(layer))
    (out / f"{name}.png").write_bytes(write_heatmap_png(layer, ramp, vrange))
    written = [f"{name}.asc", f"{name}.png"]
    if args.edges:
        rows = aggregate_along_edges(layer, _parse_edges(Path(args.edges).read_text()), args.stat)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["edge_id", "value"])
        for eid, v in rows:
            w.writerow([eid, "" if v is None else repr(v)])
        (out / f"{name}_edges.csv").write_text(buf.getvalue())
        written.append(f"{name}_edges.csv")
    valid = layer.values[layer.mask]
    if valid.size:
        print(f"{name}: {valid.size} cells, mean {valid.mean():.4f}, "
              f"min {valid.min():.4f}, max {valid.max():.4f}")
    print("wrote " + ", ".join(str(out / f) for f in written))


def _site(vg: VoxelGrid):
    g = vg.grid
    return 0.5 * (g.lat_min + g.lat_max), 0.5 * (g.lon_min + g.lon_max)


def _mmdd(text: str, year: int) -> datetime:
    try:
        return datetime.strptime(f"{year}-{text}", "%Y-%m-%d")
    except ValueError:
        raise ConfigError(f"bad date {text!r}; expected MM-DD") from None


def _weather(cfg: RunConfig, args):
    path = Path(args.epw) if args.epw else cfg.epw
    if path is None:
        raise ConfigError("an EPW file is required (--epw or inputs.epw)")
    if not path.is_file():
        raise ConfigError(f"EPW file not found: {path}")
    with stage("read weather"):
        return parse_epw(path.read_text())


def _observer(cfg: RunConfig, period=(None, None)) -> ObserverConfig:
    o = cfg.observer
    return ObserverConfig(o.eye_height_m, o.diffuse_ray_count, period)


def cmd_simulate(cfg: RunConfig, args) -> int:
    vg = _load_model(cfg, args)
    kind = args.kind
    if kind == "solar-instant":
        weather = _weather(cfg, args) if (args.epw or cfg.epw) else None
        if args.time is None:
            raise ConfigError("solar-instant needs --time YYYY-MM-DDTHH:MM")
        local = datetime.fromisoformat(args.time)
        tz = args.tz if args.tz is not None else (weather.timezone if weather else 0.0)
        dni, dhi = args.dni, args.dhi
        if dni is None or dhi is None:
            if weather is None:
                raise ConfigError("give --dni and --dhi, or an EPW file to read them from")
            hour = local.replace(minute=0, second=0, microsecond=0)
            hour = hour.replace(year=weather.timestamps[0].year)
            try:
                k = weather.timestamps.index(hour)
            except ValueError:
                raise ConfigError(f"no weather record at {hour:%m-%d %H:00}") from None
            dni = float(weather.dni[k]) if dni is None else dni
            dhi = float(weather.dhi[k]) if dhi is None else dhi
        lat, lon = (weather.latitude, weather.longitude) if weather else _site(vg)
        sun = sun_position(lat, lon, local - timedelta(hours=tz))
        print(f"sun azimuth {sun.azimuth:.2f} deg, elevation {sun.elevation:.2f} deg; "
              f"DNI {dni:g}, DHI {dhi:g} W/m2")
        with stage("simulate"):
            res = instantaneous_ground(vg, sun, dni, dhi, _observer(cfg), cfg.tree)
        _write_result(cfg, "solar_instant", res.global_, args)
        (cfg.output_dir / "solar_instant_direct.asc").write_text(write_asc(res.direct))
        (cfg.output_dir / "solar_instant_diffuse.asc").write_text(write_asc(res.diffuse))
    elif kind == "solar-cumulative":
        weather = _weather(cfg, args)
        year = weather.timestamps[0].year
        start = _mmdd(args.start, year) if args.start else None
        end = _mmdd(args.end, year) + timedelta(days=1) if args.end else None
        if start and end and end <= start:
            raise ConfigError("--end must not precede --start")
        with stage("simulate"):
            res = cumulative_ground(vg, weather, _observer(cfg, (start, end)), cfg.tree)
        print(f"steps: {res.steps}")
        _write_result(cfg, "solar_cumulative", res.global_, args)
    elif kind == "view":
        targets = _targets(args.target)
        vcfg = ViewConfig(targets, args.vmin, args.vmax, args.step, cfg.observer.eye_height_m)
        print(f"view: {vcfg.ray_count} rays per observer")
        with stage("simulate"):
            res = view_index(vg, vcfg)
        _write_result(cfg, "view", res, args, "green", (0.0, 1.0))
    elif kind == "landmark":
        ids = tuple(args.ids.split(",")) if args.ids else ()
        if ids:
            if cfg.footprints is None:
                raise ConfigError("landmark ids need inputs.footprints")
            with stage("landmarks"):
                fps = parse_footprints_geojson(cfg.footprints.read_text(), "primary")
                vg = mark_landmarks(vg, ids, fps)
        with stage("simulate"):
            res = landmark_visibility(vg, ViewConfig(eye_height_m=cfg.observer.eye_height_m))
        _write_result(cfg, "landmark", res, args, "grey", (0.0, 1.0))
    return EXIT_OK


def _targets(spec: str) -> frozenset:
    out: set[int] = set()
    for tok in spec.split(","):
        tok = tok.strip().lower()
        if tok == "sky":
            out.add(SKY)
        elif tok == "green":
            out |= set(GREEN_CLASSES)
        elif tok.isdigit():
            out.add(int(tok))
        else:
            try:
                out.add(int(VoxelClass[tok.upper()]))
            except KeyError:
                raise ConfigError(f"unknown view target {tok!r}") from None
    return frozenset(out)


# --------------------------------------------------------------------------
# export

def _surface_layer(vg: VoxelGrid, layer: str) -> RasterLayer:
    s = vg.surface_index()
    r, c = np.indices(s.shape)
    if layer == "landcover":
        vals = np.where(s >= 0, vg.voxels[r, c, np.maximum(s, 0)], CATEGORICAL_NODATA)
        return RasterLayer(vg.grid, vals.astype(np.int32), "categorical", CATEGORICAL_NODATA)
    solid = vg.voxels != VoxelClass.VOID
    top = np.where(solid.any(axis=2), vg.n_z - np.argmax(solid[:, :, ::-1], axis=2), 0)
    if layer == "elevation":
        vals = vg.base_elevation_m + (s + 1) * vg.voxel_size_m
        return RasterLayer(vg.grid, np.where(s >= 0, vals, CONTINUOUS_NODATA))
    if layer == "height":
        return RasterLayer(vg.grid, np.maximum(top - (s + 1), 0) * vg.voxel_size_m)
    raise ConfigError(f"unknown layer {layer!r}")


def cmd_export(cfg: RunConfig, args) -> int:
    vg = _load_model(cfg, args)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(cfg.model_name).stem
    for fmt in args.format.split(","):
        fmt = fmt.strip()
        if fmt == "obj":
            mesh = to_mesh(vg, greedy=args.greedy)
            obj, mtl = write_obj(mesh, f"{stem}.mtl")
            (out / f"{stem}.obj").write_text(obj)
            (out / f"{stem}.mtl").write_text(mtl)
            print(f"wrote {out / (stem + '.obj')} ({len(mesh.vertices)} vertices, "
                  f"{mesh.n_faces} faces) and {out / (stem + '.mtl')}")
        elif fmt == "vox":
            (out / f"{stem}.vox").write_bytes(write_vox(vg))
            print(f"wrote {out / (stem + '.vox')}")
        elif fmt == "png":
            layer = _surface_layer(vg, args.layer)
            data = (write_categorical_png(layer) if layer.kind == "categorical"
                    else write_heatmap_png(layer))
            path = out / f"{stem}_{args.layer}.png"
            path.write_bytes(data)
            print(f"wrote {path}")
        else:
            raise ConfigError(f"unknown export format {fmt!r}")
    return EXIT_OK


# --------------------------------------------------------------------------
# fetch

def cmd_fetch(cfg: RunConfig, args) -> int:
    bbox = cfg.require_bbox()
    try:
        make_grid(bbox, 1e-3)
    except ValueError as exc:
        raise ConfigError(f"invalid bbox: {exc}") from None
    text = fetch_osm_buildings(bbox, cfg.endpoint, cfg.timeout_s)
    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    n = len(json.loads(text)["features"])
    print(f"wrote {n} building footprints to {path}")
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", help="config file (section.key = value lines)")
    common.add_argument("--model", help="model file (default: output.dir/output.model)")
    common.add_argument("-v", "--verbose", action="store_true")
    keys = common.add_argument_group("config overrides")
    for key, (_, default, help_) in KEYS.items():
        keys.add_argument(f"--{key}", dest=key, metavar="VALUE",
                          help=f"{help_} (default: {default})")

    p = argparse.ArgumentParser(prog="urbanvox", description="Voxel city models and "
                                "solar / view simulations from open geodata.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fetch", parents=[common], help="download OSM building footprints")
    f.add_argument("--bbox", dest="area.bbox", metavar="LAT0,LON0,LAT1,LON1")
    f.add_argument("--out", required=True, help="output GeoJSON path")

    sub.add_parser("generate", parents=[common], help="build the voxel model")

    s = sub.add_parser("simulate", parents=[common], help="run a simulation on the model")
    s.add_argument("kind", choices=["solar-instant", "solar-cumulative", "view", "landmark"])
    s.add_argument("--edges", help="GeoJSON LineStrings to aggregate results along (CSV)")
    s.add_argument("--stat", choices=["mean", "max", "min"], default="mean")
    s.add_argument("--epw", help="weather file (overrides inputs.epw)")
    s.add_argument("--time", help="solar-instant: local standard time, YYYY-MM-DDTHH:MM")
    s.add_argument("--tz", type=float, help="solar-instant: UTC offset in hours")
    s.add_argument("--dni", type=float, help="solar-instant: direct normal irradiance (W/m2)")
    s.add_argument("--dhi", type=float, help="solar-instant: diffuse horizontal irradiance")
    s.add_argument("--start", help="solar-cumulative: first day, MM-DD")
    s.add_argument("--end", help="solar-cumulative: last day (inclusive), MM-DD")
    s.add_argument("--target", default="green",
                   help="view: comma list of 'green', 'sky', class names or codes")
    s.add_argument("--vmin", type=float, default=-30.0)
    s.add_argument("--vmax", type=float, default=30.0)
    s.add_argument("--step", type=float, default=6.0)
    s.add_argument("--ids", help="landmark: comma list of footprint ids")

    e = sub.add_parser("export", parents=[common], help="write OBJ/MTL, VOX or PNG files")
    e.add_argument("--format", required=True, help="obj, vox, png, or a comma list")
    e.add_argument("--layer", default="landcover", choices=["landcover", "elevation", "height"])
    e.add_argument("--greedy", action="store_true", help="merge coplanar faces in OBJ output")
    return p


COMMANDS = {"fetch": cmd_fetch, "generate": cmd_generate, "simulate": cmd_simulate,
            "export": cmd_export}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = {k: getattr(args, k, None) for k in KEYS}
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OverpassError as exc:
        print(f"network error: {exc}", file=sys.stderr)
        return EXIT_NETWORK
    except StageError as exc:
        inner = exc.exc
        if isinstance(inner, OverpassError):
            code = EXIT_NETWORK
        elif isinstance(inner, (ValueError, KeyError, OSError, ParseError, ExportError,
                                ModelFormatError)):
            code = EXIT_CONFIG
        else:
            code = EXIT_INTERNAL
        msg = inner.args[0] if isinstance(inner, KeyError) and inner.args else inner
        print(f"error in stage '{exc.stage}': {msg}", file=sys.stderr)
        return code
    except (ExportError, ModelFormatError, ParseError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
