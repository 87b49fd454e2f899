"""Run configuration: a flat ``section.key = value`` text file.

Lines starting with ``#`` are comments. Relative paths are resolved against
the directory of the config file. Every key can also be given on the command
line as ``--section.key VALUE``, which takes precedence over the file.

Example::

    area.bbox = 35.680, 139.760, 35.685, 139.766   # lat_min, lon_min, lat_max, lon_max
    area.voxel_size = 5
    inputs.footprints = buildings.geojson
    inputs.dem = dem.asc
    output.dir = out
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .ingest import TreeOpticalParams
from .solar import ObserverConfig


class ConfigError(ValueError):
    pass


# key -> (type, default, help)
KEYS: dict[str, tuple[str, Any, str]] = {
    "area.bbox": ("floats4", None, "lat_min, lon_min, lat_max, lon_max in degrees"),
    "area.voxel_size": ("float", 5.0, "voxel edge length in metres"),
    "inputs.footprints": ("path", None, "GeoJSON building footprints"),
    "inputs.complementary": ("path", None, "GeoJSON footprints used to fill missing heights"),
    "inputs.canopy": ("path", None, "canopy height ASCII grid (m)"),
    "inputs.landcover": ("path", None, "land-cover ASCII grid"),
    "inputs.landcover_source": ("str", "harmonized",
                                "ESA, Esri or DW raw codes, or 'harmonized' codes 1-14"),
    "inputs.landcover_default": ("int", 11, "class code used where no land cover is given"),
    "inputs.dem": ("path", None, "terrain elevation ASCII grid (m)"),
    "inputs.epw": ("path", None, "EnergyPlus weather file"),
    "inputs.raster_units": ("str", "degrees",
                            "'degrees', or 'meters' east/north of the bbox corner"),
    "tree.extinction_coefficient": ("float", 0.5, "canopy extinction coefficient K"),
    "tree.leaf_area_density": ("float", 1.0, "leaf area density (m^2/m^3)"),
    "tree.trunk_height_ratio": ("float", 0.3, "canopy bottom as a fraction of tree height"),
    "observer.eye_height": ("float", 1.5, "observer eye height above ground (m)"),
    "observer.diffuse_rays": ("int", 145, "sky directions for diffuse irradiance"),
    "landmark.ids": ("list", (), "footprint ids recoded as landmarks"),
    "output.dir": ("path", "out", "output directory"),
    "output.model": ("str", "model.uvx", "model file name inside the output directory"),
    "network.endpoint": ("str", "https://overpass-api.de/api/interpreter", "Overpass endpoint"),
    "network.timeout": ("float", 60.0, "Overpass request timeout (s)"),
}


def _convert(key: str, raw: str) -> Any:
    kind = KEYS[key][0]
    raw = raw.strip()
    try:
        if kind == "float":
            return float(raw)
        if kind == "int":
            return int(raw)
        if kind == "floats4":
            vals = tuple(float(x) for x in raw.replace(",", " ").split())
            if len(vals) != 4:
                raise ValueError("expected four numbers")
            return vals
        if kind == "list":
            return tuple(x.strip() for x in raw.split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} ({exc})") from None
    return raw


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'section.key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


@dataclass
class RunConfig:
    bbox: tuple[float, float, float, float] | None = None
    voxel_size_m: float = 5.0
    footprints: Path | None = None
    complementary: Path | None = None
    canopy: Path | None = None
    landcover: Path | None = None
    landcover_source: str = "harmonized"
    landcover_default: int = 11
    dem: Path | None = None
    epw: Path | None = None
    raster_units: str = "degrees"
    tree: TreeOpticalParams = field(default_factory=TreeOpticalParams)
    observer: ObserverConfig = field(default_factory=ObserverConfig)
    landmark_ids: tuple[str, ...] = ()
    output_dir: Path = Path("out")
    model_name: str = "model.uvx"
    endpoint: str = KEYS["network.endpoint"][1]
    timeout_s: float = 60.0

    @property
    def model_path(self) -> Path:
        return self.output_dir / self.model_name

    def require_bbox(self) -> tuple[float, float, float, float]:
        if self.bbox is None:
            raise ConfigError("area.bbox is required")
        return self.bbox

    def validate(self) -> None:
        if not self.voxel_size_m > 0:
            raise ConfigError("area.voxel_size must be positive")
        if self.raster_units not in ("degrees", "meters"):
            raise ConfigError("inputs.raster_units must be 'degrees' or 'meters'")
        for name in ("footprints", "complementary", "canopy", "landcover", "dem", "epw"):
            p = getattr(self, name)
            if p is not None and not p.is_file():
                raise ConfigError(f"inputs.{name}: file not found: {p}")


def load_config(path: str | Path | None = None,
                overrides: Mapping[str, str] | None = None) -> RunConfig:
    """Merge the config file (if any) with command-line overrides and validate."""
    raw: dict[str, str] = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        raw.update(parse_config_text(path.read_text()))
        base = path.parent
    override_base = Path.cwd()
    values: dict[str, Any] = {}
    for key, (kind, default, _) in KEYS.items():
        if overrides and overrides.get(key) is not None:
            v, root = _convert(key, str(overrides[key])), override_base
        elif key in raw:
            v, root = _convert(key, raw[key]), base
        else:
            v, root = default, override_base
        if kind == "path" and v is not None:
            v = Path(v)
            v = v if v.is_absolute() else root / v
        values[key] = v
    try:
        tree = TreeOpticalParams(values["tree.extinction_coefficient"],
                                 values["tree.leaf_area_density"],
                                 values["tree.trunk_height_ratio"])
        observer = ObserverConfig(values["observer.eye_height"], values["observer.diffuse_rays"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cfg = RunConfig(
        bbox=values["area.bbox"], voxel_size_m=values["area.voxel_size"],
        footprints=values["inputs.footprints"], complementary=values["inputs.complementary"],
        canopy=values["inputs.canopy"], landcover=values["inputs.landcover"],
        landcover_source=values["inputs.landcover_source"],
        landcover_default=values["inputs.landcover_default"],
        dem=values["inputs.dem"], epw=values["inputs.epw"],
        raster_units=values["inputs.raster_units"], tree=tree, observer=observer,
        landmark_ids=tuple(values["landmark.ids"]), output_dir=values["output.dir"],
        model_name=values["output.model"], endpoint=values["network.endpoint"],
        timeout_s=values["network.timeout"])
    cfg.validate()
    return cfg
