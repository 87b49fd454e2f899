"""Overpass API client returning OSM building footprints as GeoJSON."""
from __future__ import annotations

import json
import logging
import threading
import time
from typing import Any

import requests
from shapely.geometry import LineString, MultiPolygon, Polygon, mapping
from shapely.ops import polygonize, unary_union

log = logging.getLogger(__name__)

DEFAULT_ENDPOINT = "https://overpass-api.de/api/interpreter"
METERS_PER_LEVEL = 3.0
ATTEMPTS = 3
BACKOFF_S = 1.0

_locks: dict[str, threading.Lock] = {}
_locks_guard = threading.Lock()


class OverpassError(RuntimeError):
    """Base class for Overpass failures."""


class OverpassHTTPError(OverpassError):
    def __init__(self, status: int, message: str = ""):
        self.status = status
        super().__init__(f"Overpass HTTP {status}{': ' + message if message else ''}")


class OverpassRateLimited(OverpassHTTPError):
    pass


class OverpassMalformed(OverpassError):
    pass


def _endpoint_lock(endpoint: str) -> threading.Lock:
    with _locks_guard:
        return _locks.setdefault(endpoint, threading.Lock())


def build_query(bbox: tuple[float, float, float, float], timeout_s: int = 60) -> str:
    """Overpass QL for buildings in (lat_min, lon_min, lat_max, lon_max)."""
    lat0, lon0, lat1, lon1 = bbox
    if not (-90 <= lat0 < lat1 <= 90 and -180 <= lon0 < lon1 <= 180):
        raise ValueError(f"invalid bbox {bbox}")
    b = f"{lat0},{lon0},{lat1},{lon1}"
    return (f"[out:json][timeout:{int(timeout_s)}];\n"
            f"(way[\"building\"]({b});relation[\"building\"][\"type\"=\"multipolygon\"]({b}););\n"
            "out geom;")


def _height_props(tags: dict[str, str]) -> dict[str, Any]:
    from .ingest import parse_height_tag

    props: dict[str, Any] = {}
    h = parse_height_tag(tags["height"]) if "height" in tags else None
    if h is None and "building:levels" in tags:
        try:
            h = float(tags["building:levels"]) * METERS_PER_LEVEL
        except ValueError:
            h = None
    if h is not None:
        props["height"] = h
    mh = parse_height_tag(tags["min_height"]) if "min_height" in tags else None
    if mh is None and "building:min_level" in tags:
        try:
            mh = float(tags["building:min_level"]) * METERS_PER_LEVEL
        except ValueError:
            mh = None
    if mh is not None:
        props["min_height"] = mh
    return props


def _coords(geom: list[dict]) -> list[tuple[float, float]]:
    return [(float(p["lon"]), float(p["lat"])) for p in geom]


def _relation_polygon(el: dict):
    outer, inner = [], []
    for m in el.get("members", []):
        if m.get("type") != "way" or not m.get("geometry"):
            continue
        line = LineString(_coords(m["geometry"]))
        (inner if m.get("role") == "inner" else outer).append(line)
    shells = list(polygonize(unary_union(outer))) if outer else []
    if not shells:
        return None
    poly = unary_union(shells)
    holes = list(polygonize(unary_union(inner))) if inner else []
    if holes:
        poly = poly.difference(unary_union(holes))
    return poly if not poly.is_empty else None


def elements_to_geojson(payload: dict) -> dict:
    """FeatureCollection from an Overpass JSON reply produced with ``out geom``."""
    if not isinstance(payload, dict) or not isinstance(payload.get("elements"), list):
        raise OverpassMalformed("reply lacks an 'elements' list")
    feats = []
    for el in payload["elements"]:
        try:
            kind = el["type"]
            tags = el.get("tags", {})
            if kind == "way":
                pts = _coords(el.get("geometry") or [])
                if len(pts) < 4 or pts[0] != pts[-1]:
                    continue
                geom = Polygon(pts)
            elif kind == "relation":
                geom = _relation_polygon(el)
                if geom is None:
                    continue
            else:
                continue
        except (KeyError, TypeError, ValueError) as exc:
            raise OverpassMalformed(f"bad element {el!r:.80}: {exc}") from None
        if not isinstance(geom, (Polygon, MultiPolygon)):
            continue
        props = {"osm_type": kind, "osm_id": el["id"], **_height_props(tags)}
        feats.append({"type": "Feature", "id": f"{kind}/{el['id']}", "properties": props,
                      "geometry": mapping(geom)})
    return {"type": "FeatureCollection", "features": feats}


def fetch_osm_buildings(bbox: tuple[float, float, float, float],
                        endpoint: str = DEFAULT_ENDPOINT, timeout_s: float = 60.0,
                        session: requests.Session | None = None,
                        backoff_s: float = BACKOFF_S) -> str:
    """OSM building footprints inside ``bbox`` as GeoJSON text.

    Retries up to three attempts with exponential backoff on network errors,
    5xx and rate-limit replies. At most one request per endpoint is in flight.
    """
    query = build_query(bbox, int(timeout_s))
    http = session or requests
    last: Exception | None = None
    for attempt in range(ATTEMPTS):
        if attempt:
            time.sleep(backoff_s * 2 ** (attempt - 1))
        try:
            with _endpoint_lock(endpoint):
                resp = http.post(endpoint, data={"data": query}, timeout=timeout_s)
        except requests.RequestException as exc:
            last = OverpassError(f"request failed: {exc}")
            log.warning("Overpass attempt %d failed: %s", attempt + 1, exc)
            continue
        if resp.status_code == 429:
            last = OverpassRateLimited(429, "rate limited")
            continue
        if resp.status_code >= 500:
            last = OverpassHTTPError(resp.status_code)
            continue
        if resp.status_code != 200:
            raise OverpassHTTPError(resp.status_code, resp.text[:200])
        try:
            payload = json.loads(resp.text)
        except json.JSONDecodeError as exc:
            raise OverpassMalformed(f"reply is not JSON: {exc.msg}") from None
        return json.dumps(elements_to_geojson(payload))
    assert last is not None
    raise last
