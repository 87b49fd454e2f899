"""Writers for voxel models and result maps: OBJ/MTL, MagicaVoxel VOX, a binary
model container, and PNG heatmaps."""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from PIL import Image

from .geogrid import GridSpec, RasterLayer, make_grid
from .voxelizer import VoxelClass, VoxelGrid

RGBA = tuple[int, int, int, int]

DEFAULT_PALETTE: dict[int, RGBA] = {
    VoxelClass.VOID: (0, 0, 0, 0),
    VoxelClass.BARELAND: (186, 160, 120, 255),
    VoxelClass.RANGELAND: (150, 200, 90, 255),
    VoxelClass.SHRUB: (110, 150, 60, 255),
    VoxelClass.AGRICULTURE_LAND: (230, 200, 80, 255),
    VoxelClass.TREE_COVER: (40, 120, 40, 255),
    VoxelClass.MOSS_AND_LICHEN: (170, 190, 150, 255),
    VoxelClass.WETLAND: (90, 160, 150, 255),
    VoxelClass.MANGROVE: (20, 100, 80, 255),
    VoxelClass.WATER: (60, 110, 200, 255),
    VoxelClass.SNOW_AND_ICE: (240, 245, 250, 255),
    VoxelClass.DEVELOPED_SPACE: (160, 160, 160, 255),
    VoxelClass.ROAD: (90, 90, 95, 255),
    VoxelClass.BUILDING_LAND: (200, 130, 110, 255),
    VoxelClass.NO_DATA: (255, 0, 255, 255),
    VoxelClass.BUILDING: (210, 205, 195, 255),
    VoxelClass.TREE: (30, 160, 50, 255),
    VoxelClass.LANDMARK: (230, 60, 40, 255),
    VoxelClass.TERRAIN: (120, 90, 60, 255),
}


class ExportError(ValueError):
    pass


class ModelFormatError(ValueError):
    """Unreadable model container (bad magic, unsupported version, truncation)."""


def _palette(palette: Mapping[int, RGBA] | None) -> dict[int, RGBA]:
    pal = dict(DEFAULT_PALETTE)
    if palette:
        pal.update({int(k): tuple(int(x) for x in v) for k, v in palette.items()})
    return pal


# --------------------------------------------------------------------------
# surface mesh

# direction -> (lattice axis, sign); lattice axes are (row, col, z)
DIRECTIONS = ((0, 1), (0, -1), (1, 1), (1, -1), (2, 1), (2, -1))


def _lattice_to_obj(p: np.ndarray, v: float) -> np.ndarray:
    """(row, col, z) lattice -> OBJ axes (+x east, +y up, +z south), metres."""
    return np.stack([p[..., 1], p[..., 2], p[..., 0]], axis=-1) * v


def _face_corners(axis: int, sign: int) -> np.ndarray:
    """Unit-cube corner offsets of a face, counter-clockwise seen from outside in OBJ axes."""
    u, w = [a for a in range(3) if a != axis]
    base = np.zeros(3, dtype=np.int64)
    if sign > 0:
        base[axis] = 1
    quad = []
    for du, dw in ((0, 0), (1, 0), (1, 1), (0, 1)):
        c = base.copy()
        c[u] += du
        c[w] += dw
        quad.append(c)
    quad = np.array(quad)
    obj = _lattice_to_obj(quad.astype(float), 1.0)
    normal = np.cross(obj[1] - obj[0], obj[2] - obj[0])
    outward = np.zeros(3)
    outward[axis] = sign
    if normal @ _lattice_to_obj(outward, 1.0) < 0:
        quad = quad[::-1]
    return quad


_CORNERS = [_face_corners(a, s) for a, s in DIRECTIONS]


@dataclass
class MeshBuffer:
    vertices: np.ndarray          # (N, 3) metres, OBJ axes
    faces: np.ndarray             # (M, 4) 0-based vertex indices
    face_material: np.ndarray     # (M,) index into materials
    materials: list = field(default_factory=list)   # [(name, (r, g, b) in 0..1, class code)]

    @property
    def n_faces(self) -> int:
        return len(self.faces)


def _exposed(vox: np.ndarray, axis: int, sign: int) -> np.ndarray:
    solid = vox != VoxelClass.VOID
    open_nb = np.ones(vox.shape, dtype=bool)
    src = [slice(None)] * 3
    dst = [slice(None)] * 3
    if sign > 0:
        src[axis], dst[axis] = slice(0, -1), slice(1, None)
    else:
        src[axis], dst[axis] = slice(1, None), slice(0, -1)
    open_nb[tuple(src)] = vox[tuple(dst)] == VoxelClass.VOID
    return solid & open_nb


def _greedy_rects(labels: np.ndarray):
    """Greedy merge of equal non-zero labels in a 2D array into rectangles."""
    done = np.zeros(labels.shape, dtype=bool)
    n0, n1 = labels.shape
    for i in range(n0):
        for j in range(n1):
            lab = labels[i, j]
            if lab == 0 or done[i, j]:
                continue
            w = 1
            while j + w < n1 and labels[i, j + w] == lab and not done[i, j + w]:
                w += 1
            h = 1
            while i + h < n0 and np.all(labels[i + h, j:j + w] == lab) and not done[i + h, j:j + w].any():
                h += 1
            done[i:i + h, j:j + w] = True
            yield lab, i, j, h, w


def to_mesh(vg: VoxelGrid, palette: Mapping[int, RGBA] | None = None,
            greedy: bool = False) -> MeshBuffer:
    """Quad mesh of the faces between solid voxels and Void or the domain boundary.

    Faces are ordered by class code, then row-major voxel order, then
    direction; corner vertices are shared. ``greedy`` merges coplanar
    same-class faces into larger rectangles.
    """
    pal = _palette(palette)
    vox = vg.voxels
    quads, codes, keys = [], [], []
    for d, (axis, sign) in enumerate(DIRECTIONS):
        mask = _exposed(vox, axis, sign)
        if not greedy:
            idx = np.argwhere(mask)
            if len(idx):
                quads.append(idx[:, None, :] + _CORNERS[d][None, :, :])
                codes.append(vox[tuple(idx.T)].astype(np.int64))
                keys.append(np.column_stack([idx, np.full(len(idx), d)]))
            continue
        u, w = [a for a in range(3) if a != axis]
        for s in range(vox.shape[axis]):
            sl = [slice(None)] * 3
            sl[axis] = s
            labels = np.where(mask[tuple(sl)], vox[tuple(sl)], 0)
            for lab, i, j, h, wd in _greedy_rects(labels):
                corner = _CORNERS[d].copy()
                corner[:, u] *= h
                corner[:, w] *= wd
                origin = np.zeros(3, dtype=np.int64)
                origin[axis], origin[u], origin[w] = s, i, j
                quads.append((origin + corner)[None])
                codes.append(np.array([lab], dtype=np.int64))
                keys.append(np.array([[origin[0], origin[1], origin[2], d]]))
    if not quads:
        return MeshBuffer(np.zeros((0, 3)), np.zeros((0, 4), dtype=np.int64),
                          np.zeros(0, dtype=np.int64), [])
    quads = np.concatenate(quads)
    codes = np.concatenate(codes)
    keys = np.concatenate(keys)
    order = np.lexsort((keys[:, 3], keys[:, 2], keys[:, 1], keys[:, 0], codes))
    quads, codes = quads[order], codes[order]
    pts, inverse = np.unique(quads.reshape(-1, 3), axis=0, return_inverse=True)
    faces = inverse.reshape(-1, 4)
    classes = sorted(set(codes.tolist()))
    mat_index = {c: k for k, c in enumerate(classes)}
    materials = []
    for c in classes:
        r, g, b, _ = pal.get(c, (255, 255, 255, 255))
        name = VoxelClass(c).name.lower() if c in VoxelClass._value2member_map_ else f"class_{c}"
        materials.append((name, (r / 255.0, g / 255.0, b / 255.0), c))
    return MeshBuffer(_lattice_to_obj(pts.astype(float), vg.voxel_size_m), faces,
                      np.array([mat_index[c] for c in codes], dtype=np.int64), materials)


def write_obj(mesh: MeshBuffer, mtl_name: str = "model.mtl") -> tuple[str, str]:
    """OBJ and MTL text for a mesh; floats use 6 fixed decimals, LF line endings."""
    obj = ["# voxel surface mesh", "# axes: +x east, +y up, +z south; units: metres",
           f"mtllib {mtl_name}"]
    obj += [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in mesh.vertices]
    current = None
    for face, m in zip(mesh.faces, mesh.face_material):
        if m != current:
            obj.append(f"usemtl {mesh.materials[m][0]}")
            current = m
        obj.append("f " + " ".join(str(i + 1) for i in face))
    mtl = []
    for name, (r, g, b), _ in mesh.materials:
        mtl += [f"newmtl {name}", f"Kd {r:.6f} {g:.6f} {b:.6f}", ""]
    return "\n".join(obj) + "\n", "\n".join(mtl)


# --------------------------------------------------------------------------
# MagicaVoxel

VOX_MAX_DIM = 256


def _chunk(cid: bytes, content: bytes, children: bytes = b"") -> bytes:
    return cid + struct.pack("<ii", len(content), len(children)) + content + children


def write_vox(vg: VoxelGrid, palette: Mapping[int, RGBA] | None = None) -> bytes:
    """MagicaVoxel VOX (version 150) bytes of the model.

    VOX x runs east, y north and z up. Palette index ``i`` holds the colour of
    class code ``i``.
    """
    n_rows, n_cols, n_z = vg.shape
    if max(vg.shape) > VOX_MAX_DIM:
        raise ExportError(
            f"grid {vg.shape} exceeds the VOX limit of {VOX_MAX_DIM} voxels per axis; "
            "crop the area or use a coarser voxel size")
    pal = _palette(palette)
    idx = np.argwhere(vg.voxels != VoxelClass.VOID)
    codes = vg.voxels[tuple(idx.T)]
    xyzi = np.column_stack([idx[:, 1], n_rows - 1 - idx[:, 0], idx[:, 2], codes]).astype(np.uint8)
    size = _chunk(b"SIZE", struct.pack("<iii", n_cols, n_rows, n_z))
    body = _chunk(b"XYZI", struct.pack("<i", len(xyzi)) + xyzi.tobytes())
    rgba = bytearray(1024)
    for code, color in pal.items():
        if 1 <= code <= 255:
            rgba[(code - 1) * 4:(code - 1) * 4 + 4] = bytes(color)
    main = _chunk(b"MAIN", b"", size + body + _chunk(b"RGBA", bytes(rgba)))
    return b"VOX " + struct.pack("<i", 150) + main


def read_vox(data: bytes):
    """Inverse of :func:`write_vox`: (voxels[row, col, z], {code: rgba})."""
    if data[:4] != b"VOX ":
        raise ExportError("not a VOX file")
    if struct.unpack_from("<i", data, 4)[0] != 150:
        raise ExportError("unsupported VOX version")
    pos = 8
    if data[pos:pos + 4] != b"MAIN":
        raise ExportError("missing MAIN chunk")
    n_content, n_children = struct.unpack_from("<ii", data, pos + 4)
    pos += 12 + n_content
    end = pos + n_children
    if end != len(data):
        raise ExportError("MAIN chunk size does not match file length")
    dims = xyzi = None
    colors: dict[int, RGBA] = {}
    while pos < end:
        cid = data[pos:pos + 4]
        n_content, n_children = struct.unpack_from("<ii", data, pos + 4)
        content = data[pos + 12:pos + 12 + n_content]
        if len(content) != n_content:
            raise ExportError(f"truncated {cid!r} chunk")
        if cid == b"SIZE":
            dims = struct.unpack("<iii", content)
        elif cid == b"XYZI":
            n = struct.unpack_from("<i", content)[0]
            if 4 + 4 * n != n_content:
                raise ExportError("XYZI size mismatch")
            xyzi = np.frombuffer(content, dtype=np.uint8, offset=4).reshape(n, 4)
        elif cid == b"RGBA":
            for i in range(255):
                colors[i + 1] = tuple(content[i * 4:i * 4 + 4])
        pos += 12 + n_content + n_children
    if dims is None or xyzi is None:
        raise ExportError("VOX file lacks SIZE or XYZI")
    n_cols, n_rows, n_z = dims
    vox = np.zeros((n_rows, n_cols, n_z), dtype=np.uint8)
    x, y, z, c = (xyzi[:, k].astype(np.int64) for k in range(4))
    vox[n_rows - 1 - y, x, z] = c
    return vox, colors


# --------------------------------------------------------------------------
# model container

MODEL_MAGIC = b"UVXM"
MODEL_VERSION = 1
FLAG_RLE = 1
_HEADER = struct.Struct("<4sHH6d3I")


def _rle_encode(flat: np.ndarray) -> bytes:
    if flat.size == 0:
        return b""
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    starts = np.concatenate([[0], change])
    lengths = np.diff(np.concatenate([starts, [flat.size]]))
    rec = np.zeros(len(starts), dtype=[("n", "<u4"), ("v", "u1")])
    rec["n"] = lengths
    rec["v"] = flat[starts]
    return rec.tobytes()


def _rle_decode(payload: bytes, size: int) -> np.ndarray:
    if len(payload) % 5:
        raise ModelFormatError("corrupt run-length payload")
    rec = np.frombuffer(payload, dtype=[("n", "<u4"), ("v", "u1")])
    if int(rec["n"].sum()) != size:
        raise ModelFormatError("run lengths do not match grid size")
    return np.repeat(rec["v"], rec["n"].astype(np.int64))


def write_model(vg: VoxelGrid, palette: Mapping[int, RGBA] | None = None,
                rle: bool = True) -> bytes:
    """Serialize a voxel grid to the versioned binary container.

    Layout (little-endian): magic ``UVXM``, u16 version, u16 flags,
    f64 lat_min/lat_max/lon_min/lon_max/voxel_size/base_elevation,
    u32 n_rows/n_cols/n_z, u16 palette size and (u8 code, 4 x u8 RGBA) entries,
    u64 payload length, payload. The payload is the C-order ``uint8`` voxel
    array, or (u32 run, u8 value) records when flag bit 0 is set.
    """
    g = vg.grid
    pal = _palette(palette)
    flat = vg.voxels.reshape(-1)
    payload = _rle_encode(flat) if rle else flat.tobytes()
    out = [_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, FLAG_RLE if rle else 0,
                        g.lat_min, g.lat_max, g.lon_min, g.lon_max, g.voxel_size_m,
                        vg.base_elevation_m, g.n_rows, g.n_cols, vg.n_z)]
    out.append(struct.pack("<H", len(pal)))
    for code in sorted(pal):
        out.append(struct.pack("<B4B", code, *pal[code]))
    out.append(struct.pack("<Q", len(payload)))
    out.append(payload)
    return b"".join(out)


def read_model(data: bytes, with_palette: bool = False):
    """Inverse of :func:`write_model`."""
    if len(data) < _HEADER.size:
        raise ModelFormatError("truncated header")
    magic, version, flags, la0, la1, lo0, lo1, vs, base, nr, nc, nz = _HEADER.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise ModelFormatError("bad magic; not a model file")
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    pos = _HEADER.size
    try:
        (n_pal,) = struct.unpack_from("<H", data, pos)
        pos += 2
        pal = {}
        for _ in range(n_pal):
            code, r, g, b, a = struct.unpack_from("<B4B", data, pos)
            pal[code] = (r, g, b, a)
            pos += 5
        (n_payload,) = struct.unpack_from("<Q", data, pos)
        pos += 8
    except struct.error:
        raise ModelFormatError("truncated header") from None
    payload = data[pos:pos + n_payload]
    if len(payload) != n_payload or pos + n_payload != len(data):
        raise ModelFormatError("payload length does not match file size")
    grid = make_grid((la0, lo0, la1, lo1), vs)
    if grid.shape != (nr, nc):
        raise ModelFormatError("stored grid dimensions disagree with the bounding box")
    size = nr * nc * nz
    if flags & FLAG_RLE:
        flat = _rle_decode(payload, size)
    else:
        if len(payload) != size:
            raise ModelFormatError("raw payload size mismatch")
        flat = np.frombuffer(payload, dtype=np.uint8)
    vg = VoxelGrid(grid, flat.reshape(nr, nc, nz).copy(), base)
    return (vg, pal) if with_palette else vg


# --------------------------------------------------------------------------
# PNG

RAMPS = {
    "grey": np.array([[0, 0, 0], [255, 255, 255]], dtype=float),
    "heat": np.array([[20, 20, 90], [40, 110, 200], [90, 200, 120], [250, 220, 60],
                      [230, 60, 30]], dtype=float),
    "green": np.array([[245, 245, 235], [120, 190, 90], [10, 90, 30]], dtype=float),
}
NODATA_RGB = (128, 128, 128)


def heatmap_rgb(layer: RasterLayer, ramp: str = "heat",
                vrange: tuple[float, float] | None = None) -> np.ndarray:
    if ramp not in RAMPS:
        raise ValueError(f"unknown color ramp {ramp!r}")
    mask = layer.mask
    vals = layer.values
    if vrange is None:
        lo, hi = (float(vals[mask].min()), float(vals[mask].max())) if mask.any() else (0.0, 1.0)
    else:
        lo, hi = map(float, vrange)
        if not hi > lo:
            raise ValueError("color range must have positive width")
    frac = np.zeros(vals.shape) if hi == lo else np.clip((vals - lo) / (hi - lo), 0.0, 1.0)
    stops = RAMPS[ramp]
    pos = np.linspace(0.0, 1.0, len(stops))
    rgb = np.stack([np.interp(frac, pos, stops[:, k]) for k in range(3)], axis=-1)
    rgb = np.round(rgb).astype(np.uint8)
    rgb[~mask] = NODATA_RGB
    return rgb


def _png(rgb: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(rgb, "RGB").save(buf, format="PNG")
    return buf.getvalue()


def write_heatmap_png(layer, ramp: str = "heat",
                      vrange: tuple[float, float] | None = None) -> bytes:
    """8-bit RGB PNG, one pixel per cell, row 0 at the top; nodata is grey.

    Accepts a RasterLayer or anything with a ``global_`` layer (irradiance
    maps). Without ``vrange`` the data range is used; a constant map renders
    in the ramp's first colour.
    """
    if not isinstance(layer, RasterLayer):
        layer = layer.global_
    return _png(heatmap_rgb(layer, ramp, vrange))


def write_categorical_png(layer: RasterLayer, palette: Mapping[int, RGBA] | None = None) -> bytes:
    pal = _palette(palette)
    rgb = np.empty(layer.values.shape + (3,), dtype=np.uint8)
    rgb[:] = NODATA_RGB
    for code in np.unique(layer.values[layer.mask]):
        rgb[layer.values == code] = pal.get(int(code), (255, 255, 255, 255))[:3]
    return _png(rgb)
