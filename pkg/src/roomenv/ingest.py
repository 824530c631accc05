"""Bit-exact reader/writer for the frame-bundle directory format.

One directory per frame: a UTF-8 meta.json manifest plus flat binary
rasters (row-major, interleaved channels, little-endian). The same layout,
extended with two extra rasters, stores envelope samples. Also provides
PLY export/import and 16-bit depth-PNG export.

meta.json schema (version 1):

    {
      "schema_version": 1,
      "kind": "frame" | "envelope",
      "scene_id": "...", "frame_id": "...",
      "metres_per_unit": 1.0,
      "camera": {"fx":..., "fy":..., "cx":..., "cy":...,
                 "width":..., "height":...,
                 "world_to_camera": [16 floats, row-major],
                 "convention": "YDownZForward" | "YUpZBack"},
      "rasters": [{"name": "rgb", "file": "rgb.u8", "dtype": "uint8",
                   "shape": [H, W, 3], "byte_order": "little",
                   "sha256": "..."}, ...]
    }

All coordinates are multiplied by metres_per_unit on read, so in-memory
data is always metres. Invalid pixels may be flagged by valid=0, by NaN in
the pointmap, or both; the reader honors either encoding.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .aggregate import AttributedPointCloud
from .core import AxisConvention, CameraModel, FrameBundle, world_to_canonical_camera
from .envelope import EnvelopeSample

SCHEMA_VERSION = 1


class IngestError(Exception):
    pass


class MissingFile(IngestError):
    pass


class ShapeMismatch(IngestError):
    pass


class BadChecksum(IngestError):
    pass


class UnsupportedSchema(IngestError):
    pass


class Io(IngestError):
    pass


_DTYPES = {"uint8": np.uint8, "uint16": np.uint16, "float32": np.float32}
_FRAME_RASTERS = [
    ("rgb", "rgb.u8", "uint8", 3),
    ("pointmap", "pointmap.f32", "float32", 3),
    ("normals", "normals.f32", "float32", 3),
    ("labels", "labels.u16", "uint16", None),
    ("valid", "valid.u8", "uint8", None),
]
_ENVELOPE_RASTERS = [
    ("rgb", "rgb.u8", "uint8", 3),
    ("pointmap", "pointmap.f32", "float32", 3),
    ("valid", "valid.u8", "uint8", None),
    ("layout_pointmap", "layout_pointmap.f32", "float32", 3),
    ("layout_valid", "layout_valid.u8", "uint8", None),
    ("layout_label", "layout_label.u16", "uint16", None),
]


def _camera_to_json(cam: CameraModel) -> dict:
    return {
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "width": cam.width, "height": cam.height,
        "world_to_camera": [float(x) for x in np.asarray(cam.world_to_camera).ravel()],
        "convention": cam.convention.value,
    }


def _camera_from_json(d: dict, metres_per_unit: float = 1.0) -> CameraModel:
    T = np.array(d["world_to_camera"], dtype=np.float64).reshape(4, 4)
    T[:3, 3] *= metres_per_unit
    return CameraModel(
        fx=float(d["fx"]), fy=float(d["fy"]), cx=float(d["cx"]), cy=float(d["cy"]),
        width=int(d["width"]), height=int(d["height"]),
        world_to_camera=T,
        convention=AxisConvention(d["convention"]),
    )


def _write_raster(path: Path, arr: np.ndarray, dtype: str) -> dict:
    data = np.ascontiguousarray(arr.astype(_DTYPES[dtype], copy=False))
    raw = data.astype(data.dtype.newbyteorder("<"), copy=False).tobytes()
    path.write_bytes(raw)
    return {
        "file": path.name,
        "dtype": dtype,
        "shape": list(data.shape),
        "byte_order": "little",
        "sha256": hashlib.sha256(raw).hexdigest(),
    }


def _read_raster(dir_path: Path, desc: dict, expect_hw: tuple[int, int], channels) -> np.ndarray:
    path = dir_path / desc["file"]
    if not path.exists():
        raise MissingFile(f"missing raster file {path}")
    dtype = desc["dtype"]
    if dtype not in _DTYPES:
        raise UnsupportedSchema(f"unsupported raster dtype {dtype!r} in {path.name}")
    shape = tuple(desc["shape"])
    expect_shape = expect_hw if channels is None else expect_hw + (channels,)
    if shape != expect_shape:
        raise ShapeMismatch(
            f"{path.name} declares shape {shape}, camera requires {expect_shape}"
        )
    byte_order = desc.get("byte_order", "little")
    if byte_order not in ("little", "big"):
        raise UnsupportedSchema(f"unknown byte_order {byte_order!r} in {path.name}")
    raw = path.read_bytes()
    np_dtype = np.dtype(_DTYPES[dtype]).newbyteorder("<" if byte_order == "little" else ">")
    expected_bytes = int(np.prod(shape)) * np_dtype.itemsize
    if len(raw) != expected_bytes:
        raise ShapeMismatch(
            f"{path.name} holds {len(raw)} bytes, manifest declares {expected_bytes}"
        )
    if "sha256" in desc:
        digest = hashlib.sha256(raw).hexdigest()
        if digest != desc["sha256"]:
            raise BadChecksum(f"{path.name}: sha256 {digest} != declared {desc['sha256']}")
    arr = np.frombuffer(raw, dtype=np_dtype).reshape(shape)
    return arr.astype(_DTYPES[dtype])  # native byte order copy


def _read_meta(dir_path: Path) -> dict:
    meta_path = dir_path / "meta.json"
    if not meta_path.exists():
        raise MissingFile(f"missing manifest {meta_path}")
    meta = json.loads(meta_path.read_text("utf-8"))
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise UnsupportedSchema(
            f"schema_version {meta.get('schema_version')!r}, expected {SCHEMA_VERSION}"
        )
    mpu = float(meta.get("metres_per_unit", 1.0))
    if mpu <= 0:
        raise UnsupportedSchema(f"metres_per_unit must be positive, got {mpu}")
    return meta


def _load_rasters(dir_path: Path, meta: dict, spec) -> dict:
    cam = meta["camera"]
    hw = (int(cam["height"]), int(cam["width"]))
    by_name = {r["name"]: r for r in meta["rasters"]}
    out = {}
    for name, _file, _dtype, channels in spec:
        if name not in by_name:
            raise MissingFile(f"manifest lists no raster named {name!r}")
        out[name] = _read_raster(dir_path, by_name[name], hw, channels)
    return out


def read_frame(dir_path) -> FrameBundle:
    """Read and validate a frame-bundle directory; output is in metres."""
    dir_path = Path(dir_path)
    meta = _read_meta(dir_path)
    mpu = float(meta.get("metres_per_unit", 1.0))
    r = _load_rasters(dir_path, meta, _FRAME_RASTERS)
    pointmap = r["pointmap"] * np.float32(mpu) if mpu != 1.0 else r["pointmap"]
    valid = (r["valid"] != 0) & np.isfinite(pointmap).all(axis=-1)
    frame = FrameBundle(
        camera=_camera_from_json(meta["camera"], mpu),
        rgb=r["rgb"],
        pointmap=pointmap,
        normals=r["normals"],
        labels=r["labels"],
        valid=valid,
        scene_id=meta.get("scene_id", ""),
        frame_id=meta.get("frame_id", ""),
    )
    frame.validate()
    return frame


def write_frame(frame: FrameBundle, dir_path) -> None:
    """Write a frame bundle; read_frame(write_frame(f)) is bit-identical."""
    dir_path = Path(dir_path)
    try:
        dir_path.mkdir(parents=True, exist_ok=True)
        rasters = []
        for name, fname, dtype, _c in _FRAME_RASTERS:
            arr = getattr(frame, name)
            if name == "valid":
                arr = arr.astype(np.uint8)
            desc = _write_raster(dir_path / fname, arr, dtype)
            desc["name"] = name
            rasters.append(desc)
        meta = {
            "schema_version": SCHEMA_VERSION,
            "kind": "frame",
            "scene_id": frame.scene_id,
            "frame_id": frame.frame_id,
            "metres_per_unit": 1.0,
            "camera": _camera_to_json(frame.camera),
            "rasters": rasters,
        }
        (dir_path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True), "utf-8")
    except OSError as e:
        raise Io(str(e)) from e


def read_envelope(dir_path) -> EnvelopeSample:
    """Read an envelope-sample directory; output is in metres."""
    dir_path = Path(dir_path)
    meta = _read_meta(dir_path)
    mpu = float(meta.get("metres_per_unit", 1.0))
    r = _load_rasters(dir_path, meta, _ENVELOPE_RASTERS)
    scale = np.float32(mpu)
    vis_pm = r["pointmap"] * scale if mpu != 1.0 else r["pointmap"]
    lay_pm = r["layout_pointmap"] * scale if mpu != 1.0 else r["layout_pointmap"]
    return EnvelopeSample(
        camera=_camera_from_json(meta["camera"], mpu),
        rgb=r["rgb"],
        visible_pointmap=vis_pm,
        visible_valid=(r["valid"] != 0) & np.isfinite(vis_pm).all(axis=-1),
        layout_pointmap=lay_pm,
        layout_valid=(r["layout_valid"] != 0) & np.isfinite(lay_pm).all(axis=-1),
        layout_label=r["layout_label"],
        scene_id=meta.get("scene_id", ""),
        frame_id=meta.get("frame_id", ""),
    )


def write_envelope(sample: EnvelopeSample, dir_path) -> None:
    """Write an envelope sample; round trip through read_envelope is exact."""
    dir_path = Path(dir_path)
    arrays = {
        "rgb": sample.rgb,
        "pointmap": sample.visible_pointmap,
        "valid": sample.visible_valid.astype(np.uint8),
        "layout_pointmap": sample.layout_pointmap,
        "layout_valid": sample.layout_valid.astype(np.uint8),
        "layout_label": sample.layout_label,
    }
    try:
        dir_path.mkdir(parents=True, exist_ok=True)
        rasters = []
        for name, fname, dtype, _c in _ENVELOPE_RASTERS:
            desc = _write_raster(dir_path / fname, arrays[name], dtype)
            desc["name"] = name
            rasters.append(desc)
        meta = {
            "schema_version": SCHEMA_VERSION,
            "kind": "envelope",
            "scene_id": sample.scene_id,
            "frame_id": sample.frame_id,
            "metres_per_unit": 1.0,
            "camera": _camera_to_json(sample.camera),
            "rasters": rasters,
        }
        (dir_path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True), "utf-8")
    except OSError as e:
        raise Io(str(e)) from e


# ---------------------------------------------------------------------------
# PLY export / import

_PLY_PROPS = [
    ("x", "f4"), ("y", "f4"), ("z", "f4"),
    ("nx", "f4"), ("ny", "f4"), ("nz", "f4"),
    ("red", "u1"), ("green", "u1"), ("blue", "u1"),
    ("label", "u2"),
]
_PLY_TYPE_NAMES = {"f4": "float", "u1": "uchar", "u2": "ushort"}


def _cloud_to_struct(cloud: AttributedPointCloud) -> np.ndarray:
    rec = np.empty(len(cloud), dtype=[(n, "<" + t) for n, t in _PLY_PROPS])
    rec["x"], rec["y"], rec["z"] = cloud.positions.T.astype(np.float32)
    rec["nx"], rec["ny"], rec["nz"] = cloud.normals.T.astype(np.float32)
    rec["red"], rec["green"], rec["blue"] = cloud.colors.T
    rec["label"] = cloud.labels
    return rec


def write_ply(cloud: AttributedPointCloud, path, binary: bool = True) -> None:
    """Write the cloud as PLY, binary-little-endian or ASCII."""
    path = Path(path)
    rec = _cloud_to_struct(cloud)
    fmt = "binary_little_endian" if binary else "ascii"
    header = ["ply", f"format {fmt} 1.0", f"element vertex {len(rec)}"]
    header += [f"property {_PLY_TYPE_NAMES[t]} {n}" for n, t in _PLY_PROPS]
    header.append("end_header")
    try:
        with open(path, "wb") as f:
            f.write(("\n".join(header) + "\n").encode("ascii"))
            if binary:
                f.write(rec.tobytes())
            else:
                for row in rec:
                    vals = [repr(float(row[n])) if t == "f4" else str(int(row[n]))
                            for n, t in _PLY_PROPS]
                    f.write((" ".join(vals) + "\n").encode("ascii"))
    except OSError as e:
        raise Io(str(e)) from e


def read_ply(path) -> AttributedPointCloud:
    """Read a PLY written by write_ply (either format)."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"missing PLY file {path}")
    with open(path, "rb") as f:
        line = f.readline().strip()
        if line != b"ply":
            raise UnsupportedSchema(f"{path.name} is not a PLY file")
        binary = True
        count = 0
        props = []
        while True:
            line = f.readline()
            if not line:
                raise UnsupportedSchema(f"{path.name}: truncated header")
            line = line.strip()
            if line.startswith(b"format"):
                if b"ascii" in line:
                    binary = False
                elif b"binary_little_endian" not in line:
                    raise UnsupportedSchema(f"{path.name}: unsupported PLY format {line!r}")
            elif line.startswith(b"element vertex"):
                count = int(line.split()[-1])
            elif line.startswith(b"property"):
                props.append(line.split()[-1].decode())
            elif line == b"end_header":
                break
        expected = [n for n, _ in _PLY_PROPS]
        if props != expected:
            raise UnsupportedSchema(f"{path.name}: properties {props}, expected {expected}")
        dtype = np.dtype([(n, "<" + t) for n, t in _PLY_PROPS])
        if binary:
            rec = np.frombuffer(f.read(count * dtype.itemsize), dtype=dtype, count=count)
        else:
            rec = np.empty(count, dtype=dtype)
            for i in range(count):
                parts = f.readline().split()
                for (n, t), val in zip(_PLY_PROPS, parts):
                    rec[n][i] = float(val) if t == "f4" else int(val)
    return AttributedPointCloud(
        positions=np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64),
        colors=np.stack([rec["red"], rec["green"], rec["blue"]], axis=1),
        normals=np.stack([rec["nx"], rec["ny"], rec["nz"]], axis=1).astype(np.float32),
        labels=np.asarray(rec["label"]),
    )


# ---------------------------------------------------------------------------
# Depth PNG export (16-bit, millimetres, 0 = invalid)


def write_depth_png(pointmap: np.ndarray, valid: np.ndarray, cam: CameraModel, path) -> None:
    """Write camera-frame depth as a 16-bit grayscale PNG in millimetres."""
    h, w = valid.shape
    depth_mm = np.zeros((h, w), dtype=np.uint16)
    v = valid.astype(bool)
    if v.any():
        z = world_to_canonical_camera(pointmap[v], cam)[:, 2]
        mm = np.clip(np.round(z * 1000.0), 1, 65535).astype(np.uint16)
        depth_mm[v] = mm
    Image.fromarray(depth_mm).save(Path(path))


def read_depth_png(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a depth PNG back to (depth in metres, valid mask)."""
    arr = np.asarray(Image.open(Path(path))).astype(np.uint16)
    valid = arr > 0
    return arr.astype(np.float64) / 1000.0, valid
