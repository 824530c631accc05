"""Per-frame conversion into the frame-bundle directory format.

Each bundle is a directory holding meta.json (schema version 1) plus flat
little-endian rasters. Pointmaps and camera translations are written in
Hypersim's native asset units with metres_per_unit set to the scene's
scale factor, so depth values survive conversion bit-for-bit and readers
recover metres by one multiplication.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .index import GEOMETRY_ASSETS, HypersimSceneIndex, UnknownSemanticId, _read_h5

SCHEMA_VERSION = 1

# Bundle semantic ids: structural layout classes plus a catch-all.
LABEL_VOID = 0
LABEL_WALL = 1
LABEL_FLOOR = 2
LABEL_CEILING = 3
LABEL_DOOR = 4
LABEL_WINDOW = 5
LABEL_OTHER = 10

# NYU40 ids used by Hypersim's semantic rasters -> bundle ids.
DEFAULT_REMAP = {
    -1: LABEL_VOID,  # unlabeled
    1: LABEL_WALL,
    2: LABEL_FLOOR,
    22: LABEL_CEILING,
    8: LABEL_DOOR,
    9: LABEL_WINDOW,
}
DEFAULT_REMAP_FALLBACK = LABEL_OTHER  # every other NYU40 id is non-structural

# Default horizontal field of view used by Hypersim when no per-scene
# projection matrix is available.
DEFAULT_FOV_X = math.pi / 3.0


def camera_intrinsics(index: HypersimSceneIndex) -> tuple[float, float, float, float]:
    """Pinhole (fx, fy, cx, cy) in the y-down pixel grid.

    With an OpenGL projection matrix M and w_clip = -z_cam, the pixel
    coordinates work out to

        u = (W*M00/2) * (x / -z) + W*(1 - M02)/2
        v = (H*M11/2) * (-y / -z) + H*(1 + M12)/2

    so tilted-lens offsets (nonzero M02/M12) become plain principal-point
    shifts. Without a matrix, a symmetric pinhole at the default fov.
    """
    w, h = index.width, index.height
    if index.m_proj is None:
        fx = (w / 2.0) / math.tan(DEFAULT_FOV_X / 2.0)
        return fx, fx, w / 2.0, h / 2.0
    m = index.m_proj
    fx = w * m[0, 0] / 2.0
    fy = h * m[1, 1] / 2.0
    cx = w * (1.0 - m[0, 2]) / 2.0
    cy = h * (1.0 + m[1, 2]) / 2.0
    return fx, fy, cx, cy


def _world_to_camera(traj, k: int) -> np.ndarray:
    """4x4 world-to-camera from the keyframe pose (translation in asset units)."""
    R = traj.orientations[k]  # camera-to-world
    t = traj.positions[k]
    T = np.eye(4)
    T[:3, :3] = R.T
    T[:3, 3] = -R.T @ t
    return T


def _remap_labels(semantic: np.ndarray, index: HypersimSceneIndex) -> np.ndarray:
    ids = np.unique(semantic)
    lut = {}
    for sid in ids:
        sid = int(sid)
        if sid in index.remap:
            lut[sid] = index.remap[sid]
        elif index.remap_default is not None:
            lut[sid] = index.remap_default
        else:
            raise UnknownSemanticId(
                f"semantic id {sid} has no remap entry; add \"{sid}\": <bundle id> "
                f"(or a \"default\" entry) to the remap table"
            )
    out = np.zeros(semantic.shape, dtype=np.uint16)
    for sid, dst in lut.items():
        out[semantic == sid] = dst
    return out


def _raster_entry(dir_path: Path, name: str, fname: str, arr: np.ndarray, dtype) -> dict:
    data = np.ascontiguousarray(arr.astype(dtype, copy=False))
    raw = data.astype(data.dtype.newbyteorder("<"), copy=False).tobytes()
    (dir_path / fname).write_bytes(raw)
    return {
        "name": name,
        "file": fname,
        "dtype": np.dtype(dtype).name,
        "shape": list(data.shape),
        "byte_order": "little",
        "sha256": hashlib.sha256(raw).hexdigest(),
    }


def convert_frame(index: HypersimSceneIndex, cam: str, k: int, out_dir) -> Path:
    """Convert one keyframe of one camera into a bundle directory.

    k indexes the camera trajectory (not the Hypersim frame id). Returns
    the bundle directory path.
    """
    traj = index.cameras[cam]
    fid = traj.frame_ids[k]
    assets = {a: _read_h5(index.frame_asset(cam, fid, a)) for a in GEOMETRY_ASSETS}
    color = _read_h5(index.frame_asset(cam, fid, "color"))

    rgb = np.clip(np.nan_to_num(color, nan=0.0), 0.0, 1.0)
    rgb = np.round(rgb * 255.0).astype(np.uint8)

    pointmap = assets["position"].astype(np.float32)  # asset units
    depth = assets["depth_meters"]
    normals_cam = assets["normal_cam"].astype(np.float64)

    # Hypersim stores camera-space normals (y up, z back); rotate to world.
    R = traj.orientations[k]
    normals = (normals_cam.reshape(-1, 3) @ R.T).reshape(normals_cam.shape)
    lengths = np.linalg.norm(normals, axis=-1, keepdims=True)
    normals = np.divide(normals, lengths, out=np.zeros_like(normals), where=lengths > 0)

    valid = (
        np.isfinite(pointmap).all(axis=-1)
        & np.isfinite(depth)
        & (depth > 0)
        & (lengths[..., 0] > 0)
    )
    labels = _remap_labels(assets["semantic"], index)

    fx, fy, cx, cy = camera_intrinsics(index)
    frame_id = f"{cam}.{fid:04d}"
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rasters = [
        _raster_entry(out_dir, "rgb", "rgb.u8", rgb, np.uint8),
        _raster_entry(out_dir, "pointmap", "pointmap.f32", pointmap, np.float32),
        _raster_entry(out_dir, "normals", "normals.f32", normals, np.float32),
        _raster_entry(out_dir, "labels", "labels.u16", labels, np.uint16),
        _raster_entry(out_dir, "valid", "valid.u8", valid, np.uint8),
    ]
    meta = {
        "schema_version": SCHEMA_VERSION,
        "kind": "frame",
        "scene_id": index.scene_id,
        "frame_id": frame_id,
        "metres_per_unit": index.meters_per_asset_unit,
        "camera": {
            "fx": fx, "fy": fy, "cx": cx, "cy": cy,
            "width": index.width, "height": index.height,
            "world_to_camera": [float(x) for x in _world_to_camera(traj, k).ravel()],
            "convention": "YUpZBack",
        },
        "rasters": rasters,
    }
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True), "utf-8")
    return out_dir


def convert_scene(index: HypersimSceneIndex, out_root) -> list[Path]:
    """Convert every keyframe of every camera; returns the bundle dirs."""
    out_root = Path(out_root)
    written = []
    for cam, traj in sorted(index.cameras.items()):
        for k, fid in enumerate(traj.frame_ids):
            dest = out_root / index.scene_id / cam / f"{fid:04d}"
            written.append(convert_frame(index, cam, k, dest))
    return written


def write_split_manifest(out_root, seed: int = 0) -> dict:
    """80/10/10 train/val/test split over the converted scenes.

    Deterministic under a fixed seed; scenes are whole units, never split
    across partitions. Rewrites manifest.json under out_root.
    """
    out_root = Path(out_root)
    scenes = sorted(
        d.name for d in out_root.iterdir()
        if d.is_dir() and any(d.rglob("meta.json"))
    )
    order = list(scenes)
    np.random.default_rng(seed).shuffle(order)
    n = len(order)
    n_train = int(np.floor(0.8 * n))
    n_val = int(np.floor(0.1 * n))
    manifest = {
        "scenes": scenes,
        "splits": {
            "train": sorted(order[:n_train]),
            "val": sorted(order[n_train:n_train + n_val]),
            "test": sorted(order[n_train + n_val:]),
        },
    }
    (out_root / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True), "utf-8"
    )
    return manifest
