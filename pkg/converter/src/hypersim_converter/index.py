"""Scene indexing: locate and validate every asset before conversion."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import h5py
import numpy as np


class ConverterError(Exception):
    pass


class MissingAsset(ConverterError):
    """A referenced Hypersim file does not exist."""


class UnknownSemanticId(ConverterError):
    """A semantic id has no entry in the remap table."""


class BadIndex(ConverterError):
    """Scene metadata is malformed or inconsistent."""


# Geometry rasters required per frame, keyed by Hypersim asset suffix.
GEOMETRY_ASSETS = ("position", "depth_meters", "semantic", "normal_cam")


def _read_h5(path: Path) -> np.ndarray:
    with h5py.File(path, "r") as f:
        key = next(iter(f.keys()))
        return np.asarray(f[key])


@dataclass
class CameraTrajectory:
    name: str
    frame_ids: list[int]
    positions: np.ndarray     # N x 3, asset units, camera centre in world
    orientations: np.ndarray  # N x 3 x 3, camera-to-world rotations


@dataclass
class HypersimSceneIndex:
    scene_id: str
    root: Path
    meters_per_asset_unit: float
    width: int
    height: int
    cameras: dict[str, CameraTrajectory]
    m_proj: np.ndarray | None  # 4 x 4 OpenGL projection, None = default pinhole
    remap: dict[int, int] = field(default_factory=dict)
    remap_default: int | None = None

    def scene_dir(self) -> Path:
        return self.root / self.scene_id

    def frame_asset(self, cam: str, frame_id: int, asset: str) -> Path:
        images = self.scene_dir() / "images"
        if asset == "color":
            return images / f"scene_{cam}_final_hdf5" / f"frame.{frame_id:04d}.color.hdf5"
        return images / f"scene_{cam}_geometry_hdf5" / f"frame.{frame_id:04d}.{asset}.hdf5"


def _scene_scale(detail: Path) -> float:
    meta = detail / "metadata_scene.csv"
    if not meta.exists():
        raise MissingAsset(f"missing scene metadata {meta}")
    with open(meta, newline="") as f:
        for row in csv.DictReader(f):
            if row.get("parameter_name") == "meters_per_asset_unit_scale":
                return float(row["parameter_value"])
    raise BadIndex(f"{meta} lacks meters_per_asset_unit_scale")


def _projection_matrix(root: Path, scene_id: str):
    """Per-scene projection matrix from Hypersim's camera-parameters CSV.

    The matrix carries the tilted-lens offsets Hypersim applied at render
    time, so any principal-point correction is folded in downstream.
    Returns (M_proj, width, height) or None when the CSV is absent.
    """
    csv_path = root / "metadata_camera_parameters.csv"
    if not csv_path.exists():
        return None
    with open(csv_path, newline="") as f:
        for row in csv.DictReader(f):
            if row.get("scene_name") != scene_id:
                continue
            m = np.array([[float(row[f"M_proj_{i}{j}"]) for j in range(4)]
                          for i in range(4)])
            return m, int(row["settings_output_img_width"]), int(row["settings_output_img_height"])
    return None


def _load_remap(path) -> tuple[dict[int, int], int | None]:
    doc = json.loads(Path(path).read_text("utf-8"))
    default = doc.pop("default", None)
    try:
        table = {int(k): int(v) for k, v in doc.items()}
    except ValueError as e:
        raise BadIndex(f"remap table keys/values must be integers: {e}") from e
    return table, None if default is None else int(default)


def build_index(root, scene_id: str, remap_path=None) -> HypersimSceneIndex:
    """Index one scene and verify every referenced asset exists.

    Raises MissingAsset with the full list of absent files so a partially
    downloaded scene is diagnosed in one pass.
    """
    from .convert import DEFAULT_REMAP, DEFAULT_REMAP_FALLBACK

    root = Path(root)
    detail = root / scene_id / "_detail"
    if not detail.is_dir():
        raise MissingAsset(f"scene {scene_id!r} has no _detail directory under {root}")

    scale = _scene_scale(detail)
    if scale <= 0:
        raise BadIndex(f"meters_per_asset_unit_scale must be positive, got {scale}")

    cameras = {}
    for cam_dir in sorted(detail.glob("cam_*")):
        name = cam_dir.name
        files = {k: cam_dir / f"camera_keyframe_{k}.hdf5"
                 for k in ("frame_indices", "positions", "orientations")}
        absent = [str(p) for p in files.values() if not p.exists()]
        if absent:
            raise MissingAsset(f"camera {name}: missing {', '.join(absent)}")
        frame_ids = [int(i) for i in _read_h5(files["frame_indices"])]
        positions = _read_h5(files["positions"]).astype(np.float64)
        orientations = _read_h5(files["orientations"]).astype(np.float64)
        if len(frame_ids) != len(positions) or len(frame_ids) != len(orientations):
            raise BadIndex(f"camera {name}: keyframe arrays disagree on length")
        cameras[name] = CameraTrajectory(name, frame_ids, positions, orientations)
    if not cameras:
        raise BadIndex(f"scene {scene_id!r} defines no cameras")

    proj = _projection_matrix(root, scene_id)

    index = HypersimSceneIndex(
        scene_id=scene_id,
        root=root,
        meters_per_asset_unit=scale,
        width=proj[1] if proj else 0,
        height=proj[2] if proj else 0,
        cameras=cameras,
        m_proj=proj[0] if proj else None,
    )

    missing = []
    for cam, traj in cameras.items():
        for fid in traj.frame_ids:
            for asset in ("color",) + GEOMETRY_ASSETS:
                p = index.frame_asset(cam, fid, asset)
                if not p.exists():
                    missing.append(str(p))
    if missing:
        raise MissingAsset(
            f"scene {scene_id!r} is incomplete, {len(missing)} assets absent: "
            + ", ".join(missing)
        )

    if index.width == 0:
        # No camera-parameters CSV: take the resolution from the rasters.
        cam, traj = next(iter(cameras.items()))
        shape = _read_h5(index.frame_asset(cam, traj.frame_ids[0], "position")).shape
        index.height, index.width = int(shape[0]), int(shape[1])

    if remap_path is not None:
        index.remap, index.remap_default = _load_remap(remap_path)
    else:
        index.remap, index.remap_default = dict(DEFAULT_REMAP), DEFAULT_REMAP_FALLBACK
    return index
