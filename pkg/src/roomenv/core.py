"""Domain types and camera/geometry math shared by every module.

Canonical camera frame: +x right, +y down, +z into the scene. Pixel (u, v)
covers the unit square with its center at (u + 0.5, v + 0.5); projection
bins with floor(). Depth is the camera-frame z coordinate, not Euclidean
distance.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

CANONICAL_LAYOUT_NAMES = ("wall", "floor", "ceiling", "door", "window")


class AxisConvention(enum.Enum):
    """Axis convention of a camera's native frame.

    Y_DOWN_Z_FORWARD is the canonical frame (OpenCV style). Y_UP_Z_BACK is
    the OpenGL/renderer style frame (+y up, camera looks along -z); points
    are converted with the fixed basis change diag(1, -1, -1).
    """

    Y_DOWN_Z_FORWARD = "YDownZForward"
    Y_UP_Z_BACK = "YUpZBack"


# Rotation applied after world_to_camera to land in the canonical frame.
_YUP_TO_CANONICAL = np.diag([1.0, -1.0, -1.0])


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera: intrinsics plus a rigid world-to-camera transform."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_camera: np.ndarray  # 4x4, row-major, metres
    convention: AxisConvention = AxisConvention.Y_DOWN_Z_FORWARD

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"resolution must be >= 1, got {self.width}x{self.height}")
        T = np.asarray(self.world_to_camera, dtype=np.float64)
        if T.shape != (4, 4):
            raise ValueError(f"world_to_camera must be 4x4, got {T.shape}")
        R = T[:3, :3]
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-6):
            raise ValueError("world_to_camera rotation block is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise ValueError("world_to_camera rotation block must have determinant +1")
        object.__setattr__(self, "world_to_camera", T)

    @property
    def basis_change(self) -> np.ndarray:
        """3x3 rotation taking the native camera frame to the canonical frame."""
        if self.convention is AxisConvention.Y_UP_Z_BACK:
            return _YUP_TO_CANONICAL
        return np.eye(3)

    def canonical_extrinsics(self) -> np.ndarray:
        """4x4 transform from world directly into the canonical camera frame."""
        T = np.eye(4)
        T[:3, :3] = self.basis_change
        return T @ self.world_to_camera

    def camera_center_world(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        R = self.world_to_camera[:3, :3]
        t = self.world_to_camera[:3, 3]
        return -R.T @ t


@dataclass(frozen=True)
class LayoutClassSet:
    """Semantic class ids counted as structural layout (walls, floors, ...)."""

    ids: frozenset[int]

    def __post_init__(self):
        if not self.ids:
            raise ValueError("layout class set must be non-empty")
        object.__setattr__(self, "ids", frozenset(int(i) for i in self.ids))

    def __contains__(self, class_id: int) -> bool:
        return int(class_id) in self.ids

    def mask(self, labels: np.ndarray) -> np.ndarray:
        """Boolean mask of entries whose label is a layout class."""
        return np.isin(labels, list(self.ids))


@dataclass(frozen=True)
class Ray:
    """Ray through the camera centre, in the canonical camera frame."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        object.__setattr__(self, "direction", d)


@dataclass
class FrameBundle:
    """One posed view with per-pixel geometry and semantics.

    Rasters are H x W (x C); pointmap holds world coordinates in metres.
    Wherever valid is False the other per-pixel attributes carry no meaning.
    """

    camera: CameraModel
    rgb: np.ndarray       # H x W x 3 uint8
    pointmap: np.ndarray  # H x W x 3 float32, world metres
    normals: np.ndarray   # H x W x 3 float32, unit, world frame
    labels: np.ndarray    # H x W uint16
    valid: np.ndarray     # H x W bool
    scene_id: str = ""
    frame_id: str = ""

    def validate(self) -> None:
        h, w = self.camera.height, self.camera.width
        shapes = {
            "rgb": (h, w, 3),
            "pointmap": (h, w, 3),
            "normals": (h, w, 3),
            "labels": (h, w),
            "valid": (h, w),
        }
        for name, expect in shapes.items():
            arr = getattr(self, name)
            if arr.shape != expect:
                raise ValueError(f"{name} has shape {arr.shape}, camera declares {expect}")
        v = self.valid.astype(bool)
        if v.any():
            pts = self.pointmap[v]
            if not np.isfinite(pts).all():
                raise ValueError("pointmap contains non-finite values at valid pixels")
            norms = np.linalg.norm(self.normals[v], axis=-1)
            if not np.allclose(norms, 1.0, atol=1e-3):
                raise ValueError("normals are not unit length at valid pixels")


def world_to_canonical_camera(points: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Transform world points (..., 3) into the canonical camera frame."""
    p = np.asarray(points, dtype=np.float64)
    T = cam.canonical_extrinsics()
    return p @ T[:3, :3].T + T[:3, 3]


def project(p_cam: np.ndarray, cam: CameraModel):
    """Project canonical camera-frame points to integer pixels.

    Returns (u, v, z) arrays plus a boolean in_front mask; entries with
    z <= 0 are behind the camera plane and carry meaningless u, v. The
    (u, v) coordinates may fall outside the image; the caller culls.
    """
    p = np.asarray(p_cam, dtype=np.float64)
    scalar = p.ndim == 1
    p = np.atleast_2d(p)
    z = p[:, 2]
    in_front = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.floor(cam.fx * p[:, 0] / z + cam.cx)
        v = np.floor(cam.fy * p[:, 1] / z + cam.cy)
    u = np.where(in_front, u, 0).astype(np.int64)
    v = np.where(in_front, v, 0).astype(np.int64)
    if scalar:
        return u[0], v[0], z[0], bool(in_front[0])
    return u, v, z, in_front


def pixel_ray(u: int, v: int, cam: CameraModel) -> Ray:
    """Ray from the camera centre through the center of pixel (u, v)."""
    if not (0 <= u < cam.width and 0 <= v < cam.height):
        raise ValueError(f"pixel ({u}, {v}) outside {cam.width}x{cam.height} image")
    d = np.array([
        (u + 0.5 - cam.cx) / cam.fx,
        (v + 0.5 - cam.cy) / cam.fy,
        1.0,
    ])
    return Ray(origin=np.zeros(3), direction=d / np.linalg.norm(d))


def pixel_ray_directions(cam: CameraModel) -> np.ndarray:
    """H x W x 3 unit ray directions through all pixel centers."""
    us = (np.arange(cam.width) + 0.5 - cam.cx) / cam.fx
    vs = (np.arange(cam.height) + 0.5 - cam.cy) / cam.fy
    uu, vv = np.meshgrid(us, vs)
    d = np.stack([uu, vv, np.ones_like(uu)], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def point_to_ray_distance(p: np.ndarray, ray: Ray) -> float:
    """Distance from a camera-frame point to its projection onto the ray."""
    q = np.asarray(p, dtype=np.float64) - ray.origin
    return float(np.linalg.norm(q - (q @ ray.direction) * ray.direction))


def default_layout_classes(mapping: dict[str, int] | None = None) -> LayoutClassSet:
    """LayoutClassSet from a name->id mapping (defaults to ids 1..5)."""
    if mapping is None:
        mapping = {name: i + 1 for i, name in enumerate(CANONICAL_LAYOUT_NAMES)}
    return LayoutClassSet(ids=frozenset(mapping.values()))
