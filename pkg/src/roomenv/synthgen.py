"""Procedural desk-scale scenes rendered by analytic ray casting.

A scene is a closed axis-aligned box room (walls, floor, ceiling, plus
labeled door/window rectangles coplanar with walls) containing cuboid
furniture, observed by a camera trajectory. Frames are rendered by exact
ray-surface intersection, and an analytic layout oracle renders the room
with furniture removed, restricted to regions some trajectory camera
actually observed.

World frame: z up, floor at z=0, room interior [0,Lx] x [0,Ly] x [0,Lz].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    AxisConvention,
    CameraModel,
    FrameBundle,
    pixel_ray_directions,
)

LABEL_WALL = 1
LABEL_FLOOR = 2
LABEL_CEILING = 3
LABEL_DOOR = 4
LABEL_WINDOW = 5
LABEL_FURNITURE = 10

LABEL_NAMES = {
    "wall": LABEL_WALL,
    "floor": LABEL_FLOOR,
    "ceiling": LABEL_CEILING,
    "door": LABEL_DOOR,
    "window": LABEL_WINDOW,
    "furniture": LABEL_FURNITURE,
}

_FACE_COLORS = {
    LABEL_WALL: (200, 200, 190),
    LABEL_FLOOR: (140, 110, 80),
    LABEL_CEILING: (235, 235, 235),
    LABEL_DOOR: (120, 70, 30),
    LABEL_WINDOW: (120, 180, 230),
    LABEL_FURNITURE: (60, 60, 160),
}

_EPS = 1e-9


class BadSpec(Exception):
    """Malformed scene specification."""


@dataclass(frozen=True)
class WallOpening:
    """Door or window rectangle on one room face.

    face: one of x0, x1, y0, y1 (the four walls). (a0, a1) and (b0, b1)
    bound the rectangle in the face's two in-plane axes, ordered as the
    remaining world axes (y then z for x-faces, x then z for y-faces).
    """

    face: str
    a0: float
    a1: float
    b0: float
    b1: float
    label: int  # LABEL_DOOR or LABEL_WINDOW


@dataclass(frozen=True)
class Cuboid:
    """Axis-aligned furniture box, optionally yawed about the z axis."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float = 0.0
    label: int = LABEL_FURNITURE

    def rotation(self) -> np.ndarray:
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass
class SceneSpec:
    """Room geometry, furniture, and a camera trajectory."""

    extents: tuple[float, float, float]  # Lx, Ly, Lz metres
    cameras: list[CameraModel]
    furniture: list[Cuboid] = field(default_factory=list)
    openings: list[WallOpening] = field(default_factory=list)
    seed: int = 0
    scene_id: str = "scene"

    def __post_init__(self):
        if any(e <= 0 for e in self.extents):
            raise BadSpec(f"room extents must be positive, got {self.extents}")
        if not self.cameras:
            raise BadSpec("scene needs at least one camera")
        ext = np.asarray(self.extents)
        for cub in self.furniture:
            corners = _cuboid_corners(cub)
            if (corners < -1e-9).any() or (corners > ext + 1e-9).any():
                raise BadSpec(f"furniture cuboid {cub} extends outside the room")


def _cuboid_corners(cub: Cuboid) -> np.ndarray:
    half = np.asarray(cub.size) / 2.0
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    return (signs * half) @ cub.rotation().T + np.asarray(cub.center)


# ---------------------------------------------------------------------------
# Analytic intersections (vectorized over rays)


def _hit_room_shell(origins, dirs, extents, openings):
    """First hit of interior rays against the 6 room faces.

    Returns (t, normal, label). Rays start inside the closed box so a hit
    always exists; t is the exit distance of the ray from the box.
    """
    n = origins.shape[0]
    lo = np.zeros(3)
    hi = np.asarray(extents, dtype=np.float64)
    best_t = np.full(n, np.inf)
    normal = np.zeros((n, 3))
    label = np.zeros(n, dtype=np.uint16)

    faces = [
        ("x0", 0, lo[0], np.array([1.0, 0, 0]), LABEL_WALL),
        ("x1", 0, hi[0], np.array([-1.0, 0, 0]), LABEL_WALL),
        ("y0", 1, lo[1], np.array([0, 1.0, 0]), LABEL_WALL),
        ("y1", 1, hi[1], np.array([0, -1.0, 0]), LABEL_WALL),
        ("z0", 2, lo[2], np.array([0, 0, 1.0]), LABEL_FLOOR),
        ("z1", 2, hi[2], np.array([0, 0, -1.0]), LABEL_CEILING),
    ]
    in_plane = {0: (1, 2), 1: (0, 2), 2: (0, 1)}
    for face_name, axis, plane, face_n, face_label in faces:
        d = dirs[:, axis]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (plane - origins[:, axis]) / d
        pt = origins + t[:, None] * dirs
        a_ax, b_ax = in_plane[axis]
        ok = (
            (np.abs(d) > _EPS) & (t > _EPS) & (t < best_t)
            & (pt[:, a_ax] >= -1e-9) & (pt[:, a_ax] <= hi[a_ax] + 1e-9)
            & (pt[:, b_ax] >= -1e-9) & (pt[:, b_ax] <= hi[b_ax] + 1e-9)
        )
        if not ok.any():
            continue
        best_t[ok] = t[ok]
        normal[ok] = face_n
        lab = np.full(int(ok.sum()), face_label, dtype=np.uint16)
        # Door/window rectangles override the wall label where hit.
        for op in openings:
            if op.face != face_name:
                continue
            pa, pb = pt[ok][:, a_ax], pt[ok][:, b_ax]
            inside = (pa >= op.a0) & (pa <= op.a1) & (pb >= op.b0) & (pb <= op.b1)
            lab[inside] = op.label
        label[ok] = lab
    return best_t, normal, label


def _hit_cuboid(origins, dirs, cub: Cuboid):
    """Slab-method ray vs oriented box. Returns (t, normal) with t=inf on miss."""
    R = cub.rotation()
    o = (origins - np.asarray(cub.center)) @ R  # into box frame
    d = dirs @ R
    half = np.asarray(cub.size) / 2.0

    t_near = np.full(origins.shape[0], -np.inf)
    t_far = np.full(origins.shape[0], np.inf)
    axis_near = np.zeros(origins.shape[0], dtype=np.int64)
    sign_near = np.zeros(origins.shape[0])
    for ax in range(3):
        with np.errstate(divide="ignore", invalid="ignore"):
            t0 = (-half[ax] - o[:, ax]) / d[:, ax]
            t1 = (half[ax] - o[:, ax]) / d[:, ax]
        lo = np.minimum(t0, t1)
        hi = np.maximum(t0, t1)
        parallel = np.abs(d[:, ax]) <= _EPS
        outside = parallel & (np.abs(o[:, ax]) > half[ax])
        lo = np.where(parallel, -np.inf, lo)
        hi = np.where(parallel, np.inf, hi)
        upd = lo > t_near
        axis_near = np.where(upd, ax, axis_near)
        sign_near = np.where(upd, -np.sign(d[:, ax]), sign_near)
        t_near = np.maximum(t_near, lo)
        t_far = np.minimum(t_far, hi)
        t_far = np.where(outside, -np.inf, t_far)

    hit = (t_near <= t_far) & (t_near > _EPS)
    t = np.where(hit, t_near, np.inf)
    local_n = np.zeros((origins.shape[0], 3))
    rows = np.arange(origins.shape[0])
    local_n[rows, axis_near] = sign_near
    normal = local_n @ R.T
    return t, normal


def _cast(origins, dirs, spec: SceneSpec, layout_only: bool):
    """First hit of rays against the scene. Returns (t, point, normal, label)."""
    t, normal, label = _hit_room_shell(origins, dirs, spec.extents, spec.openings)
    if not layout_only:
        for cub in spec.furniture:
            tc, nc = _hit_cuboid(origins, dirs, cub)
            closer = tc < t
            t = np.where(closer, tc, t)
            normal[closer] = nc[closer]
            label[closer] = cub.label
    point = origins + t[:, None] * dirs
    return t, point, normal, label


def _camera_rays_world(cam: CameraModel):
    """Per-pixel ray origins (camera centre) and world directions."""
    dirs_cam = pixel_ray_directions(cam).reshape(-1, 3)
    T = cam.canonical_extrinsics()
    R = T[:3, :3]
    dirs_world = dirs_cam @ R  # R.T @ d for each row
    center = cam.camera_center_world()
    origins = np.broadcast_to(center, dirs_world.shape)
    return origins, dirs_world


def render_frame(spec: SceneSpec, cam_index: int) -> FrameBundle:
    """Render one trajectory view by exact nearest ray-surface intersection."""
    cam = spec.cameras[cam_index]
    origins, dirs = _camera_rays_world(cam)
    t, point, normal, label = _cast(origins, dirs, spec, layout_only=False)
    h, w = cam.height, cam.width
    valid = np.isfinite(t).reshape(h, w)
    pointmap = point.reshape(h, w, 3).astype(np.float32)
    normals = normal.reshape(h, w, 3).astype(np.float32)
    labels = label.reshape(h, w)

    rgb = np.zeros((h, w, 3), dtype=np.uint8)
    for lab, color in _FACE_COLORS.items():
        rgb[labels == lab] = color
    frame = FrameBundle(
        camera=cam,
        rgb=rgb,
        pointmap=pointmap,
        normals=normals,
        labels=labels.astype(np.uint16),
        valid=valid,
        scene_id=spec.scene_id,
        frame_id=f"{cam_index:04d}",
    )
    frame.validate()
    return frame


def layout_oracle(spec: SceneSpec, cam_index: int, vis_eps: float = 1e-4):
    """Ground-truth layout surface for one view, with hole semantics.

    Renders the room with furniture removed; a pixel is valid only if its
    layout hit point is observed (unoccluded, in frustum) by at least one
    trajectory camera, exactly reproducing the multi-view hole pattern.
    Returns (pointmap H x W x 3, valid H x W, label H x W).
    """
    cam = spec.cameras[cam_index]
    origins, dirs = _camera_rays_world(cam)
    t, point, _n, label = _cast(origins, dirs, spec, layout_only=True)
    observed = _observed_by_any_camera(point, spec, vis_eps)
    h, w = cam.height, cam.width
    valid = (np.isfinite(t) & observed).reshape(h, w)
    return (
        point.reshape(h, w, 3),
        valid,
        label.reshape(h, w).astype(np.uint16),
    )


def _observed_by_any_camera(points: np.ndarray, spec: SceneSpec, vis_eps: float) -> np.ndarray:
    """True where a world point is visible from >= 1 trajectory camera."""
    from .core import project, world_to_canonical_camera  # local to avoid cycle noise

    seen = np.zeros(points.shape[0], dtype=bool)
    for cam in spec.cameras:
        todo = np.flatnonzero(~seen)
        if todo.size == 0:
            break
        p_cam = world_to_canonical_camera(points[todo], cam)
        u, v, z, in_front = project(p_cam, cam)
        in_img = in_front & (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
        cand = todo[in_img]
        if cand.size == 0:
            continue
        center = cam.camera_center_world()
        vec = points[cand] - center
        dist = np.linalg.norm(vec, axis=1)
        ok = dist > _EPS
        cand, vec, dist = cand[ok], vec[ok], dist[ok]
        dirs = vec / dist[:, None]
        origins = np.broadcast_to(center, dirs.shape)
        t_hit, _p, _n, _l = _cast(origins, dirs, spec, layout_only=False)
        seen[cand] = t_hit >= dist - vis_eps
    return seen


# ---------------------------------------------------------------------------
# JSON schema and builtin presets


def _look_at_camera(eye, target, width, height, fov_deg=60.0) -> CameraModel:
    """Canonical-convention camera at eye looking toward target, z-up world."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd = fwd / np.linalg.norm(fwd)
    world_up = np.array([0.0, 0.0, 1.0])
    if abs(fwd @ world_up) > 0.999:
        world_up = np.array([0.0, 1.0, 0.0])
    right = np.cross(fwd, world_up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)  # +y down in canonical frame
    R = np.stack([right, down, fwd])  # world->camera rows
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = -R @ eye
    fx = (width / 2.0) / np.tan(np.radians(fov_deg) / 2.0)
    return CameraModel(
        fx=fx, fy=fx, cx=width / 2.0, cy=height / 2.0,
        width=width, height=height,
        world_to_camera=T,
        convention=AxisConvention.Y_DOWN_Z_FORWARD,
    )


def spec_from_json(doc: dict) -> SceneSpec:
    """Build a SceneSpec from its JSON document form."""
    try:
        extents = tuple(float(x) for x in doc["extents"])
        cameras = []
        for c in doc["cameras"]:
            if "eye" in c:
                cameras.append(_look_at_camera(
                    c["eye"], c["target"],
                    int(c.get("width", 64)), int(c.get("height", 48)),
                    float(c.get("fov_deg", 60.0)),
                ))
            else:
                from .ingest import _camera_from_json
                cameras.append(_camera_from_json(c))
        furniture = [
            Cuboid(
                center=tuple(f["center"]),
                size=tuple(f["size"]),
                yaw=float(f.get("yaw", 0.0)),
                label=int(f.get("label", LABEL_FURNITURE)),
            )
            for f in doc.get("furniture", [])
        ]
        openings = [
            WallOpening(
                face=o["face"], a0=float(o["a0"]), a1=float(o["a1"]),
                b0=float(o["b0"]), b1=float(o["b1"]),
                label=LABEL_NAMES[o.get("label", "door")] if isinstance(o.get("label"), str)
                else int(o.get("label", LABEL_DOOR)),
            )
            for o in doc.get("openings", [])
        ]
        return SceneSpec(
            extents=extents,
            cameras=cameras,
            furniture=furniture,
            openings=openings,
            seed=int(doc.get("seed", 0)),
            scene_id=str(doc.get("scene_id", "scene")),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise BadSpec(f"malformed scene spec: {e}") from e


def load_scene_spec(path) -> SceneSpec:
    try:
        doc = json.loads(Path(path).read_text("utf-8"))
    except json.JSONDecodeError as e:
        raise BadSpec(f"invalid JSON in {path}: {e}") from e
    return spec_from_json(doc)


def _room_scene(scene_id, extents, cams, furniture=(), openings=(), seed=0,
                width=64, height=48):
    cameras = [_look_at_camera(eye, target, width, height, fov) for eye, target, fov in cams]
    return SceneSpec(
        extents=extents,
        cameras=cameras,
        furniture=list(furniture),
        openings=list(openings),
        seed=seed,
        scene_id=scene_id,
    )


def preset_scenes(name: str, width: int = 64, height: int = 48) -> list[SceneSpec]:
    """Builtin fixture presets.

    "tiny": three unfurnished rooms, four views each.
    "furnished": three rooms with occluding cuboids; each occluded wall
    patch is revisited by at least one other camera so unseen regions are
    recoverable from the aggregate.
    """
    if name == "tiny":
        scenes = []
        for i, ext in enumerate([(4.0, 3.0, 2.5), (5.0, 4.0, 2.7), (3.5, 3.5, 2.4)]):
            cx, cy = ext[0] / 2, ext[1] / 2
            cams = [
                ((cx, cy, 1.4), (ext[0], cy, 1.2), 60.0),
                ((cx, cy, 1.4), (0.0, cy, 1.2), 60.0),
                ((cx, cy, 1.4), (cx, ext[1], 1.2), 60.0),
                ((cx, cy, 1.4), (cx, 0.0, 1.0), 60.0),
            ]
            openings = [WallOpening("x1", ext[1] * 0.3, ext[1] * 0.6, 0.0, 2.0, LABEL_DOOR),
                        WallOpening("y0", ext[0] * 0.2, ext[0] * 0.5, 0.9, 1.9, LABEL_WINDOW)]
            scenes.append(_room_scene(f"tiny_{i:02d}", ext, cams, openings=openings,
                                      seed=i, width=width, height=height))
        return scenes
    if name == "furnished":
        # Each camera gets a narrow, near-frontal view of one surface so the
        # depth spread inside a pixel stays well below the raster threshold;
        # the helper camera sits between the cuboid and the wall to fill the
        # occluded wall patch the main camera cannot see.
        scenes = []
        for i, ext in enumerate([(4.0, 3.0, 2.5), (4.5, 3.4, 2.6), (5.0, 3.8, 2.7)]):
            lx, ly, lz = ext
            cub = Cuboid(
                center=(lx - 1.4, ly * 0.4, 0.5),
                size=(0.4, 0.8, 1.0),
            )
            cams = [
                # Main view: frontal on the far (x1) wall, cuboid in the way.
                ((0.8, ly * 0.45, 1.25), (lx, ly * 0.45, 1.25), 45.0),
                # Helper in the cuboid-wall gap, frontal on the shadowed patch.
                ((lx - 0.7, ly * 0.4, 1.0), (lx, ly * 0.4, 1.0), 80.0),
                # Overhead: frontal on the floor around the cuboid.
                ((lx - 2.0, ly * 0.5, lz - 0.4), (lx - 2.0, ly * 0.5, 0.0), 55.0),
                # Frontal view of the near (x0) wall.
                ((lx - 1.0, ly * 0.55, 1.3), (0.0, ly * 0.55, 1.3), 45.0),
            ]
            openings = [WallOpening("x0", ly * 0.4, ly * 0.7, 0.0, 2.0, LABEL_DOOR),
                        WallOpening("x1", ly * 0.55, ly * 0.85, 1.0, 2.0, LABEL_WINDOW)]
            scenes.append(_room_scene(f"furnished_{i:02d}", ext, cams,
                                      furniture=[cub], openings=openings,
                                      seed=100 + i, width=width, height=height))
        return scenes
    raise BadSpec(f"unknown preset {name!r} (choose 'tiny' or 'furnished')")
