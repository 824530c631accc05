"""Per-view layout-surface rendering.

Filters the aggregated cloud to layout classes, transforms it into a view,
rasterizes it with a depth-threshold candidate set per pixel, and selects
the candidate closest to the pixel ray. Pixels no camera ever observed stay
invalid; holes are a feature of the data, never in-painted.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .aggregate import AttributedPointCloud
from .core import (
    CameraModel,
    FrameBundle,
    LayoutClassSet,
    pixel_ray_directions,
    project,
    world_to_canonical_camera,
)


class ScaleMismatch(Exception):
    """Frame and layout cloud appear to disagree in scale or frame."""


@dataclass(frozen=True)
class RasterConfig:
    """Rasterization knobs: depth slab half-width and splat footprint."""

    tau: float = 0.04        # depth threshold, metres
    splat_radius: int = 0    # 0 = point-per-pixel

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.splat_radius < 0:
            raise ValueError(f"splat_radius must be >= 0, got {self.splat_radius}")


@dataclass
class LayoutRaster:
    """Result of rendering the layout cloud into one view."""

    pointmap: np.ndarray  # H x W x 3 world metres
    valid: np.ndarray     # H x W bool
    label: np.ndarray     # H x W uint16
    index: np.ndarray     # H x W int64, index into the layout cloud, -1 if invalid


@dataclass
class EnvelopeSample:
    """Paired visible-surface and layout-surface pointmaps for one view."""

    camera: CameraModel
    rgb: np.ndarray
    visible_pointmap: np.ndarray
    visible_valid: np.ndarray
    layout_pointmap: np.ndarray
    layout_valid: np.ndarray
    layout_label: np.ndarray
    scene_id: str = ""
    frame_id: str = ""


class Visibility(enum.IntEnum):
    NO_LAYOUT = 0
    SEEN = 1
    UNSEEN = 2


def filter_layout(cloud: AttributedPointCloud, classes: LayoutClassSet) -> AttributedPointCloud:
    """Keep exactly the points whose semantic label is a layout class."""
    return cloud.take(np.flatnonzero(classes.mask(cloud.labels)))


def render_layout_view(
    layout_cloud: AttributedPointCloud, cam: CameraModel, cfg: RasterConfig
) -> LayoutRaster:
    """Rasterize the layout cloud into one camera view.

    Per pixel: collect the points projecting there (the splat radius grows
    each point's footprint), keep those within tau of the minimum depth,
    and select the one whose ray distance is smallest (ties: lowest cloud
    index). Deterministic regardless of evaluation order.
    """
    h, w = cam.height, cam.width
    pointmap = np.zeros((h, w, 3), dtype=np.float64)
    valid = np.zeros((h, w), dtype=bool)
    label = np.zeros((h, w), dtype=np.uint16)
    index = np.full((h, w), -1, dtype=np.int64)
    if len(layout_cloud) == 0:
        return LayoutRaster(pointmap, valid, label, index)

    p_cam = world_to_canonical_camera(layout_cloud.positions, cam)
    u, v, z, in_front = project(p_cam, cam)
    keep = np.flatnonzero(in_front)
    if keep.size == 0:
        return LayoutRaster(pointmap, valid, label, index)

    r = cfg.splat_radius
    if r == 0:
        pts_idx, us, vs = keep, u[keep], v[keep]
    else:
        offs = np.arange(-r, r + 1)
        du, dv = np.meshgrid(offs, offs, indexing="ij")
        du, dv = du.ravel(), dv.ravel()
        pts_idx = np.repeat(keep, du.size)
        us = (u[keep, None] + du[None, :]).ravel()
        vs = (v[keep, None] + dv[None, :]).ravel()

    inside = (us >= 0) & (us < w) & (vs >= 0) & (vs < h)
    pts_idx, us, vs = pts_idx[inside], us[inside], vs[inside]
    if pts_idx.size == 0:
        return LayoutRaster(pointmap, valid, label, index)

    pix = vs * w + us
    depths = z[pts_idx]

    # Per-pixel minimum depth (the z-buffer pass).
    zmin = np.full(h * w, np.inf)
    np.minimum.at(zmin, pix, depths)

    # Depth-slab candidates, then min (ray distance, cloud index) per pixel.
    cand = np.abs(depths - zmin[pix]) <= cfg.tau
    pix, pts_idx = pix[cand], pts_idx[cand]
    rays = pixel_ray_directions(cam).reshape(-1, 3)
    q = p_cam[pts_idx]
    d = rays[pix]
    along = np.einsum("ij,ij->i", q, d)
    ray_dist = np.linalg.norm(q - along[:, None] * d, axis=1)

    order = np.lexsort((pts_idx, ray_dist, pix))
    pix_sorted = pix[order]
    first = np.ones(pix_sorted.size, dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    sel_pix = pix_sorted[first]
    sel_idx = pts_idx[order][first]

    vv, uu = np.divmod(sel_pix, w)
    pointmap[vv, uu] = layout_cloud.positions[sel_idx]
    valid[vv, uu] = True
    label[vv, uu] = layout_cloud.labels[sel_idx]
    index[vv, uu] = sel_idx
    return LayoutRaster(pointmap, valid, label, index)


def build_envelope(
    frame: FrameBundle,
    layout_cloud: AttributedPointCloud,
    cfg: RasterConfig,
    eps_vis: float = 0.05,
    strict: bool = False,
) -> EnvelopeSample:
    """Pair a frame's visible surface with the rendered layout surface.

    Raises ScaleMismatch when the layout surface sits in front of the
    visible surface at most mutually valid pixels, which indicates the
    frame and cloud are not in the same world frame or metric scale.
    With strict=True any pixel violating the depth-ordering invariant
    raises; otherwise violations only feed the mismatch heuristic.
    """
    raster = render_layout_view(layout_cloud, frame.camera, cfg)
    both = raster.valid & frame.valid.astype(bool)
    if both.any():
        vis_z = world_to_canonical_camera(frame.pointmap[both], frame.camera)[:, 2]
        lay_z = world_to_canonical_camera(raster.pointmap[both], frame.camera)[:, 2]
        in_front = lay_z < vis_z - eps_vis
        if in_front.mean() > 0.5:
            raise ScaleMismatch(
                f"layout surface lies in front of the visible surface at "
                f"{in_front.mean():.0%} of mutually valid pixels"
            )
        if strict and in_front.any():
            raise ScaleMismatch(
                f"{int(in_front.sum())} pixels violate layout-behind-visible ordering"
            )
    return EnvelopeSample(
        camera=frame.camera,
        rgb=frame.rgb.copy(),
        visible_pointmap=frame.pointmap.copy(),
        visible_valid=frame.valid.astype(bool).copy(),
        layout_pointmap=raster.pointmap,
        layout_valid=raster.valid,
        layout_label=raster.label,
        scene_id=frame.scene_id,
        frame_id=frame.frame_id,
    )


def classify_visibility(sample: EnvelopeSample, eps_vis: float = 0.05) -> np.ndarray:
    """Partition pixels into NO_LAYOUT / SEEN / UNSEEN.

    SEEN: layout and visible surfaces coincide in depth within eps_vis.
    UNSEEN: layout exists but sits behind the visible surface (occluded by
    furniture) or the visible surface is itself invalid there.
    """
    if eps_vis <= 0:
        raise ValueError(f"eps_vis must be positive, got {eps_vis}")
    h, w = sample.layout_valid.shape
    out = np.full((h, w), Visibility.NO_LAYOUT, dtype=np.uint8)
    lay = sample.layout_valid.astype(bool)
    vis = sample.visible_valid.astype(bool)
    if not lay.any():
        return out

    lay_z = np.full((h, w), np.nan)
    lay_z[lay] = world_to_canonical_camera(sample.layout_pointmap[lay], sample.camera)[:, 2]
    vis_z = np.full((h, w), np.nan)
    if vis.any():
        vis_z[vis] = world_to_canonical_camera(sample.visible_pointmap[vis], sample.camera)[:, 2]

    both = lay & vis
    seen = both & (np.abs(lay_z - vis_z) <= eps_vis)
    unseen = (lay & ~vis) | (both & (lay_z > vis_z + eps_vis))
    out[seen] = Visibility.SEEN
    out[unseen] = Visibility.UNSEEN
    # Layout in front of visible beyond eps_vis is physically inconsistent
    # but still counts as layout present; bucket it with SEEN's complement.
    leftover = lay & ~seen & ~unseen
    out[leftover] = Visibility.SEEN
    return out
