"""Scene-level point cloud aggregation and attribute-preserving downsampling."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .core import FrameBundle

# Packed voxel keys give each axis a signed 21-bit budget.
_VOXEL_COORD_LIMIT = 1 << 20


class EmptyInput(Exception):
    """No frames were supplied."""


class VoxelRangeError(Exception):
    """Voxel coordinates exceed the signed 21-bit packing budget."""


@dataclass
class AttributedPointCloud:
    """Columnar point cloud carrying color, normal, label and provenance.

    source[:, 0] is the frame index, source[:, 1] the flat pixel index
    (row-major) within that frame.
    """

    positions: np.ndarray  # N x 3 float64, world metres
    colors: np.ndarray     # N x 3 uint8
    normals: np.ndarray    # N x 3 float32, unit
    labels: np.ndarray     # N uint16
    source: np.ndarray = field(default=None)  # N x 2 int64

    def __post_init__(self):
        n = len(self.positions)
        if self.source is None:
            self.source = np.stack([np.full(n, -1), np.arange(n)], axis=1).astype(np.int64)
        for name in ("colors", "normals", "labels", "source"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length {len(getattr(self, name))} != positions length {n}")

    def __len__(self) -> int:
        return len(self.positions)

    def take(self, idx: np.ndarray) -> "AttributedPointCloud":
        return AttributedPointCloud(
            positions=self.positions[idx],
            colors=self.colors[idx],
            normals=self.normals[idx],
            labels=self.labels[idx],
            source=self.source[idx],
        )

    @classmethod
    def empty(cls) -> "AttributedPointCloud":
        return cls(
            positions=np.zeros((0, 3)),
            colors=np.zeros((0, 3), dtype=np.uint8),
            normals=np.zeros((0, 3), dtype=np.float32),
            labels=np.zeros(0, dtype=np.uint16),
            source=np.zeros((0, 2), dtype=np.int64),
        )


@dataclass(frozen=True)
class VoxelParams:
    """Cubic grid for downsampling: edge length and grid anchor."""

    rho: float = 0.02
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError(f"voxel size must be positive, got {self.rho}")


def aggregate_frames(frames: Sequence[FrameBundle]) -> AttributedPointCloud:
    """Union all valid pixels of all frames into one attributed cloud.

    Output order is frame-major then row-major, so results are independent
    of any internal parallelism. Duplicates are kept; deduplication is the
    downsampler's job.
    """
    if len(frames) == 0:
        raise EmptyInput("at least one frame is required")
    parts = []
    for fi, frame in enumerate(frames):
        v = frame.valid.astype(bool)
        flat = np.flatnonzero(v.ravel())
        if flat.size == 0:
            continue
        vv, uu = np.divmod(flat, frame.camera.width)
        parts.append(AttributedPointCloud(
            positions=frame.pointmap[vv, uu].astype(np.float64),
            colors=frame.rgb[vv, uu],
            normals=frame.normals[vv, uu],
            labels=frame.labels[vv, uu],
            source=np.stack([np.full(flat.size, fi), flat], axis=1).astype(np.int64),
        ))
    if not parts:
        return AttributedPointCloud.empty()
    return AttributedPointCloud(
        positions=np.concatenate([p.positions for p in parts]),
        colors=np.concatenate([p.colors for p in parts]),
        normals=np.concatenate([p.normals for p in parts]),
        labels=np.concatenate([p.labels for p in parts]),
        source=np.concatenate([p.source for p in parts]),
    )


def voxel_downsample(cloud: AttributedPointCloud, params: VoxelParams) -> AttributedPointCloud:
    """Keep one representative input point per occupied voxel.

    The representative is the point nearest the centroid of its voxel's
    points (ties broken by lowest input index); its attributes are copied
    verbatim, so the output is always a subset of the input.
    """
    if len(cloud) == 0:
        return cloud.take(np.zeros(0, dtype=np.int64))
    coords = np.floor((cloud.positions - np.asarray(params.origin)) / params.rho).astype(np.int64)
    if np.abs(coords).max() >= _VOXEL_COORD_LIMIT:
        raise VoxelRangeError(
            f"voxel coordinates exceed +/-{_VOXEL_COORD_LIMIT} at rho={params.rho}; "
            "the cloud is too large for 64-bit packed keys"
        )
    keys = (
        (coords[:, 0] + _VOXEL_COORD_LIMIT)
        | ((coords[:, 1] + _VOXEL_COORD_LIMIT) << 21)
        | ((coords[:, 2] + _VOXEL_COORD_LIMIT) << 42)
    )
    uniq, inverse = np.unique(keys, return_inverse=True)

    counts = np.bincount(inverse, minlength=uniq.size).astype(np.float64)
    centroids = np.zeros((uniq.size, 3))
    for ax in range(3):
        centroids[:, ax] = np.bincount(inverse, weights=cloud.positions[:, ax], minlength=uniq.size)
    centroids /= counts[:, None]

    dist = np.linalg.norm(cloud.positions - centroids[inverse], axis=1)
    # Min (distance, input index) per voxel via a stable lexsort.
    order = np.lexsort((np.arange(len(cloud)), dist, inverse))
    inv_sorted = inverse[order]
    first = np.ones(inv_sorted.size, dtype=bool)
    first[1:] = inv_sorted[1:] != inv_sorted[:-1]
    reps = np.sort(order[first])
    return cloud.take(reps)
