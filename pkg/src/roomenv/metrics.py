"""Layout-reconstruction metrics.

Predictions are scale-shift aligned to ground truth (one global scale, one
translation along the depth axis, closed-form least squares over pixel
correspondences), then scored with Chamfer distance and F-scores per
visibility class. Dataset-level numbers are unweighted means over images.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .envelope import EnvelopeSample, Visibility, classify_visibility
from .core import world_to_canonical_camera

EZ = np.array([0.0, 0.0, 1.0])


class Degenerate(Exception):
    """Alignment system is singular (too few or degenerate correspondences)."""


class EmptySet(Exception):
    """A point set required to be non-empty is empty."""


class ChamferMode(enum.Enum):
    BIDIRECTIONAL = "bidirectional"
    A_TO_B = "a_to_b"
    B_TO_A = "b_to_a"


@dataclass(frozen=True)
class AlignmentResult:
    scale: float
    z_shift: float
    residual_rms: float


def align_scale_shift(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None) -> AlignmentResult:
    """Least-squares fit of s, t minimizing sum ||s*p + t*e_z - g||^2.

    pred and gt are pixel-aligned pointmaps (or flat N x 3 arrays); mask
    selects the correspondences. The two-unknown normal equations are
    solved in closed form.
    """
    p = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
    g = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    if mask is not None:
        m = np.asarray(mask, dtype=bool).ravel()
        p, g = p[m], g[m]
    if len(p) < 2:
        raise Degenerate(f"need >= 2 correspondences, got {len(p)}")

    spp = float(np.einsum("ij,ij->", p, p))
    spz = float(p[:, 2].sum())
    spg = float(np.einsum("ij,ij->", p, g))
    sgz = float(g[:, 2].sum())
    n = float(len(p))
    A = np.array([[spp, spz], [spz, n]])
    b = np.array([spg, sgz])
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    if abs(det) <= 1e-12 * max(1.0, abs(A[0, 0]) * abs(A[1, 1])):
        raise Degenerate("normal equations are singular")
    s, t = np.linalg.solve(A, b)
    if s <= 0:
        raise Degenerate(f"recovered non-positive scale {s}")
    resid = s * p + t * EZ - g
    rms = float(np.sqrt(np.mean(np.sum(resid**2, axis=1))))
    return AlignmentResult(scale=float(s), z_shift=float(t), residual_rms=rms)


def apply_alignment(points: np.ndarray, result: AlignmentResult) -> np.ndarray:
    return result.scale * np.asarray(points, dtype=np.float64) + result.z_shift * EZ


def _nn_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """For each point of a, distance to its nearest neighbor in b."""
    return cKDTree(b).query(a, k=1)[0]


def chamfer(a: np.ndarray, b: np.ndarray, mode: ChamferMode = ChamferMode.BIDIRECTIONAL) -> float:
    """Mean nearest-neighbor distance; bidirectional averages both terms."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise EmptySet("chamfer requires two non-empty point sets")
    if mode is ChamferMode.A_TO_B:
        return float(_nn_dists(a, b).mean())
    if mode is ChamferMode.B_TO_A:
        return float(_nn_dists(b, a).mean())
    return 0.5 * (float(_nn_dists(a, b).mean()) + float(_nn_dists(b, a).mean()))


def f_score(a: np.ndarray, b: np.ndarray, threshold: float) -> float:
    """Harmonic mean of precision and recall at a distance threshold."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise EmptySet("f_score requires two non-empty point sets")
    if threshold <= 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    precision = float((_nn_dists(a, b) <= threshold).mean())
    recall = float((_nn_dists(b, a) <= threshold).mean())
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass
class SampleReport:
    """Metrics for one image, per visibility class."""

    scene_id: str
    frame_id: str
    alignment: AlignmentResult
    unseen_fraction: float
    pixel_counts: dict  # class name -> pixel count
    cd: dict            # class name -> chamfer or None (class empty)
    f: dict             # (class name, threshold) -> score or None


_CLASSES = ("seen", "unseen", "overall")


def evaluate_sample(
    pred_pointmap: np.ndarray,
    pred_valid: np.ndarray,
    sample: EnvelopeSample,
    eps_vis: float = 0.05,
    thresholds: tuple[float, ...] = (0.1, 0.05),
) -> SampleReport:
    """Score a predicted layout pointmap against a ground-truth sample.

    The prediction is a pixel-aligned pointmap in the canonical camera
    frame (the native output frame of monocular estimators); ground truth
    is converted into the same frame so the shift axis is camera depth.
    The prediction is scale-shift aligned on all mutually valid layout
    pixels; CD and F-scores are then computed per visibility class in
    metres. A class with no pixels reports None for its metrics.
    """
    gt_valid = sample.layout_valid.astype(bool)
    pv = np.asarray(pred_valid, dtype=bool)
    if pv.shape != gt_valid.shape:
        raise ValueError(f"prediction shape {pv.shape} != sample shape {gt_valid.shape}")
    both = gt_valid & pv

    pred_cam = np.asarray(pred_pointmap, dtype=np.float64)
    gt_cam = world_to_canonical_camera(
        sample.layout_pointmap.reshape(-1, 3).astype(np.float64), sample.camera
    ).reshape(sample.layout_pointmap.shape)

    alignment = align_scale_shift(pred_cam, gt_cam, both)
    pred_aligned = apply_alignment(pred_cam.reshape(-1, 3), alignment).reshape(pred_cam.shape)

    vis = classify_visibility(sample, eps_vis)
    masks = {
        "seen": both & (vis == Visibility.SEEN),
        "unseen": both & (vis == Visibility.UNSEEN),
        "overall": both,
    }
    layout_total = int(gt_valid.sum())
    unseen_fraction = float((vis == Visibility.UNSEEN).sum() / layout_total) if layout_total else 0.0

    cd = {}
    f = {}
    counts = {}
    for name in _CLASSES:
        m = masks[name]
        counts[name] = int(m.sum())
        if counts[name] == 0:
            cd[name] = None
            for thr in thresholds:
                f[(name, thr)] = None
            continue
        a = pred_aligned[m]
        b = gt_cam[m]
        cd[name] = chamfer(a, b)
        for thr in thresholds:
            f[(name, thr)] = f_score(a, b, thr)
    return SampleReport(
        scene_id=sample.scene_id,
        frame_id=sample.frame_id,
        alignment=alignment,
        unseen_fraction=unseen_fraction,
        pixel_counts=counts,
        cd=cd,
        f=f,
    )


@dataclass
class EvalReport:
    """Aggregate over images: unweighted means of per-image metrics."""

    rows: list[SampleReport] = field(default_factory=list)
    thresholds: tuple[float, ...] = (0.1, 0.05)

    def add(self, row: SampleReport) -> None:
        self.rows.append(row)

    def summary(self) -> dict:
        out = {"images": len(self.rows)}
        for name in _CLASSES:
            cds = [r.cd[name] for r in self.rows if r.cd[name] is not None]
            out[f"cd_{name}"] = float(np.mean(cds)) if cds else None
            for thr in self.thresholds:
                fs = [r.f[(name, thr)] for r in self.rows if r.f.get((name, thr)) is not None]
                out[f"f{thr:g}_{name}"] = float(np.mean(fs)) if fs else None
        fracs = [r.unseen_fraction for r in self.rows]
        out["unseen_fraction"] = float(np.mean(fracs)) if fracs else None
        return out

    def to_csv_rows(self) -> list[dict]:
        rows = []
        for r in self.rows:
            row = {
                "scene_id": r.scene_id,
                "frame_id": r.frame_id,
                "scale": r.alignment.scale,
                "z_shift": r.alignment.z_shift,
                "residual_rms": r.alignment.residual_rms,
                "unseen_fraction": r.unseen_fraction,
            }
            for name in _CLASSES:
                row[f"cd_{name}"] = r.cd[name]
                row[f"n_{name}"] = r.pixel_counts[name]
                for thr in self.thresholds:
                    row[f"f{thr:g}_{name}"] = r.f[(name, thr)]
            rows.append(row)
        return rows
