"""Normal-consistency analysis.

Normals are estimated from pointmaps by local plane fitting. Normals from
seen layout regions of each image define a von Mises-Fisher kernel density
on the unit sphere (equal kernel weights), under which normals from unseen
regions are scored. Two baselines accompany the analysis: uniformly random
directions, and the dominant seen direction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envelope import Visibility


class NonUnitInput(Exception):
    """Query vectors must lie on the unit sphere."""


class NoValidRegions(Exception):
    """Every image lacked seen or unseen normals."""


@dataclass(frozen=True)
class VmfKde:
    """Equal-weight vMF mixture: one kernel per center, shared kappa."""

    centers: np.ndarray  # K x 3 unit vectors
    kappa: float

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=np.float64).reshape(-1, 3)
        if len(c) == 0:
            raise ValueError("KDE needs at least one center")
        norms = np.linalg.norm(c, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise ValueError("KDE centers must be unit vectors")
        if self.kappa <= 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        object.__setattr__(self, "centers", c)

    @property
    def log_norm_const(self) -> float:
        """log C3(kappa) = log(kappa / (4 pi sinh kappa)), overflow-free."""
        k = self.kappa
        # kappa/(4 pi sinh k) = k e^{-k} / (2 pi (1 - e^{-2k}))
        return float(np.log(k) - k - np.log(2.0 * np.pi) - np.log1p(-np.exp(-2.0 * k)))


def vmf_density(kde: VmfKde, x: np.ndarray) -> np.ndarray:
    """KDE density at unit vectors x (..., 3), on the sphere S^2.

    Evaluated in the log domain: C3(k) e^{k m} = k e^{k(m-1)} / (2 pi (1 - e^{-2k})),
    so exponents stay in [-2k, 0] and any kappa up to several hundred is safe.
    """
    q = np.asarray(x, dtype=np.float64)
    scalar = q.ndim == 1
    q = np.atleast_2d(q)
    norms = np.linalg.norm(q, axis=1)
    if not np.allclose(norms, 1.0, atol=1e-6):
        raise NonUnitInput("query vectors must be unit length")
    k = kde.kappa
    cos = q @ kde.centers.T  # M x K, in [-1, 1]
    log_terms = k * (cos - 1.0)  # <= 0
    log_peak = np.log(k) - np.log(2.0 * np.pi) - np.log1p(-np.exp(-2.0 * k))
    # logsumexp over kernels with the max already factored out (terms <= 0).
    m = log_terms.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(log_terms - m).sum(axis=1))
    log_density = log_peak + lse - np.log(len(kde.centers))
    out = np.exp(log_density)
    return float(out[0]) if scalar else out


def estimate_normals(
    pointmap: np.ndarray, valid: np.ndarray, camera_center: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel unit normals by plane fitting in each 3x3 window.

    A pixel gets a normal when it is valid and at least 6 of its 8
    neighbors are valid; the normal is the smallest-eigenvalue direction
    of the window's point covariance, oriented toward the camera
    (n . (p - camera_center) < 0). camera_center defaults to the origin,
    the right choice for camera-frame pointmaps.
    """
    pm = np.asarray(pointmap, dtype=np.float64)
    v = np.asarray(valid, dtype=bool)
    h, w = v.shape
    if camera_center is None:
        camera_center = np.zeros(3)

    # Pad so 3x3 windows are defined everywhere; padded cells are invalid.
    vp = np.zeros((h + 2, w + 2), dtype=bool)
    vp[1:-1, 1:-1] = v
    pp = np.zeros((h + 2, w + 2, 3))
    pp[1:-1, 1:-1] = pm

    # Stack the 9 window offsets: (9, H, W, 3) points and (9, H, W) validity.
    offs = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]
    win_pts = np.stack([pp[1 + dy:h + 1 + dy, 1 + dx:w + 1 + dx] for dy, dx in offs])
    win_val = np.stack([vp[1 + dy:h + 1 + dy, 1 + dx:w + 1 + dx] for dy, dx in offs])

    neighbor_count = win_val.sum(axis=0) - v.astype(np.int64)
    usable = v & (neighbor_count >= 6)
    out_n = np.zeros((h, w, 3))
    out_v = np.zeros((h, w), dtype=bool)
    if not usable.any():
        return out_n, out_v

    wv = win_val[:, usable].astype(np.float64)          # 9 x M
    wp = win_pts[:, usable] * wv[..., None]             # 9 x M x 3
    counts = wv.sum(axis=0)                             # M
    mean = wp.sum(axis=0) / counts[:, None]             # M x 3
    centered = (win_pts[:, usable] - mean) * wv[..., None]
    cov = np.einsum("kmi,kmj->mij", centered, centered) / counts[:, None, None]

    eigvals, eigvecs = np.linalg.eigh(cov)
    normals = eigvecs[:, :, 0]  # smallest eigenvalue first
    view = pm[usable] - camera_center
    flip = np.einsum("mi,mi->m", normals, view) > 0
    normals[flip] *= -1.0
    out_n[usable] = normals
    out_v[usable] = True
    return out_n, out_v


def dominant_direction(normals: np.ndarray, bins_per_face: int = 32) -> np.ndarray:
    """Mode of unit vectors on a cube-map histogram (bins_per_face^2 per face).

    Returns the mean of the winning bin's members, renormalized; ties are
    broken by lowest flat bin id, so the result is deterministic.
    """
    n = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    if len(n) == 0:
        raise ValueError("no normals supplied")
    ax = np.abs(n).argmax(axis=1)
    sgn = np.sign(n[np.arange(len(n)), ax])
    sgn[sgn == 0] = 1.0
    face = ax * 2 + (sgn < 0)  # 0..5
    major = n[np.arange(len(n)), ax] * sgn
    others = np.stack([n[np.arange(len(n)), (ax + 1) % 3],
                       n[np.arange(len(n)), (ax + 2) % 3]], axis=1)
    uv = others / major[:, None]  # in [-1, 1]
    ij = np.clip(((uv + 1.0) / 2.0 * bins_per_face).astype(np.int64), 0, bins_per_face - 1)
    flat = face * bins_per_face * bins_per_face + ij[:, 0] * bins_per_face + ij[:, 1]
    counts = np.bincount(flat, minlength=6 * bins_per_face * bins_per_face)
    win = counts.argmax()
    members = n[flat == win]
    mean = members.mean(axis=0)
    return mean / np.linalg.norm(mean)


def _sample_rows(rng: np.random.Generator, arr: np.ndarray, n: int) -> np.ndarray:
    if len(arr) >= n:
        idx = rng.choice(len(arr), size=n, replace=False)
    else:
        idx = rng.choice(len(arr), size=n, replace=True)
    return arr[idx]


def uniform_sphere(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@dataclass
class LikelihoodReport:
    ours_avg: float
    baseline_uniform_avg: float
    baseline_dominant_avg: float
    images_used: int
    images_skipped: int

    def to_json(self) -> dict:
        return {
            "ours_avg": self.ours_avg,
            "baseline_uniform_avg": self.baseline_uniform_avg,
            "baseline_dominant_avg": self.baseline_dominant_avg,
            "images_used": self.images_used,
            "images_skipped": self.images_skipped,
        }


def normal_likelihood_analysis(
    samples,
    seed: int = 0,
    n_kernels: int = 5000,
    n_eval: int = 5000,
    kappa: float = 15.0,
) -> LikelihoodReport:
    """Average unseen-normal likelihood under per-image seen-normal KDEs.

    samples yields (pred_pointmap, visibility_map) pairs; the pointmap is
    camera-frame. Per image: estimate normals, build a KDE from n_kernels
    normals sampled in seen layout pixels, and average the density over
    n_eval normals sampled in unseen pixels. Baselines are scored under
    the same KDE: uniform random directions and the dominant seen
    direction. Images lacking seen or unseen normals are skipped.

    Each image gets its own RNG stream derived from (seed, image index),
    so results are independent of evaluation order.
    """
    ours, uni, dom = [], [], []
    skipped = 0
    for i, (pointmap, vis_map) in enumerate(samples):
        vis_map = np.asarray(vis_map)
        normals, n_valid = estimate_normals(pointmap, vis_map != Visibility.NO_LAYOUT)
        seen_m = n_valid & (vis_map == Visibility.SEEN)
        unseen_m = n_valid & (vis_map == Visibility.UNSEEN)
        if not seen_m.any() or not unseen_m.any():
            skipped += 1
            continue
        rng = np.random.default_rng([seed, i])
        kde = VmfKde(centers=_sample_rows(rng, normals[seen_m], n_kernels), kappa=kappa)
        eval_normals = _sample_rows(rng, normals[unseen_m], n_eval)
        ours.append(float(vmf_density(kde, eval_normals).mean()))
        uni.append(float(vmf_density(kde, uniform_sphere(rng, n_eval)).mean()))
        dom.append(float(vmf_density(kde, dominant_direction(normals[seen_m]))))
    if not ours:
        raise NoValidRegions("no image had both seen and unseen normals")
    return LikelihoodReport(
        ours_avg=float(np.mean(ours)),
        baseline_uniform_avg=float(np.mean(uni)),
        baseline_dominant_avg=float(np.mean(dom)),
        images_used=len(ours),
        images_skipped=skipped,
    )
