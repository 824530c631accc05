"""Command-line front end.

Subcommands cover the full workflow: generate synthetic fixtures, build
the aggregated scene cloud, render per-view layout surfaces, and score
predictions (geometry metrics and normal statistics). Config precedence
is CLI flags > config file > defaults; the effective config is echoed to
config.resolved.json in every output directory. Exit codes: 0 success,
1 validation error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import aggregate, envelope, ingest, metrics, normalstats, synthgen
from .core import default_layout_classes, world_to_canonical_camera

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2

DEFAULT_LAYOUT_CLASSES = {
    "wall": synthgen.LABEL_WALL,
    "floor": synthgen.LABEL_FLOOR,
    "ceiling": synthgen.LABEL_CEILING,
    "door": synthgen.LABEL_DOOR,
    "window": synthgen.LABEL_WINDOW,
}


@dataclass
class Config:
    rho: float = 0.02
    tau: float = 0.04
    eps_vis: float = 0.05
    splat_radius: int = 0
    kappa: float = 15.0
    n_kernels: int = 5000
    n_eval: int = 5000
    f_thresholds: tuple[float, ...] = (0.1, 0.05)
    seed: int = 0
    layout_classes: dict = field(default_factory=lambda: dict(DEFAULT_LAYOUT_CLASSES))
    threads: int = 1

    def validate(self) -> None:
        if self.rho <= 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.eps_vis <= 0:
            raise ValueError(f"eps_vis must be positive, got {self.eps_vis}")
        if self.splat_radius < 0:
            raise ValueError(f"splat_radius must be >= 0, got {self.splat_radius}")
        if self.kappa <= 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if self.n_kernels < 1 or self.n_eval < 1:
            raise ValueError("n_kernels and n_eval must be >= 1")
        if any(t <= 0 for t in self.f_thresholds):
            raise ValueError(f"f thresholds must be positive, got {self.f_thresholds}")
        if self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")
        if not self.layout_classes:
            raise ValueError("layout class mapping must be non-empty")


def _resolve_config(args) -> Config:
    cfg = Config()
    if getattr(args, "config", None):
        doc = json.loads(Path(args.config).read_text("utf-8"))
        known = {f for f in cfg.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        if "f_thresholds" in doc:
            doc["f_thresholds"] = tuple(doc["f_thresholds"])
        cfg = replace(cfg, **doc)
    for name in cfg.__dataclass_fields__:
        flag = getattr(args, name, None)
        if flag is not None:
            if name == "f_thresholds":
                flag = tuple(float(t) for t in str(flag).split(","))
            cfg = replace(cfg, **{name: flag})
    cfg.validate()
    return cfg


def _write_resolved_config(cfg: Config, out_dir: Path) -> None:
    doc = asdict(cfg)
    doc["f_thresholds"] = list(cfg.f_thresholds)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.resolved.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True), "utf-8"
    )


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file mirroring Config fields")
    p.add_argument("--rho", type=float, help="voxel size in metres")
    p.add_argument("--tau", type=float, help="raster depth threshold in metres")
    p.add_argument("--eps-vis", dest="eps_vis", type=float, help="seen/unseen depth tolerance")
    p.add_argument("--splat-radius", dest="splat_radius", type=int, help="raster splat radius in pixels")
    p.add_argument("--kappa", type=float, help="vMF concentration")
    p.add_argument("--n-kernels", dest="n_kernels", type=int, help="KDE kernel count per image")
    p.add_argument("--n-eval", dest="n_eval", type=int, help="eval sample count per image")
    p.add_argument("--f-thresholds", dest="f_thresholds", help="comma-separated F thresholds")
    p.add_argument("--seed", type=int, help="RNG seed")
    p.add_argument("--threads", type=int, help="worker thread count")


def _find_bundle_dirs(root: Path, kind: str) -> list[Path]:
    dirs = []
    for meta in sorted(root.rglob("meta.json")):
        try:
            doc = json.loads(meta.read_text("utf-8"))
        except json.JSONDecodeError:
            continue
        if doc.get("kind") == kind:
            dirs.append(meta.parent)
    return dirs


def _split_scenes(scene_ids: list[str], seed: int) -> dict:
    """Deterministic 80/10/10 split by scene."""
    order = list(scene_ids)
    np.random.default_rng(seed).shuffle(order)
    n = len(order)
    n_train = int(np.floor(0.8 * n))
    n_val = int(np.floor(0.1 * n))
    return {
        "train": sorted(order[:n_train]),
        "val": sorted(order[n_train:n_train + n_val]),
        "test": sorted(order[n_train + n_val:]),
    }


def cmd_gen_fixtures(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    if args.spec:
        scenes = [synthgen.load_scene_spec(args.spec)]
    else:
        scenes = synthgen.preset_scenes(args.preset)
    _write_resolved_config(cfg, out)
    for spec in scenes:
        scene_dir = out / "scenes" / spec.scene_id
        for ci in range(len(spec.cameras)):
            frame = synthgen.render_frame(spec, ci)
            ingest.write_frame(frame, scene_dir / "frames" / frame.frame_id)
            pm, valid, label = synthgen.layout_oracle(spec, ci)
            sample = envelope.EnvelopeSample(
                camera=frame.camera,
                rgb=frame.rgb,
                visible_pointmap=frame.pointmap,
                visible_valid=frame.valid,
                layout_pointmap=pm.astype(np.float32),
                layout_valid=valid,
                layout_label=np.where(valid, label, 0).astype(np.uint16),
                scene_id=spec.scene_id,
                frame_id=frame.frame_id,
            )
            ingest.write_envelope(sample, scene_dir / "oracle" / frame.frame_id)
    manifest = {
        "scenes": sorted(s.scene_id for s in scenes),
        "views_per_scene": {s.scene_id: len(s.cameras) for s in scenes},
        "splits": _split_scenes([s.scene_id for s in scenes], cfg.seed),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True), "utf-8")
    print(f"wrote {len(scenes)} scenes to {out}")
    return EXIT_OK


def cmd_build(args) -> int:
    cfg = _resolve_config(args)
    frames_root = Path(args.frames)
    frame_dirs = _find_bundle_dirs(frames_root, "frame")
    if not frame_dirs:
        raise aggregate.EmptyInput(f"no frame bundles found under {frames_root}")
    frames = [ingest.read_frame(d) for d in frame_dirs]
    cloud = aggregate.aggregate_frames(frames)
    cloud = aggregate.voxel_downsample(cloud, aggregate.VoxelParams(rho=cfg.rho))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ingest.write_ply(cloud, out, binary=not args.ascii)
    _write_resolved_config(cfg, out.parent)
    print(f"aggregated {len(frames)} frames -> {len(cloud)} points -> {out}")
    return EXIT_OK


def cmd_render_envelope(args) -> int:
    cfg = _resolve_config(args)
    frames_root = Path(args.frames)
    cloud_path = Path(args.cloud)
    if not cloud_path.exists():
        raise ingest.MissingFile(f"missing cloud file {cloud_path}")
    cloud = ingest.read_ply(cloud_path)
    classes = default_layout_classes(cfg.layout_classes)
    layout_cloud = envelope.filter_layout(cloud, classes)
    raster_cfg = envelope.RasterConfig(tau=cfg.tau, splat_radius=cfg.splat_radius)
    frame_dirs = _find_bundle_dirs(frames_root, "frame")
    if not frame_dirs:
        raise ingest.MissingFile(f"no frame bundles found under {frames_root}")
    out = Path(args.out)
    _write_resolved_config(cfg, out)

    def render_one(frame_dir: Path):
        frame = ingest.read_frame(frame_dir)
        sample = envelope.build_envelope(frame, layout_cloud, raster_cfg, eps_vis=cfg.eps_vis)
        rel = frame_dir.relative_to(frames_root)
        dest = out / rel
        ingest.write_envelope(sample, dest)
        ingest.write_depth_png(sample.visible_pointmap, sample.visible_valid,
                               sample.camera, dest / "visible_depth.png")
        ingest.write_depth_png(sample.layout_pointmap, sample.layout_valid,
                               sample.camera, dest / "layout_depth.png")

    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        list(pool.map(render_one, frame_dirs))
    print(f"rendered {len(frame_dirs)} envelope samples to {out}")
    return EXIT_OK


def _paired_samples(pred_root: Path, gt_root: Path):
    gt_dirs = _find_bundle_dirs(gt_root, "envelope")
    if not gt_dirs:
        raise ingest.MissingFile(f"no envelope samples found under {gt_root}")
    pairs = []
    for gt_dir in gt_dirs:
        rel = gt_dir.relative_to(gt_root)
        pred_dir = pred_root / rel
        if not (pred_dir / "meta.json").exists():
            raise ingest.MissingFile(f"no prediction for {rel} under {pred_root}")
        pairs.append((pred_dir, gt_dir))
    return pairs


def _pred_camera_frame(pred_sample: "envelope.EnvelopeSample"):
    """Prediction layout pointmap in the canonical camera frame."""
    pm = pred_sample.layout_pointmap.astype(np.float64)
    cam_pts = world_to_canonical_camera(pm.reshape(-1, 3), pred_sample.camera)
    return cam_pts.reshape(pm.shape), pred_sample.layout_valid.astype(bool)


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    pairs = _paired_samples(Path(args.pred), Path(args.gt))
    report = metrics.EvalReport(thresholds=cfg.f_thresholds)

    def eval_one(pair):
        pred_dir, gt_dir = pair
        gt = ingest.read_envelope(gt_dir)
        pred = ingest.read_envelope(pred_dir)
        if pred.layout_valid.shape != gt.layout_valid.shape:
            raise ingest.ShapeMismatch(
                f"prediction {pred_dir} is {pred.layout_valid.shape}, "
                f"ground truth is {gt.layout_valid.shape}"
            )
        pred_cam, pred_valid = _pred_camera_frame(pred)
        return metrics.evaluate_sample(pred_cam, pred_valid, gt,
                                       eps_vis=cfg.eps_vis, thresholds=cfg.f_thresholds)

    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        for row in pool.map(eval_one, pairs):
            report.add(row)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_resolved_config(cfg, out)
    rows = report.to_csv_rows()
    with open(out / "report.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    (out / "summary.json").write_text(
        json.dumps(report.summary(), indent=2, sort_keys=True), "utf-8"
    )
    print(json.dumps(report.summary(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_normal_stats(args) -> int:
    cfg = _resolve_config(args)
    pairs = _paired_samples(Path(args.pred), Path(args.gt))

    def load(pair):
        pred_dir, gt_dir = pair
        gt = ingest.read_envelope(gt_dir)
        pred = ingest.read_envelope(pred_dir)
        vis = envelope.classify_visibility(gt, eps_vis=cfg.eps_vis)
        pred_cam, pred_valid = _pred_camera_frame(pred)
        # Pixels where the prediction itself is invalid cannot contribute.
        vis = np.where(pred_valid, vis, envelope.Visibility.NO_LAYOUT)
        return pred_cam, vis

    samples = [load(p) for p in pairs]
    report = normalstats.normal_likelihood_analysis(
        samples, seed=cfg.seed, n_kernels=cfg.n_kernels,
        n_eval=cfg.n_eval, kappa=cfg.kappa,
    )
    doc = json.dumps(report.to_json(), indent=2, sort_keys=True)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(doc, "utf-8")
    print(doc)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roomenv",
        description="Room-envelope dataset construction and evaluation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-fixtures", help="write a synthetic mini-dataset")
    p.add_argument("--preset", default="tiny", help="builtin preset: tiny or furnished")
    p.add_argument("--spec", help="custom SceneSpec JSON file (overrides --preset)")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_gen_fixtures)

    p = sub.add_parser("build", help="aggregate frames into a downsampled cloud")
    p.add_argument("--frames", required=True, help="directory of frame bundles")
    p.add_argument("--out", required=True, help="output PLY path")
    p.add_argument("--ascii", action="store_true", help="write ASCII PLY instead of binary")
    _add_config_flags(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("render-envelope", help="render layout views and envelope samples")
    p.add_argument("--frames", required=True)
    p.add_argument("--cloud", required=True, help="scene cloud PLY from build")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_render_envelope)

    p = sub.add_parser("eval", help="score predicted layout pointmaps")
    p.add_argument("--pred", required=True, help="directory of predicted envelope samples")
    p.add_argument("--gt", required=True, help="directory of ground-truth envelope samples")
    p.add_argument("--out", required=True, help="output directory for CSV and JSON report")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("normal-stats", help="normal-likelihood analysis")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", help="output JSON file")
    _add_config_flags(p)
    p.set_defaults(func=cmd_normal_stats)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ingest.MissingFile, ingest.Io, FileNotFoundError, OSError) as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ingest.IngestError, synthgen.BadSpec, aggregate.EmptyInput,
            normalstats.NoValidRegions, metrics.Degenerate, metrics.EmptySet,
            envelope.ScaleMismatch, ValueError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
