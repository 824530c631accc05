import numpy as np
import pytest

from helpers import make_camera
from reference import naive_render_layout, random_camera, random_cloud
from roomenv import synthgen
from roomenv.aggregate import AttributedPointCloud, VoxelParams, aggregate_frames, voxel_downsample
from roomenv.core import default_layout_classes, world_to_canonical_camera
from roomenv.envelope import (
    EnvelopeSample,
    RasterConfig,
    ScaleMismatch,
    Visibility,
    build_envelope,
    classify_visibility,
    filter_layout,
    render_layout_view,
)


def cloud_at(positions, labels=None):
    positions = np.asarray(positions, dtype=np.float64)
    n = len(positions)
    return AttributedPointCloud(
        positions=positions,
        colors=np.zeros((n, 3), dtype=np.uint8),
        normals=np.tile(np.float32([0, 0, 1]), (n, 1)),
        labels=np.ones(n, dtype=np.uint16) if labels is None else np.asarray(labels, dtype=np.uint16),
    )


class TestFilterLayout:
    def test_no_layout_labels(self):
        cloud = cloud_at(np.zeros((5, 3)), labels=[9, 9, 9, 9, 9])
        assert len(filter_layout(cloud, default_layout_classes())) == 0

    def test_keeps_layout_in_order(self):
        labels = [9, 1, 9, 2, 1, 9, 9, 2, 9, 9]  # 4 layout points
        cloud = cloud_at(np.arange(30).reshape(10, 3), labels=labels)
        out = filter_layout(cloud, default_layout_classes())
        assert len(out) == 4
        assert out.labels.tolist() == [1, 2, 1, 2]
        assert np.array_equal(out.positions, cloud.positions[[1, 3, 4, 7]])

    def test_idempotent(self):
        cloud = cloud_at(np.arange(30).reshape(10, 3), labels=[1, 2, 9, 1, 9, 3, 4, 5, 9, 9])
        once = filter_layout(cloud, default_layout_classes())
        twice = filter_layout(once, default_layout_classes())
        assert np.array_equal(once.positions, twice.positions)


class TestRenderLayoutView:
    def test_single_point(self):
        cam = make_camera(fx=10, fy=10, cx=5, cy=5, width=10, height=10)
        cloud = cloud_at([[0.0, 0.0, 2.0]])
        raster = render_layout_view(cloud, cam, RasterConfig(tau=0.05))
        assert raster.valid.sum() == 1
        assert raster.valid[5, 5]
        assert np.allclose(raster.pointmap[5, 5], [0, 0, 2])
        assert raster.index[5, 5] == 0

    def test_two_candidates_in_slab_pick_nearest_ray(self):
        cam = make_camera(fx=10, fy=10, cx=5, cy=5, width=10, height=10)
        # Both project to pixel (5,5); depths 2.00 and 2.02 are within tau.
        # The second point lies on the pixel-center ray, the first off it.
        p0 = [0.14, 0.1, 2.0]
        p1 = [0.101, 0.101, 2.02]
        cloud = cloud_at([p0, p1])
        raster = render_layout_view(cloud, cam, RasterConfig(tau=0.05))
        assert raster.index[5, 5] == 1

    def test_far_point_excluded_by_tau(self):
        cam = make_camera(fx=10, fy=10, cx=5, cy=5, width=10, height=10)
        cloud = cloud_at([[0.0, 0.0, 2.0], [0.0, 0.0, 3.0]])
        raster = render_layout_view(cloud, cam, RasterConfig(tau=0.05))
        assert raster.index[5, 5] == 0

    def test_empty_cloud(self):
        cam = make_camera(width=8, height=8)
        raster = render_layout_view(cloud_at(np.zeros((0, 3))), cam, RasterConfig())
        assert not raster.valid.any()
        assert (raster.index == -1).all()

    def test_behind_camera_ignored(self):
        cam = make_camera(width=8, height=8)
        raster = render_layout_view(cloud_at([[0, 0, -1.0]]), cam, RasterConfig())
        assert not raster.valid.any()

    @pytest.mark.parametrize("seed", range(8))
    @pytest.mark.parametrize("splat", [0, 1, 2])
    def test_brute_force_equivalence(self, seed, splat):
        rng = np.random.default_rng(seed)
        cam = random_camera(rng, width=16, height=12)
        cloud = random_cloud(rng, int(rng.integers(1, 120)), span=3.0)
        cfg = RasterConfig(tau=float(rng.uniform(0.01, 0.5)), splat_radius=splat)
        raster = render_layout_view(cloud, cam, cfg)
        assert np.array_equal(raster.index, naive_render_layout(cloud, cam, cfg))

    def test_occlusion_ordering(self, rng):
        cam = random_camera(rng)
        cloud = random_cloud(rng, 300, span=3.0)
        cfg = RasterConfig(tau=0.1)
        raster = render_layout_view(cloud, cam, cfg)
        p_cam = world_to_canonical_camera(cloud.positions, cam)
        # Selected depth never exceeds any same-pixel candidate's depth + tau.
        from roomenv.core import project
        u, v, z, ok = project(p_cam, cam)
        for (pv, pu) in zip(*np.where(raster.valid)):
            same = ok & (u == pu) & (v == pv)
            zmin = z[same].min()
            sel_z = p_cam[raster.index[pv, pu], 2]
            assert sel_z <= zmin + cfg.tau + 1e-12

    def test_splat_monotonicity(self, rng):
        cam = random_camera(rng)
        cloud = random_cloud(rng, 100, span=3.0)
        counts = [
            render_layout_view(cloud, cam, RasterConfig(tau=0.05, splat_radius=r)).valid.sum()
            for r in range(4)
        ]
        assert counts == sorted(counts)


def unfurnished_sample(scene_index=0, cam_index=0):
    spec = synthgen.preset_scenes("tiny")[scene_index]
    frames = [synthgen.render_frame(spec, i) for i in range(len(spec.cameras))]
    cloud = voxel_downsample(aggregate_frames(frames), VoxelParams(rho=0.02))
    lay = filter_layout(cloud, default_layout_classes())
    return frames[cam_index], lay


class TestBuildEnvelope:
    def test_empty_layout_cloud(self):
        frame, _ = unfurnished_sample()
        sample = build_envelope(frame, cloud_at(np.zeros((0, 3))), RasterConfig())
        assert not sample.layout_valid.any()
        assert np.array_equal(sample.visible_pointmap, frame.pointmap)
        assert np.array_equal(sample.visible_valid, frame.valid)

    def test_unfurnished_room_layout_equals_visible(self):
        # In an empty room the first surface IS the layout: depths agree
        # within 2 rho wherever both maps are valid.
        frame, lay = unfurnished_sample()
        sample = build_envelope(frame, lay, RasterConfig(tau=0.04))
        both = sample.layout_valid & sample.visible_valid
        assert both.mean() > 0.95
        vz = world_to_canonical_camera(sample.visible_pointmap[both], frame.camera)[:, 2]
        lz = world_to_canonical_camera(sample.layout_pointmap[both], frame.camera)[:, 2]
        assert (np.abs(vz - lz) <= 2 * 0.02).all()

    def test_layout_labels_are_layout_classes(self):
        frame, lay = unfurnished_sample()
        sample = build_envelope(frame, lay, RasterConfig(tau=0.04))
        classes = default_layout_classes()
        assert classes.mask(sample.layout_label[sample.layout_valid]).all()

    def test_scale_mismatch_detected(self):
        frame, lay = unfurnished_sample()
        # Shrink the cloud about the camera centre: every layout depth
        # halves, landing in front of the visible surface everywhere.
        center = frame.camera.camera_center_world()
        shrunk = cloud_at(center + 0.5 * (lay.positions - center), labels=lay.labels)
        with pytest.raises(ScaleMismatch):
            build_envelope(frame, shrunk, RasterConfig(tau=0.04))


class TestClassifyVisibility:
    def test_unfurnished_all_seen(self):
        frame, lay = unfurnished_sample()
        sample = build_envelope(frame, lay, RasterConfig(tau=0.04))
        vis = classify_visibility(sample, eps_vis=0.05)
        lay_px = sample.layout_valid
        assert (vis[lay_px] == Visibility.SEEN).all()

    def test_partition_sums_to_image(self):
        frame, lay = unfurnished_sample()
        sample = build_envelope(frame, lay, RasterConfig(tau=0.04))
        vis = classify_visibility(sample, eps_vis=0.05)
        n = (vis == Visibility.SEEN).sum() + (vis == Visibility.UNSEEN).sum() \
            + (vis == Visibility.NO_LAYOUT).sum()
        assert n == vis.size

    def test_wall_behind_cuboid_is_unseen(self):
        cam = make_camera(fx=10, fy=10, cx=5, cy=5, width=10, height=10)
        h, w = 10, 10
        visible = np.zeros((h, w, 3), dtype=np.float32)
        visible[..., 2] = 1.0  # cuboid face at 1 m
        layout = np.zeros((h, w, 3), dtype=np.float32)
        layout[..., 2] = 3.0  # wall at 3 m
        sample = EnvelopeSample(
            camera=cam,
            rgb=np.zeros((h, w, 3), dtype=np.uint8),
            visible_pointmap=visible,
            visible_valid=np.ones((h, w), dtype=bool),
            layout_pointmap=layout,
            layout_valid=np.ones((h, w), dtype=bool),
            layout_label=np.ones((h, w), dtype=np.uint16),
        )
        vis = classify_visibility(sample, eps_vis=0.05)
        assert (vis == Visibility.UNSEEN).all()

    def test_no_layout_pixels(self):
        cam = make_camera(fx=10, fy=10, cx=5, cy=5, width=10, height=10)
        sample = EnvelopeSample(
            camera=cam,
            rgb=np.zeros((10, 10, 3), dtype=np.uint8),
            visible_pointmap=np.zeros((10, 10, 3), dtype=np.float32),
            visible_valid=np.zeros((10, 10), dtype=bool),
            layout_pointmap=np.zeros((10, 10, 3), dtype=np.float32),
            layout_valid=np.zeros((10, 10), dtype=bool),
            layout_label=np.zeros((10, 10), dtype=np.uint16),
        )
        vis = classify_visibility(sample, eps_vis=0.05)
        assert (vis == Visibility.NO_LAYOUT).all()

    def test_rejects_nonpositive_eps(self):
        frame, lay = unfurnished_sample()
        sample = build_envelope(frame, lay, RasterConfig(tau=0.04))
        with pytest.raises(ValueError):
            classify_visibility(sample, eps_vis=0.0)
