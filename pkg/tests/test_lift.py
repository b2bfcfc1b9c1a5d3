import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from granulift.errors import DimensionMismatch, InvalidDepth, MissingTrackId
from granulift.lift import (
    InstancePointSet,
    LiftConfig,
    aggregate_stage1,
    aggregate_stage2,
    backproject_pixel,
    lift_mask,
    project_point,
)
from granulift.scene_io import (
    CameraFrame,
    CameraIntrinsics,
    DepthMap,
    MaskSet,
    Pose4x4,
    encode_rle,
)
from granulift.synth import SynthObject, SynthSpec, render_scene

from conftest import frames_from_render, simple_spec


def make_frame(depth_values, scale=0.001, fx=50.0, fy=50.0, cx=None, cy=None,
               pose=None, frame_index=0):
    depth_values = np.asarray(depth_values, dtype=np.uint16)
    h, w = depth_values.shape
    return CameraFrame(
        frame_index=frame_index,
        depth=DepthMap(width=w, height=h, values=depth_values, scale=scale),
        intrinsics=CameraIntrinsics(fx=fx, fy=fy,
                                    cx=w / 2 if cx is None else cx,
                                    cy=h / 2 if cy is None else cy),
        extrinsics=pose or Pose4x4.identity())


class TestBackproject:
    IDENT = Pose4x4.identity()

    def test_principal_ray(self):
        k = CameraIntrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0)
        assert backproject_pixel(0, 0, 2.0, k, self.IDENT) == (0.0, 0.0, 2.0)

    def test_forced_by_projection_model(self):
        k = CameraIntrinsics(fx=2.0, fy=1.0, cx=1.0, cy=0.0)
        assert backproject_pixel(2, 1, 4.0, k, self.IDENT) == (2.0, 4.0, 4.0)

    def test_translation_applied(self):
        k = CameraIntrinsics(fx=2.0, fy=1.0, cx=1.0, cy=0.0)
        m = np.eye(4)
        m[:3, 3] = (1.0, 0.0, 0.0)
        assert backproject_pixel(2, 1, 4.0, k, Pose4x4.from_matrix(m)) == (3.0, 4.0, 4.0)

    def test_invalid_depth(self):
        k = CameraIntrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0)
        with pytest.raises(InvalidDepth):
            backproject_pixel(0, 0, 0.0, k, self.IDENT)

    def test_reprojection_round_trip(self):
        rng = np.random.default_rng(17)
        k = CameraIntrinsics(fx=320.5, fy=290.25, cx=161.0, cy=120.75)
        for _ in range(200):
            m = np.eye(4)
            m[:3, :3] = Rotation.from_rotvec(rng.normal(size=3)).as_matrix()
            m[:3, 3] = rng.normal(scale=2.0, size=3)
            pose = Pose4x4.from_matrix(m)
            u, v = rng.uniform(0, 320), rng.uniform(0, 240)
            d = rng.uniform(0.1, 10.0)
            world = backproject_pixel(u, v, d, k, pose)
            u2, v2, d2 = project_point(world, k, pose)
            assert abs(u2 - u) <= 1e-9
            assert abs(v2 - v) <= 1e-9
            assert abs(d2 - d) <= 1e-12


class TestLiftMask:
    def test_all_valid_depth(self):
        depth = np.full((20, 20), 1500, dtype=np.uint16)
        bm = np.zeros((20, 20), dtype=np.uint8)
        bm[2:17, 3:13] = 1  # 150 px
        out = lift_mask(encode_rle(bm), make_frame(depth), LiftConfig(min_points=100))
        assert len(out.points) == 150

    def test_discard_below_min_points(self):
        depth = np.full((20, 20), 1500, dtype=np.uint16)
        depth[2:8, 3:13] = 0  # 60 of the 150 mask pixels lose depth
        bm = np.zeros((20, 20), dtype=np.uint8)
        bm[2:17, 3:13] = 1
        out = lift_mask(encode_rle(bm), make_frame(depth), LiftConfig(min_points=100))
        assert out is None

    def test_zero_depth_pixels_never_lift(self):
        depth = np.zeros((4, 4), dtype=np.uint16)
        depth[0, 0] = 1000
        bm = np.ones((4, 4), dtype=np.uint8)
        out = lift_mask(encode_rle(bm), make_frame(depth), LiftConfig(min_points=0))
        assert len(out.points) == 1

    def test_min_points_zero_lifts_every_nonempty_mask(self):
        depth = np.full((4, 4), 800, dtype=np.uint16)
        bm = np.zeros((4, 4), dtype=np.uint8)
        bm[1, 1] = 1
        out = lift_mask(encode_rle(bm), make_frame(depth), LiftConfig(min_points=0))
        assert isinstance(out, InstancePointSet)
        assert len(out.points) == 1

    def test_dimension_mismatch(self):
        depth = np.full((4, 4), 800, dtype=np.uint16)
        bm = np.ones((4, 5), dtype=np.uint8)
        with pytest.raises(DimensionMismatch):
            lift_mask(encode_rle(bm), make_frame(depth), LiftConfig())

    def test_points_equal_valid_pixel_count(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            depth = rng.integers(0, 3, size=(10, 10)).astype(np.uint16) * 700
            bm = (rng.random((10, 10)) < 0.6).astype(np.uint8)
            if not bm.any():
                continue
            expected = int(((depth > 0) & (bm > 0)).sum())
            out = lift_mask(encode_rle(bm), make_frame(depth),
                            LiftConfig(min_points=0))
            assert len(out.points) == expected


def exactness_spec(seed=0, frames=10):
    """Axis-aligned camera in front of a box: depth quantization is exact."""
    return SynthSpec(
        seed=seed, width=64, height=48,
        intrinsics=CameraIntrinsics(fx=60.0, fy=60.0, cx=32.0, cy=24.0),
        trajectory=tuple(
            Pose4x4.from_matrix(np.array([[1, 0, 0, 0.002 * i],
                                          [0, 1, 0, 0.0],
                                          [0, 0, 1, 0.001 * i],
                                          [0, 0, 0, 1.0]]))
            for i in range(frames)),
        objects=(SynthObject("box", (0.0, 0.0, 2.25), (1.2, 1.0, 0.5), 1),),
        stride=5, gt_points_per_object=200)


class TestAnalyticExactness:
    def test_lifted_front_face_on_plane(self):
        render = render_scene(exactness_spec())
        frames = frames_from_render(render)
        for f, maskset in render.gt_masksets.items():
            lifted = lift_mask(maskset.masks[0], frames[f], LiftConfig(min_points=1))
            # front face of the box sits at z = 2.0 in world coordinates
            assert np.abs(lifted.points[:, 2] - 2.0).max() <= 1e-6
            assert np.abs(lifted.points[:, 0]).max() <= 0.6 + 1e-6
            assert np.abs(lifted.points[:, 1]).max() <= 0.5 + 1e-6


class TestAggregation:
    CFG = LiftConfig(min_points=1)

    def flat_depth_frames(self, n):
        depth = np.full((8, 8), 1000, dtype=np.uint16)
        return {i: make_frame(depth, frame_index=i) for i in range(n)}

    def two_masks(self, frame=0, track_ids=(None, None)):
        a = np.zeros((8, 8), dtype=np.uint8)
        a[0:4, 0:4] = 1
        b = np.zeros((8, 8), dtype=np.uint8)
        b[4:8, 4:8] = 1
        return MaskSet(frame_index=frame,
                       masks=(encode_rle(a, track_id=track_ids[0]),
                              encode_rle(b, track_id=track_ids[1])))

    def test_stage1_serial_ids(self):
        frames = self.flat_depth_frames(1)
        out = aggregate_stage1(frames, {0: self.two_masks()}, self.CFG)
        assert sorted(set(out.instance_ids.tolist())) == [0, 1]

    def test_stage1_fragments_across_keyframes(self):
        frames = self.flat_depth_frames(3)
        bm = np.zeros((8, 8), dtype=np.uint8)
        bm[2:6, 2:6] = 1
        masksets = {i: MaskSet(frame_index=i, masks=(encode_rle(bm),))
                    for i in range(3)}
        out = aggregate_stage1(frames, masksets, self.CFG)
        assert sorted(set(out.instance_ids.tolist())) == [0, 1, 2]

    def test_stage2_merges_by_track_id(self):
        frames = self.flat_depth_frames(5)
        bm = np.zeros((8, 8), dtype=np.uint8)
        bm[2:6, 2:6] = 1
        masksets = {i: MaskSet(frame_index=i, masks=(encode_rle(bm, track_id=4),))
                    for i in range(5)}
        out = aggregate_stage2(frames, masksets, self.CFG)
        assert set(out.instance_ids.tolist()) == {4}
        assert len(out) == 5 * 16

    def test_stage2_requires_track_ids(self):
        frames = self.flat_depth_frames(1)
        with pytest.raises(MissingTrackId):
            aggregate_stage2(frames, {0: self.two_masks()}, self.CFG)

    def test_stage2_instance_count_at_most_stage1(self):
        spec = simple_spec(frames=40, stride=10)
        render = render_scene(spec)
        frames = frames_from_render(render)
        from granulift.synth import OraclePropagator, build_detections
        from granulift.tracker import TrackerConfig, run_tracking

        detections = build_detections(render)
        consistent, _, _ = run_tracking(render.manifest, detections,
                                        OraclePropagator(render.gt_masksets),
                                        TrackerConfig(stride_s=10))
        cfg = LiftConfig(min_points=20)
        stage1 = aggregate_stage1(frames, detections, cfg)
        stage2 = aggregate_stage2(frames, consistent, cfg)
        assert len(set(stage2.instance_ids.tolist())) <= \
            len(set(stage1.instance_ids.tolist()))

    def test_stage2_on_keyframes_degenerates_to_stage1(self):
        frames = self.flat_depth_frames(1)
        tracked = self.two_masks(track_ids=(7, 9))
        untracked = self.two_masks()
        s2 = aggregate_stage2(frames, {0: tracked}, self.CFG)
        s1 = aggregate_stage1(frames, {0: untracked}, self.CFG)
        assert np.array_equal(s1.xyz, s2.xyz)
        # identical partition of points up to id relabeling
        relabel = {7: 0, 9: 1}
        assert [relabel[i] for i in s2.instance_ids.tolist()] == \
            s1.instance_ids.tolist()

    def test_subsample_keeps_multiples(self):
        frames = self.flat_depth_frames(8)
        bm = np.zeros((8, 8), dtype=np.uint8)
        bm[2:6, 2:6] = 1
        masksets = {i: MaskSet(frame_index=i, masks=(encode_rle(bm, track_id=0),))
                    for i in range(8)}
        full = aggregate_stage2(frames, masksets, self.CFG, subsample=1)
        half = aggregate_stage2(frames, masksets, self.CFG, subsample=2)
        quarter = aggregate_stage2(frames, masksets, self.CFG, subsample=4)
        assert len(full) == 8 * 16
        assert len(half) == 4 * 16
        assert len(quarter) == 2 * 16
