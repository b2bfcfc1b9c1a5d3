import numpy as np
import pytest

from granulift.scene_io import (
    CameraFrame,
    CameraIntrinsics,
    DepthMap,
    Pose4x4,
    encode_rle,
)
from granulift.synth import SynthObject, SynthSpec, lateral_trajectory


def bitmap_mask(rows, **kwargs):
    """Build a Mask from an iterable of 0/1 rows."""
    return encode_rle(np.array(rows, dtype=np.uint8), **kwargs)


def random_bitmap(rng, height, width, density=0.5):
    bm = rng.random((height, width)) < density
    if not bm.any():
        bm[rng.integers(height), rng.integers(width)] = True
    return bm.astype(np.uint8)


def random_blob(rng, height, width):
    """Random filled rectangle - more mask-like than per-pixel noise."""
    y0 = int(rng.integers(0, height - 1))
    x0 = int(rng.integers(0, width - 1))
    y1 = int(rng.integers(y0 + 1, height + 1))
    x1 = int(rng.integers(x0 + 1, width + 1))
    bm = np.zeros((height, width), dtype=np.uint8)
    bm[y0:y1, x0:x1] = 1
    return bm


@pytest.fixture
def simple_intrinsics():
    return CameraIntrinsics(fx=60.0, fy=60.0, cx=32.0, cy=24.0)


def simple_spec(frames=30, seed=7, stride=10, width=64, height=48,
                fragmentation_prob=0.0, parts=2, occlusions=(),
                step=(0.005, 0.0, 0.0), objects=None, gt_points=500):
    """Small boxes-in-front-of-camera scene used across the suite."""
    if objects is None:
        objects = (
            SynthObject("box", (-0.45, 0.0, 2.0), (0.5, 0.5, 0.3), 1),
            SynthObject("box", (0.45, 0.1, 2.4), (0.5, 0.4, 0.3), 2),
        )
    from granulift.synth import Fragmentation, OcclusionEvent
    return SynthSpec(
        seed=seed, width=width, height=height,
        intrinsics=CameraIntrinsics(fx=60.0, fy=60.0, cx=width / 2, cy=height / 2),
        trajectory=lateral_trajectory(frames, (0.0, 0.0, 0.0), step),
        objects=tuple(objects),
        fragmentation=Fragmentation(probability=fragmentation_prob, parts=parts),
        occlusion_events=tuple(OcclusionEvent(*o) for o in occlusions),
        stride=stride, gt_points_per_object=gt_points)


def identity_pose():
    return Pose4x4.identity()


def frames_from_render(render):
    """In-memory CameraFrames for every frame of a SceneRender."""
    manifest = render.manifest
    out = {}
    for entry in manifest.frames:
        f = entry.frame_index
        out[f] = CameraFrame(
            frame_index=f,
            depth=DepthMap(width=manifest.width, height=manifest.height,
                           values=render.depth_raw[f], scale=manifest.depth_scale),
            intrinsics=manifest.intrinsics,
            extrinsics=entry.extrinsics)
    return out
