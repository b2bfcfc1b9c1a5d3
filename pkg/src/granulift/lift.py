"""Back-projection of 2D masks into world-space 3D point sets.

Pixel (u, v) with metric depth d maps to the camera-frame point
``d * ((u - cx) / fx, (v - cy) / fy, 1)`` and from there through the
camera-to-world pose. Depth lookup is nearest-pixel; pixels with no depth
return (raw value 0) never produce points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidDepth, InvariantViolation, MissingTrackId
from .scene_io import (
    CameraFrame,
    CameraIntrinsics,
    LabeledPointSet,
    Mask,
    MaskSet,
    Pose4x4,
    decode_rle,
)


@dataclass(frozen=True)
class LiftConfig:
    min_points: int = 100

    def __post_init__(self):
        if self.min_points < 0:
            raise InvariantViolation("min_points must be >= 0")


@dataclass(frozen=True)
class InstancePointSet:
    instance_id: int
    points: np.ndarray  # (N, 3) float64 world coordinates
    source_frames: tuple[int, ...]
    confidence: float = 1.0


def backproject_pixel(u: float, v: float, depth_m: float,
                      intrinsics: CameraIntrinsics,
                      extrinsics: Pose4x4) -> tuple[float, float, float]:
    """Lift a single pixel with metric depth into world coordinates."""
    if depth_m <= 0:
        raise InvalidDepth(f"depth must be > 0, got {depth_m}")
    x = depth_m * (u - intrinsics.cx) / intrinsics.fx
    y = depth_m * (v - intrinsics.cy) / intrinsics.fy
    cam = np.array([x, y, depth_m, 1.0])
    world = extrinsics.matrix @ cam
    return float(world[0]), float(world[1]), float(world[2])


def project_point(p_world, intrinsics: CameraIntrinsics,
                  extrinsics: Pose4x4) -> tuple[float, float, float]:
    """Inverse of backproject_pixel: world point to (u, v, depth_m)."""
    p = np.asarray(p_world, dtype=np.float64)
    r = extrinsics.rotation
    t = extrinsics.translation
    cam = r.T @ (p - t)
    z = cam[2]
    if z <= 0:
        raise InvalidDepth(f"point projects behind the camera (z={z})")
    u = intrinsics.fx * cam[0] / z + intrinsics.cx
    v = intrinsics.fy * cam[1] / z + intrinsics.cy
    return float(u), float(v), float(z)


def lift_mask(mask: Mask, frame: CameraFrame,
              cfg: LiftConfig) -> InstancePointSet | None:
    """Lift one mask through one frame's depth; absent below min_points.

    Returns an InstancePointSet whose id is the mask's track id when set
    (0 otherwise); the caller assigns stage-specific ids.
    """
    depth = frame.depth
    if (mask.width, mask.height) != (depth.width, depth.height):
        raise DimensionMismatch(
            f"mask {mask.width}x{mask.height} vs depth {depth.width}x{depth.height}")
    bitmap = decode_rle(mask).astype(bool)
    vs, us = np.nonzero(bitmap)
    raw = depth.values[vs, us]
    valid = raw > 0
    count = int(valid.sum())
    if count < cfg.min_points:
        return None
    us = us[valid].astype(np.float64)
    vs = vs[valid].astype(np.float64)
    d = raw[valid].astype(np.float64) * depth.scale
    k = frame.intrinsics
    cam = np.column_stack([d * (us - k.cx) / k.fx,
                           d * (vs - k.cy) / k.fy,
                           d])
    world = cam @ frame.extrinsics.rotation.T + frame.extrinsics.translation
    return InstancePointSet(
        instance_id=mask.track_id if mask.track_id is not None else 0,
        points=world,
        source_frames=(frame.frame_index,),
        confidence=mask.score if mask.score is not None else 1.0)


def aggregate_stage1(frames, keyframe_masksets: dict[int, MaskSet],
                     cfg: LiftConfig) -> LabeledPointSet:
    """Union of lifted keyframe detections with serial per-mask ids.

    ``frames`` maps a frame index to its CameraFrame (any mapping or
    callable). Ids are assigned 0, 1, 2, ... in (keyframe, mask) order, so
    repeated views of one object deliberately stay separate instances.
    """
    get_frame = frames if callable(frames) else frames.__getitem__
    parts = []
    serial = 0
    for frame_index in sorted(keyframe_masksets):
        maskset = keyframe_masksets[frame_index]
        frame = get_frame(frame_index)
        for mask in maskset.masks:
            lifted = lift_mask(mask, frame, cfg)
            if lifted is not None and len(lifted.points):
                n = len(lifted.points)
                parts.append(LabeledPointSet(
                    lifted.points,
                    np.full(n, serial, dtype=np.uint32),
                    np.full(n, lifted.confidence, dtype=np.float32)))
            serial += 1
    return LabeledPointSet.concatenate(parts)


def aggregate_stage2(frames, consistent_masksets: dict[int, MaskSet],
                     cfg: LiftConfig, subsample: int = 1) -> LabeledPointSet:
    """Union of lifted tracked masks over all frames, keyed by track id.

    Multi-view observations of one track merge into one instance.
    ``subsample`` > 1 keeps only frames whose index is a multiple of it
    (keeping the subsampled frame sets nested as the factor shrinks).
    """
    if subsample < 1:
        raise InvariantViolation("subsample must be >= 1")
    get_frame = frames if callable(frames) else frames.__getitem__
    parts = []
    for frame_index in sorted(consistent_masksets):
        if frame_index % subsample != 0:
            continue
        maskset = consistent_masksets[frame_index]
        if not maskset.masks:
            continue
        frame = get_frame(frame_index)
        for mask in maskset.masks:
            if mask.track_id is None:
                raise MissingTrackId(
                    f"mask in frame {frame_index} lacks a track_id; "
                    "stage-2 aggregation requires tracker output")
            lifted = lift_mask(mask, frame, cfg)
            if lifted is not None and len(lifted.points):
                n = len(lifted.points)
                parts.append(LabeledPointSet(
                    lifted.points,
                    np.full(n, mask.track_id, dtype=np.uint32),
                    np.full(n, lifted.confidence, dtype=np.float32)))
    return LabeledPointSet.concatenate(parts)
