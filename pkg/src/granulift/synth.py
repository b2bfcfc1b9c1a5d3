"""Synthetic RGB-D scene generator and tracking oracle.

Renders analytic ray-cast depth and ground-truth instance masks for
parametric box/sphere worlds along scripted camera trajectories, fragments
keyframe masks to emulate granularity flapping, and provides a propagator
that replays ground truth (optionally with boundary erosion) so the
tracker can be verified without any learned model.

Rays are cast through the exact integer pixel coordinates used by the
lifting stage, so lifted ground-truth masks land back on the analytic
surfaces up to depth quantization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import binary_erosion

from .errors import SpecInvalid
from .scene_io import (
    CameraIntrinsics,
    FrameEntry,
    LabeledPointSet,
    Mask,
    MaskSet,
    MaskSource,
    Pose4x4,
    SceneManifest,
    decode_rle,
    encode_rle,
    save_manifest,
    save_mask_file,
    write_depth,
    write_labeled_points,
)
from .tracker import MaskPropagator, PromptEntry

_RAY_EPS = 1e-9
DEPTH_DIR = "depth"
GT_MASK_DIR = "masks/gt"
DETECTION_MASK_DIR = "masks/detections"
GT_POINTS_FILE = "gt_points.bin"
SPEC_FILE = "synth.json"


@dataclass(frozen=True)
class SynthObject:
    shape: str  # "box" (axis-aligned, size = edge lengths) or "sphere" (size = radius)
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    instance_id: int

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        c = np.array(self.center)
        if self.shape == "box":
            half = np.array(self.size) / 2.0
        else:
            half = np.full(3, self.size[0])
        return c - half, c + half


@dataclass(frozen=True)
class OcclusionEvent:
    instance_id: int
    start_frame: int
    end_frame: int  # inclusive


@dataclass(frozen=True)
class Fragmentation:
    probability: float = 0.0
    parts: int = 2


@dataclass(frozen=True)
class SynthSpec:
    seed: int
    width: int
    height: int
    intrinsics: CameraIntrinsics
    trajectory: tuple[Pose4x4, ...]
    objects: tuple[SynthObject, ...]
    fragmentation: Fragmentation = Fragmentation()
    occlusion_events: tuple[OcclusionEvent, ...] = ()
    depth_scale: float = 0.001
    stride: int = 10
    gt_points_per_object: int = 2000
    # keep only GT surface points actually observed by some frame, the
    # usual evaluation universe for scanned scenes
    gt_observed_only: bool = False
    scene_id: str = "synthetic"

    def __post_init__(self):
        if not self.trajectory:
            raise SpecInvalid("trajectory must contain at least one pose")
        if self.width <= 0 or self.height <= 0:
            raise SpecInvalid("image dimensions must be positive")
        if not 0.0 <= self.fragmentation.probability <= 1.0:
            raise SpecInvalid("fragmentation probability must lie in [0, 1]")
        if not 2 <= self.fragmentation.parts <= 4:
            raise SpecInvalid("fragmentation parts must lie in 2..4")
        if self.stride < 1:
            raise SpecInvalid("stride must be >= 1")
        ids = [o.instance_id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise SpecInvalid("object instance_ids must be distinct")
        for o in self.objects:
            if o.shape not in ("box", "sphere"):
                raise SpecInvalid(f"unknown shape {o.shape!r}")
            if any(s <= 0 for s in o.size):
                raise SpecInvalid("object sizes must be positive")
            if o.instance_id < 0:
                raise SpecInvalid("instance_id must be non-negative")
        _check_disjoint(self.objects)

    @property
    def frame_count(self) -> int:
        return len(self.trajectory)

    def hidden(self, instance_id: int, frame_index: int) -> bool:
        return any(e.instance_id == instance_id
                   and e.start_frame <= frame_index <= e.end_frame
                   for e in self.occlusion_events)

    def keyframes(self) -> list[int]:
        return list(range(0, self.frame_count, self.stride))


def _check_disjoint(objects) -> None:
    for i in range(len(objects)):
        for j in range(i + 1, len(objects)):
            a, b = objects[i], objects[j]
            if a.shape == "sphere" and b.shape == "sphere":
                gap = np.linalg.norm(np.array(a.center) - np.array(b.center))
                overlap = gap < a.size[0] + b.size[0]
            elif a.shape == "box" and b.shape == "box":
                alo, ahi = a.bounds()
                blo, bhi = b.bounds()
                overlap = bool(np.all(ahi > blo) and np.all(bhi > alo))
            else:
                box, sph = (a, b) if a.shape == "box" else (b, a)
                lo, hi = box.bounds()
                nearest = np.clip(np.array(sph.center), lo, hi)
                overlap = np.linalg.norm(nearest - np.array(sph.center)) < sph.size[0]
            if overlap:
                raise SpecInvalid(
                    f"objects {a.instance_id} and {b.instance_id} overlap in world space")


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

def lateral_trajectory(frames: int, start, step) -> tuple[Pose4x4, ...]:
    """Identity-rotation camera translating by ``step`` each frame."""
    poses = []
    start = np.asarray(start, dtype=np.float64)
    step = np.asarray(step, dtype=np.float64)
    for i in range(frames):
        m = np.eye(4)
        m[:3, 3] = start + i * step
        poses.append(Pose4x4.from_matrix(m))
    return tuple(poses)


def orbit_trajectory(frames: int, center, radius: float, height: float,
                     start_angle: float = 0.0,
                     step_angle: float = 0.02) -> tuple[Pose4x4, ...]:
    """Camera circling ``center`` in the XZ plane, always looking at it."""
    center = np.asarray(center, dtype=np.float64)
    poses = []
    for i in range(frames):
        ang = start_angle + i * step_angle
        eye = center + np.array([radius * np.sin(ang), height,
                                 -radius * np.cos(ang)])
        z = center - eye
        z = z / np.linalg.norm(z)
        x = np.cross([0.0, 1.0, 0.0], z)
        x = x / np.linalg.norm(x)
        y = np.cross(z, x)
        m = np.eye(4)
        m[:3, 0], m[:3, 1], m[:3, 2], m[:3, 3] = x, y, z, eye
        poses.append(Pose4x4.from_matrix(m))
    return tuple(poses)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def _ray_box(origin, dirs, lo, hi):
    """Smallest positive ray parameter against an AABB; inf where missed."""
    t_near = np.full(dirs.shape[:-1], -np.inf)
    t_far = np.full(dirs.shape[:-1], np.inf)
    for axis in range(3):
        d = dirs[..., axis]
        o = origin[axis]
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (lo[axis] - o) * inv
            t2 = (hi[axis] - o) * inv
        near = np.minimum(t1, t2)
        far = np.maximum(t1, t2)
        parallel = d == 0
        inside = lo[axis] <= o <= hi[axis]
        near = np.where(parallel, -np.inf if inside else np.inf, near)
        far = np.where(parallel, np.inf if inside else -np.inf, far)
        t_near = np.maximum(t_near, near)
        t_far = np.minimum(t_far, far)
    hit = (t_far >= t_near) & (t_far > _RAY_EPS) & (t_near > _RAY_EPS)
    return np.where(hit, t_near, np.inf)


def _ray_sphere(origin, dirs, center, radius):
    oc = origin - center
    a = np.sum(dirs * dirs, axis=-1)
    b = 2.0 * (dirs @ oc)
    c = float(oc @ oc) - radius * radius
    disc = b * b - 4.0 * a * c
    with np.errstate(invalid="ignore"):
        s = (-b - np.sqrt(disc)) / (2.0 * a)
    hit = (disc >= 0) & (s > _RAY_EPS)
    return np.where(hit, s, np.inf)


@dataclass
class SceneRender:
    spec: SynthSpec
    manifest: SceneManifest
    depth_raw: dict[int, np.ndarray]          # frame -> (H, W) uint16
    gt_masksets: dict[int, MaskSet]           # per-frame GT masks, ids attached
    gt_points: LabeledPointSet
    detections: dict[int, MaskSet] = field(default_factory=dict)


def render_scene(spec: SynthSpec) -> SceneRender:
    """Ray-cast every frame of the spec into depth rasters and GT masks.

    Depth stores the camera-frame Z of the nearest surface, quantized to
    ``depth_scale`` units; rays pass through integer pixel coordinates to
    mirror the back-projection convention.
    """
    w, h = spec.width, spec.height
    k = spec.intrinsics
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    d_cam = np.stack([(us - k.cx) / k.fx, (vs - k.cy) / k.fy,
                      np.ones_like(us)], axis=-1)

    depth_raw: dict[int, np.ndarray] = {}
    gt_masksets: dict[int, MaskSet] = {}
    frames = []
    for f, pose in enumerate(spec.trajectory):
        dirs = d_cam @ pose.rotation.T
        origin = pose.translation
        s_best = np.full((h, w), np.inf)
        winner = np.full((h, w), -1, dtype=np.int64)
        for idx, obj in enumerate(spec.objects):
            if spec.hidden(obj.instance_id, f):
                continue
            if obj.shape == "box":
                lo, hi = obj.bounds()
                s = _ray_box(origin, dirs, lo, hi)
            else:
                s = _ray_sphere(origin, dirs, np.array(obj.center), obj.size[0])
            closer = s < s_best
            s_best[closer] = s[closer]
            winner[closer] = idx

        depth_m = np.where(winner >= 0, s_best, 0.0)
        raw = np.clip(np.rint(depth_m / spec.depth_scale), 0, 65535).astype(np.uint16)
        # a hit quantized to 0 would read as "no return"; nudge it to 1 unit
        raw[(winner >= 0) & (raw == 0)] = 1
        depth_raw[f] = raw

        masks = []
        for idx, obj in enumerate(spec.objects):
            bitmap = winner == idx
            if bitmap.any():
                masks.append(encode_rle(bitmap, track_id=obj.instance_id))
        gt_masksets[f] = MaskSet(frame_index=f, masks=tuple(masks))
        frames.append(FrameEntry(
            frame_index=f,
            depth_path=f"{DEPTH_DIR}/frame_{f:06d}.raw",
            extrinsics=pose,
            mask_path=(f"{DETECTION_MASK_DIR}/frame_{f:06d}.json"
                       if f in spec.keyframes() else None)))

    manifest = SceneManifest(scene_id=spec.scene_id, width=w, height=h,
                             intrinsics=k, frames=tuple(frames),
                             depth_scale=spec.depth_scale)
    render = SceneRender(spec=spec, manifest=manifest, depth_raw=depth_raw,
                         gt_masksets=gt_masksets,
                         gt_points=_sample_gt_points(spec))
    if spec.gt_observed_only and len(render.gt_points):
        render.gt_points = observed_gt_points(render)
    return render


def observed_gt_points(render: "SceneRender",
                       tol: float = 0.02) -> LabeledPointSet:
    """Restrict GT surface samples to points seen by at least one frame.

    A point counts as observed when it projects into some frame and the
    rendered depth at its pixel agrees with the point's camera depth
    within ``tol`` meters (occluders fail this check).
    """
    pts = render.gt_points
    spec = render.spec
    xyz = pts.xyz
    visible = np.zeros(len(pts), dtype=bool)
    k = spec.intrinsics
    for f, pose in enumerate(spec.trajectory):
        cam = (xyz - pose.translation) @ pose.rotation
        z = cam[:, 2]
        ok = z > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.rint(k.fx * cam[:, 0] / z + k.cx).astype(np.int64)
            v = np.rint(k.fy * cam[:, 1] / z + k.cy).astype(np.int64)
        ok &= (u >= 0) & (u < spec.width) & (v >= 0) & (v < spec.height)
        idx = np.flatnonzero(ok)
        if idx.size == 0:
            continue
        depth_m = render.depth_raw[f][v[idx], u[idx]] * spec.depth_scale
        agree = (depth_m > 0) & (np.abs(depth_m - z[idx]) <= tol)
        visible[idx[agree]] = True
    return pts.take(visible)


def _sample_gt_points(spec: SynthSpec) -> LabeledPointSet:
    parts = []
    for obj in spec.objects:
        rng = np.random.default_rng((spec.seed, 701, obj.instance_id))
        n = spec.gt_points_per_object
        if n == 0:
            continue
        if obj.shape == "sphere":
            v = rng.normal(size=(n, 3))
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            pts = np.array(obj.center) + v * obj.size[0]
        else:
            lo, hi = obj.bounds()
            ext = hi - lo
            face_areas = np.array([ext[1] * ext[2], ext[1] * ext[2],
                                   ext[0] * ext[2], ext[0] * ext[2],
                                   ext[0] * ext[1], ext[0] * ext[1]])
            faces = rng.choice(6, size=n, p=face_areas / face_areas.sum())
            uv = rng.uniform(size=(n, 2))
            pts = np.empty((n, 3))
            for face in range(6):
                sel = faces == face
                axis = face // 2
                others = [a for a in range(3) if a != axis]
                pts[sel, axis] = hi[axis] if face % 2 else lo[axis]
                pts[sel, others[0]] = lo[others[0]] + uv[sel, 0] * ext[others[0]]
                pts[sel, others[1]] = lo[others[1]] + uv[sel, 1] * ext[others[1]]
        parts.append(LabeledPointSet(
            pts, np.full(n, obj.instance_id, dtype=np.uint32),
            np.ones(n, dtype=np.float32)))
    return LabeledPointSet.concatenate(parts)


# ---------------------------------------------------------------------------
# fragmentation
# ---------------------------------------------------------------------------

def fragment_masks(gt: MaskSet, spec: SynthSpec,
                   seed_tag: int = 104729) -> MaskSet:
    """Replace selected GT masks by 2..4 disjoint parts with the same union.

    Selection and cut placement draw from streams split per (seed, frame,
    mask index), so repeated invocations agree bit for bit.
    """
    prob = spec.fragmentation.probability
    out = []
    for i, mask in enumerate(gt.masks):
        rng = np.random.default_rng((spec.seed, seed_tag, gt.frame_index, i))
        if rng.random() >= prob:
            out.append(mask)
            continue
        out.extend(_split_mask(mask, spec.fragmentation.parts, rng))
    return MaskSet(frame_index=gt.frame_index, masks=tuple(out),
                   granularity_tag=gt.granularity_tag)


def _split_mask(mask: Mask, parts: int, rng) -> list[Mask]:
    bitmap = decode_rle(mask).astype(bool)
    rows = np.flatnonzero(bitmap.any(axis=1))
    cols = np.flatnonzero(bitmap.any(axis=0))
    # cut across the longer bounding-box extent
    if len(cols) >= len(rows):
        line_counts = bitmap.sum(axis=0)
        horizontal = True
    else:
        line_counts = bitmap.sum(axis=1)
        horizontal = False
    occupied = np.flatnonzero(line_counts)
    k = min(parts, len(occupied))
    if k < 2:
        return [mask]
    cum = np.cumsum(line_counts)
    total = cum[-1]
    jitter = rng.uniform(-0.25, 0.25, size=k - 1)
    targets = total * ((np.arange(1, k) + jitter) / k)
    cuts = np.searchsorted(cum, targets) + 1
    cuts = np.unique(np.clip(cuts, occupied[0] + 1, occupied[-1]))
    edges = [occupied[0]] + list(cuts) + [occupied[-1] + 1]

    out = []
    for a, b in zip(edges[:-1], edges[1:]):
        part = np.zeros_like(bitmap)
        if horizontal:
            part[:, a:b] = bitmap[:, a:b]
        else:
            part[a:b, :] = bitmap[a:b, :]
        if part.any():
            out.append(encode_rle(part, score=mask.score, track_id=mask.track_id,
                                  source=mask.source, granularity=mask.granularity))
    return out if len(out) >= 2 else [mask]


def strip_identity(maskset: MaskSet) -> MaskSet:
    """Detection-file view of GT masks: drop the ground-truth instance ids."""
    masks = tuple(Mask(width=m.width, height=m.height, rle=m.rle, score=m.score,
                       track_id=None, source=MaskSource.DETECTION,
                       granularity=m.granularity)
                  for m in maskset.masks)
    return MaskSet(frame_index=maskset.frame_index, masks=masks,
                   granularity_tag=maskset.granularity_tag)


def build_detections(render: SceneRender) -> dict[int, MaskSet]:
    """Fragmented, identity-stripped keyframe detections for the tracker."""
    out = {}
    for kf in render.spec.keyframes():
        fragmented = fragment_masks(render.gt_masksets[kf], render.spec)
        out[kf] = strip_identity(fragmented)
    return out


# ---------------------------------------------------------------------------
# oracle propagation
# ---------------------------------------------------------------------------

class OraclePropagator(MaskPropagator):
    """Replays ground truth for whichever object a prompt overlaps best.

    A prompt covering only a fragment of an object still propagates the
    full object mask (the stand-in completes partial prompts across
    views); occluded frames yield no mask. ``erosion_prob`` drops boundary
    pixels at random to emulate propagation drift.
    """

    def __init__(self, gt_masksets: dict[int, MaskSet],
                 erosion_prob: float = 0.0, seed: int = 0):
        self.gt_masksets = gt_masksets
        self.erosion_prob = erosion_prob
        self.seed = seed
        self.assignments: dict[int, int] = {}  # track_id -> chosen GT id

    def _pick_object(self, prompt: PromptEntry) -> int | None:
        from .maskproc import rle_intersection_area
        gt = self.gt_masksets.get(prompt.keyframe_index)
        if gt is None:
            return None
        best_id, best_inter = None, 0
        for m in gt.masks:
            inter = rle_intersection_area(prompt.mask, m)
            if inter > best_inter or (inter == best_inter and inter > 0
                                      and (best_id is None or m.track_id < best_id)):
                best_id, best_inter = m.track_id, inter
        return best_id

    def _emit(self, gt_mask: Mask, track_id: int, frame_index: int) -> Mask | None:
        if self.erosion_prob <= 0:
            return gt_mask.with_track(track_id, MaskSource.PROPAGATED)
        bitmap = decode_rle(gt_mask).astype(bool)
        interior = binary_erosion(bitmap)
        boundary = bitmap & ~interior
        rng = np.random.default_rng((self.seed, 911, track_id, frame_index))
        drop = boundary & (rng.random(bitmap.shape) < self.erosion_prob)
        noisy = bitmap & ~drop
        if not noisy.any():
            noisy = bitmap
        return encode_rle(noisy, track_id=track_id, source=MaskSource.PROPAGATED)

    def propagate(self, prompts, frame_indices):
        out: dict[int, dict[int, Mask]] = {}
        for prompt in prompts:
            chosen = self._pick_object(prompt)
            out[prompt.track_id] = {}
            if chosen is None:
                continue
            self.assignments[prompt.track_id] = chosen
            for f in frame_indices:
                gt = self.gt_masksets.get(f)
                if gt is None:
                    continue
                for m in gt.masks:
                    if m.track_id == chosen:
                        emitted = self._emit(m, prompt.track_id, f)
                        if emitted is not None:
                            out[prompt.track_id][f] = emitted
                        break
        return out


# ---------------------------------------------------------------------------
# spec (de)serialization and scene writing
# ---------------------------------------------------------------------------

def spec_from_json(doc: dict) -> SynthSpec:
    if not isinstance(doc, dict):
        raise SpecInvalid("synth spec root must be an object")
    try:
        image = doc["image"]
        intrinsics = CameraIntrinsics(fx=float(image["fx"]), fy=float(image["fy"]),
                                      cx=float(image["cx"]), cy=float(image["cy"]))
        objects = []
        for o in doc.get("objects", []):
            size = o["size"]
            if isinstance(size, (int, float)):
                size = (float(size),) * 3
            else:
                size = tuple(float(s) for s in size)
            objects.append(SynthObject(shape=o["shape"],
                                       center=tuple(float(c) for c in o["center"]),
                                       size=size,
                                       instance_id=int(o["instance_id"])))
        trajectory = _trajectory_from_json(doc["trajectory"])
        frag = doc.get("fragmentation", {})
        occl = [OcclusionEvent(instance_id=int(e["instance_id"]),
                               start_frame=int(e["frames"][0]),
                               end_frame=int(e["frames"][1]))
                for e in doc.get("occlusion_events", [])]
        return SynthSpec(
            seed=int(doc["seed"]),
            width=int(image["width"]),
            height=int(image["height"]),
            intrinsics=intrinsics,
            trajectory=trajectory,
            objects=tuple(objects),
            fragmentation=Fragmentation(
                probability=float(frag.get("probability", 0.0)),
                parts=int(frag.get("parts", 2))),
            occlusion_events=tuple(occl),
            depth_scale=float(doc.get("depth_scale", 0.001)),
            stride=int(doc.get("stride", 10)),
            gt_points_per_object=int(doc.get("gt_points_per_object", 2000)),
            gt_observed_only=bool(doc.get("gt_observed_only", False)),
            scene_id=str(doc.get("scene_id", "synthetic")))
    except (KeyError, TypeError, ValueError) as exc:
        raise SpecInvalid(f"malformed synth spec: {exc!r}") from exc


def _trajectory_from_json(doc) -> tuple[Pose4x4, ...]:
    if isinstance(doc, list):
        return tuple(Pose4x4(tuple(float(v) for v in pose)) for pose in doc)
    kind = doc.get("kind")
    if kind == "lateral":
        return lateral_trajectory(int(doc["frames"]), doc["start"], doc["step"])
    if kind == "orbit":
        return orbit_trajectory(int(doc["frames"]), doc["center"],
                                float(doc["radius"]), float(doc["height"]),
                                float(doc.get("start_angle", 0.0)),
                                float(doc.get("step_angle", 0.02)))
    raise SpecInvalid(f"unknown trajectory kind {kind!r}")


def load_spec(path) -> SynthSpec:
    path = Path(path)
    if not path.is_file():
        raise SpecInvalid(f"synth spec not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SpecInvalid(f"synth spec is not valid JSON: {exc}") from exc
    return spec_from_json(doc)


def spec_to_json(spec: SynthSpec) -> str:
    doc = {
        "seed": spec.seed,
        "scene_id": spec.scene_id,
        "image": {"width": spec.width, "height": spec.height,
                  "fx": spec.intrinsics.fx, "fy": spec.intrinsics.fy,
                  "cx": spec.intrinsics.cx, "cy": spec.intrinsics.cy},
        "depth_scale": spec.depth_scale,
        "stride": spec.stride,
        "gt_points_per_object": spec.gt_points_per_object,
        "gt_observed_only": spec.gt_observed_only,
        "objects": [{"shape": o.shape, "center": list(o.center),
                     "size": list(o.size), "instance_id": o.instance_id}
                    for o in spec.objects],
        "trajectory": [list(p.values) for p in spec.trajectory],
        "fragmentation": {"probability": spec.fragmentation.probability,
                          "parts": spec.fragmentation.parts},
        "occlusion_events": [{"instance_id": e.instance_id,
                              "frames": [e.start_frame, e.end_frame]}
                             for e in spec.occlusion_events],
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def write_scene(render: SceneRender, out_dir) -> Path:
    """Write a rendered scene (with detections) in the interchange layout."""
    out_dir = Path(out_dir)
    (out_dir / DEPTH_DIR).mkdir(parents=True, exist_ok=True)
    (out_dir / GT_MASK_DIR).mkdir(parents=True, exist_ok=True)
    (out_dir / DETECTION_MASK_DIR).mkdir(parents=True, exist_ok=True)
    if not render.detections:
        render.detections = build_detections(render)
    for f, raw in render.depth_raw.items():
        write_depth(raw, out_dir / DEPTH_DIR / f"frame_{f:06d}.raw")
    for f, maskset in render.gt_masksets.items():
        save_mask_file(maskset, out_dir / GT_MASK_DIR / f"frame_{f:06d}.json")
    for f, maskset in render.detections.items():
        save_mask_file(maskset, out_dir / DETECTION_MASK_DIR / f"frame_{f:06d}.json")
    if len(render.gt_points):
        write_labeled_points(render.gt_points, out_dir / GT_POINTS_FILE)
    (out_dir / SPEC_FILE).write_text(spec_to_json(render.spec))
    save_manifest(render.manifest, out_dir / "manifest.json")
    return out_dir


def generate_scene(spec: SynthSpec, out_dir) -> SceneRender:
    render = render_scene(spec)
    render.detections = build_detections(render)
    write_scene(render, out_dir)
    return render
