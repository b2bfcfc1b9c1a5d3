"""Scene interchange formats: manifests, depth rasters, mask sets, labeled points.

On-disk conventions (all little-endian, all paths relative to the manifest):

* ``manifest.json``: ``{scene_id, width, height, depth_scale,
  intrinsics: {fx, fy, cx, cy}, frames: [{frame_index, depth_path,
  extrinsics: [16 numbers], mask_path?}]}``.
* Depth raster: raw ``u16``, row-major, ``width * height`` values; value 0
  means no depth return and is never converted to metric depth.
* Mask file: JSON array of ``{width, height, rle, score?, track_id?,
  source, granularity?}``.
* Labeled points (binary): magic ``GLPT``, ``u32`` count, then per record
  ``f64 x, y, z`` + ``u32 instance_id`` + ``f32 confidence``.

The RLE convention is COCO-style uncompressed counts but **row-major**:
alternating background/foreground run lengths over the flattened raster,
first count is a background run and may be 0.

All types are immutable values after construction and safe to share across
threads.
"""

from __future__ import annotations

import colorsys
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    CorruptRLE,
    EmptyMask,
    InvariantViolation,
    IoFailure,
    MissingFile,
    SchemaViolation,
)

POINTS_MAGIC = b"GLPT"
_POINT_RECORD = np.dtype([("x", "<f8"), ("y", "<f8"), ("z", "<f8"),
                          ("instance_id", "<u4"), ("confidence", "<f4")])


class MaskSource(str, Enum):
    DETECTION = "detection"
    PROPAGATED = "propagated"


class Granularity(str, Enum):
    FINE = "fine"
    COARSE = "coarse"
    UNTAGGED = "untagged"


class PointsFormat(str, Enum):
    BINARY = "binary"
    COLORED_PLY = "colored_ply"


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not self.fx > 0:
            raise InvariantViolation("intrinsics.fx must be > 0")
        if not self.fy > 0:
            raise InvariantViolation("intrinsics.fy must be > 0")


@dataclass(frozen=True)
class Pose4x4:
    """Rigid camera-to-world transform, 16 row-major values."""

    values: tuple[float, ...]

    ORTHONORMAL_TOL = 1e-6

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if len(vals) != 16:
            raise InvariantViolation("pose must have exactly 16 values")
        if vals[12:16] != (0.0, 0.0, 0.0, 1.0):
            raise InvariantViolation("pose bottom row must be (0, 0, 0, 1)")
        r = self.rotation
        err = np.abs(r.T @ r - np.eye(3)).max()
        if err > self.ORTHONORMAL_TOL:
            raise InvariantViolation(
                f"pose rotation not orthonormal (max deviation {err:.3g})")

    @classmethod
    def identity(cls) -> "Pose4x4":
        return cls(tuple(np.eye(4).ravel()))

    @classmethod
    def from_matrix(cls, m) -> "Pose4x4":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise InvariantViolation("pose matrix must be 4x4")
        return cls(tuple(m.ravel()))

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.values, dtype=np.float64).reshape(4, 4)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]


@dataclass(frozen=True)
class DepthMap:
    """u16 depth raster; ``scale`` converts raw units to meters."""

    width: int
    height: int
    values: np.ndarray  # (height, width) uint16, not to be mutated
    scale: float

    def __post_init__(self):
        if self.values.shape != (self.height, self.width):
            raise InvariantViolation(
                f"depth raster shape {self.values.shape} does not match "
                f"{self.height}x{self.width}")
        if self.values.dtype != np.uint16:
            raise InvariantViolation("depth raster must be uint16")
        if not self.scale > 0:
            raise InvariantViolation("depth scale must be > 0")

    def meters(self) -> np.ndarray:
        """Metric depth with invalid (zero) pixels mapped to 0.0."""
        return self.values.astype(np.float64) * self.scale


@dataclass(frozen=True)
class Mask:
    """Binary instance mask in row-major RLE."""

    width: int
    height: int
    rle: tuple[int, ...]
    score: float | None = None
    track_id: int | None = None
    source: MaskSource = MaskSource.DETECTION
    granularity: Granularity = Granularity.UNTAGGED

    def __post_init__(self):
        object.__setattr__(self, "rle", tuple(int(c) for c in self.rle))
        if self.width <= 0 or self.height <= 0:
            raise SchemaViolation("mask width/height must be > 0")
        if any(c < 0 for c in self.rle):
            raise CorruptRLE("rle counts must be non-negative")
        if self.score is not None and not 0.0 <= self.score <= 1.0:
            raise SchemaViolation(f"mask score {self.score} outside [0, 1]")
        if self.track_id is not None and self.track_id < 0:
            raise SchemaViolation("mask track_id must be non-negative")

    @property
    def area(self) -> int:
        return int(sum(self.rle[1::2]))

    def with_track(self, track_id: int, source: MaskSource) -> "Mask":
        return replace(self, track_id=track_id, source=source)


@dataclass(frozen=True)
class MaskSet:
    frame_index: int
    masks: tuple[Mask, ...]
    granularity_tag: Granularity = Granularity.UNTAGGED

    def __post_init__(self):
        object.__setattr__(self, "masks", tuple(self.masks))
        if self.frame_index < 0:
            raise InvariantViolation("frame_index must be >= 0")
        dims = {(m.width, m.height) for m in self.masks}
        if len(dims) > 1:
            raise InvariantViolation(f"mask set mixes dimensions: {sorted(dims)}")

    def __len__(self) -> int:
        return len(self.masks)


@dataclass(frozen=True)
class FrameEntry:
    frame_index: int
    depth_path: str
    extrinsics: Pose4x4
    mask_path: str | None = None


@dataclass(frozen=True)
class SceneManifest:
    scene_id: str
    width: int
    height: int
    intrinsics: CameraIntrinsics
    frames: tuple[FrameEntry, ...]
    depth_scale: float = 0.001
    # resolution root for relative paths; set by load/save, never serialized
    base_dir: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if self.width <= 0 or self.height <= 0:
            raise SchemaViolation("manifest width/height must be > 0")
        if not self.depth_scale > 0:
            raise SchemaViolation("manifest depth_scale must be > 0")
        indices = [f.frame_index for f in self.frames]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise SchemaViolation("frames.frame_index values must be strictly increasing")

    @property
    def frame_indices(self) -> list[int]:
        return [f.frame_index for f in self.frames]

    def frame(self, frame_index: int) -> FrameEntry:
        for f in self.frames:
            if f.frame_index == frame_index:
                return f
        raise MissingFile(f"frame {frame_index} not in manifest")

    def resolve(self, rel_path: str) -> Path:
        if self.base_dir is None:
            return Path(rel_path)
        return self.base_dir / rel_path


@dataclass(frozen=True)
class CameraFrame:
    """Everything needed to project one frame: depth raster plus cameras."""

    frame_index: int
    depth: DepthMap
    intrinsics: CameraIntrinsics
    extrinsics: Pose4x4
    masks: MaskSet | None = None


class LabeledPointSet:
    """3D world-frame points with per-point instance id and confidence.

    Stored columnar: ``xyz`` (N, 3) float64, ``instance_ids`` (N,) uint32,
    ``confidences`` (N,) float32.
    """

    def __init__(self, xyz, instance_ids, confidences):
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        ids = np.asarray(instance_ids, dtype=np.uint32).reshape(-1)
        conf = np.asarray(confidences, dtype=np.float32).reshape(-1)
        if not (len(xyz) == len(ids) == len(conf)):
            raise InvariantViolation("labeled point columns must share length")
        if len(xyz) and not np.isfinite(xyz).all():
            raise InvariantViolation("point coordinates must be finite")
        if len(conf) and (conf.min() < 0.0 or conf.max() > 1.0):
            raise InvariantViolation("confidences must lie in [0, 1]")
        self.xyz = xyz
        self.instance_ids = ids
        self.confidences = conf

    def __len__(self) -> int:
        return len(self.xyz)

    def __eq__(self, other) -> bool:
        return (isinstance(other, LabeledPointSet)
                and np.array_equal(self.xyz, other.xyz)
                and np.array_equal(self.instance_ids, other.instance_ids)
                and np.array_equal(self.confidences, other.confidences))

    @classmethod
    def empty(cls) -> "LabeledPointSet":
        return cls(np.empty((0, 3)), np.empty(0, np.uint32), np.empty(0, np.float32))

    @classmethod
    def concatenate(cls, parts) -> "LabeledPointSet":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        return cls(np.concatenate([p.xyz for p in parts]),
                   np.concatenate([p.instance_ids for p in parts]),
                   np.concatenate([p.confidences for p in parts]))

    def take(self, index) -> "LabeledPointSet":
        return LabeledPointSet(self.xyz[index], self.instance_ids[index],
                               self.confidences[index])


# ---------------------------------------------------------------------------
# RLE codec
# ---------------------------------------------------------------------------

def encode_rle(bitmap, score=None, track_id=None,
               source: MaskSource = MaskSource.DETECTION,
               granularity: Granularity = Granularity.UNTAGGED) -> Mask:
    """Encode a binary 2D raster into a row-major RLE mask.

    Raises EmptyMask when the bitmap has no foreground pixels.
    """
    bitmap = np.asarray(bitmap)
    if bitmap.ndim != 2:
        raise SchemaViolation("bitmap must be 2D")
    flat = (bitmap.reshape(-1) != 0).astype(np.uint8)
    if not flat.any():
        raise EmptyMask("cannot encode a mask with zero foreground pixels")
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(bounds)
    if flat[0] == 1:
        counts = np.concatenate(([0], counts))
    h, w = bitmap.shape
    return Mask(width=w, height=h, rle=tuple(int(c) for c in counts),
                score=score, track_id=track_id, source=source,
                granularity=granularity)


def decode_rle(mask: Mask) -> np.ndarray:
    """Decode a mask to a (height, width) uint8 raster.

    Raises CorruptRLE when counts do not sum to width * height.
    """
    counts = np.asarray(mask.rle, dtype=np.int64)
    total = int(counts.sum())
    if total != mask.width * mask.height:
        raise CorruptRLE(
            f"rle counts sum to {total}, expected {mask.width * mask.height}")
    values = np.zeros(len(counts), dtype=np.uint8)
    values[1::2] = 1
    return np.repeat(values, counts).reshape(mask.height, mask.width)


def foreground_intervals(mask: Mask) -> tuple[np.ndarray, np.ndarray]:
    """Half-open [start, end) foreground intervals over the flattened raster.

    Assumes a structurally valid RLE (counts sum already checked at load or
    encode time); intervals are sorted and non-overlapping.
    """
    counts = np.asarray(mask.rle, dtype=np.int64)
    bounds = np.concatenate(([0], np.cumsum(counts)))
    n = len(counts)
    return bounds[1:n:2], bounds[2:n + 1:2]


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

def _require(doc: dict, key: str, kind, where: str):
    if key not in doc:
        raise SchemaViolation(f"{where}.{key} is missing")
    value = doc[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool):
        raise SchemaViolation(f"{where}.{key} has wrong type ({type(value).__name__})")
    return value


def load_manifest(path) -> SceneManifest:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaViolation("manifest root must be an object")

    scene_id = _require(doc, "scene_id", str, "manifest")
    width = _require(doc, "width", int, "manifest")
    height = _require(doc, "height", int, "manifest")
    depth_scale = _require(doc, "depth_scale", float, "manifest")
    intr_doc = _require(doc, "intrinsics", dict, "manifest")
    intrinsics = CameraIntrinsics(
        fx=_require(intr_doc, "fx", float, "intrinsics"),
        fy=_require(intr_doc, "fy", float, "intrinsics"),
        cx=_require(intr_doc, "cx", float, "intrinsics"),
        cy=_require(intr_doc, "cy", float, "intrinsics"))

    frames = []
    for i, entry in enumerate(_require(doc, "frames", list, "manifest")):
        where = f"frames[{i}]"
        if not isinstance(entry, dict):
            raise SchemaViolation(f"{where} must be an object")
        ext = _require(entry, "extrinsics", list, where)
        if len(ext) != 16 or not all(isinstance(v, (int, float)) for v in ext):
            raise SchemaViolation(f"{where}.extrinsics must be 16 numbers")
        mask_path = entry.get("mask_path")
        if mask_path is not None and not isinstance(mask_path, str):
            raise SchemaViolation(f"{where}.mask_path must be a string")
        frames.append(FrameEntry(
            frame_index=_require(entry, "frame_index", int, where),
            depth_path=_require(entry, "depth_path", str, where),
            extrinsics=Pose4x4(tuple(float(v) for v in ext)),
            mask_path=mask_path))

    manifest = SceneManifest(scene_id=scene_id, width=width, height=height,
                             intrinsics=intrinsics, frames=tuple(frames),
                             depth_scale=depth_scale, base_dir=path.parent)
    for f in manifest.frames:
        if not manifest.resolve(f.depth_path).is_file():
            raise MissingFile(f"depth raster missing: {f.depth_path}")
        if f.mask_path is not None and not manifest.resolve(f.mask_path).is_file():
            raise MissingFile(f"mask file missing: {f.mask_path}")
    return manifest


def manifest_to_json(manifest: SceneManifest) -> str:
    doc = {
        "scene_id": manifest.scene_id,
        "width": manifest.width,
        "height": manifest.height,
        "depth_scale": float(manifest.depth_scale),
        "intrinsics": {"fx": float(manifest.intrinsics.fx),
                       "fy": float(manifest.intrinsics.fy),
                       "cx": float(manifest.intrinsics.cx),
                       "cy": float(manifest.intrinsics.cy)},
        "frames": [],
    }
    for f in manifest.frames:
        entry = {"frame_index": f.frame_index,
                 "depth_path": f.depth_path,
                 "extrinsics": [float(v) for v in f.extrinsics.values]}
        if f.mask_path is not None:
            entry["mask_path"] = f.mask_path
        doc["frames"].append(entry)
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def save_manifest(manifest: SceneManifest, path) -> SceneManifest:
    path = Path(path)
    try:
        path.write_text(manifest_to_json(manifest))
    except OSError as exc:
        raise IoFailure(f"cannot write manifest: {exc}") from exc
    return replace(manifest, base_dir=path.parent)


# ---------------------------------------------------------------------------
# depth rasters
# ---------------------------------------------------------------------------

def read_depth(path, width: int, height: int, scale: float) -> DepthMap:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"depth raster not found: {path}")
    raw = np.frombuffer(path.read_bytes(), dtype="<u2")
    if raw.size != width * height:
        raise InvariantViolation(
            f"depth raster {path} has {raw.size} values, expected {width * height}")
    return DepthMap(width=width, height=height,
                    values=raw.reshape(height, width).astype(np.uint16),
                    scale=scale)


def write_depth(values: np.ndarray, path) -> None:
    values = np.ascontiguousarray(values, dtype="<u2")
    try:
        Path(path).write_bytes(values.tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write depth raster: {exc}") from exc


def load_camera_frame(manifest: SceneManifest, frame_index: int) -> CameraFrame:
    entry = manifest.frame(frame_index)
    depth = read_depth(manifest.resolve(entry.depth_path),
                       manifest.width, manifest.height, manifest.depth_scale)
    masks = None
    if entry.mask_path is not None:
        masks = load_mask_file(manifest.resolve(entry.mask_path), frame_index)
    return CameraFrame(frame_index=frame_index, depth=depth,
                       intrinsics=manifest.intrinsics,
                       extrinsics=entry.extrinsics, masks=masks)


# ---------------------------------------------------------------------------
# mask files
# ---------------------------------------------------------------------------

def mask_to_record(mask: Mask) -> dict:
    rec = {"width": mask.width, "height": mask.height,
           "rle": list(mask.rle), "source": mask.source.value}
    if mask.score is not None:
        rec["score"] = float(mask.score)
    if mask.track_id is not None:
        rec["track_id"] = int(mask.track_id)
    if mask.granularity is not Granularity.UNTAGGED:
        rec["granularity"] = mask.granularity.value
    return rec


def mask_from_record(rec: dict, where: str = "mask") -> Mask:
    if not isinstance(rec, dict):
        raise SchemaViolation(f"{where} must be an object")
    width = _require(rec, "width", int, where)
    height = _require(rec, "height", int, where)
    rle = _require(rec, "rle", list, where)
    if not all(isinstance(c, int) and not isinstance(c, bool) for c in rle):
        raise SchemaViolation(f"{where}.rle must be a list of integers")
    if sum(rle) != width * height:
        raise CorruptRLE(
            f"{where}.rle counts sum to {sum(rle)}, expected {width * height}")
    source_raw = _require(rec, "source", str, where)
    try:
        source = MaskSource(source_raw)
    except ValueError:
        raise SchemaViolation(f"{where}.source has unknown value {source_raw!r}")
    granularity = Granularity.UNTAGGED
    if "granularity" in rec:
        try:
            granularity = Granularity(rec["granularity"])
        except ValueError:
            raise SchemaViolation(
                f"{where}.granularity has unknown value {rec['granularity']!r}")
    return Mask(width=width, height=height, rle=tuple(rle),
                score=rec.get("score"), track_id=rec.get("track_id"),
                source=source, granularity=granularity)


def load_mask_file(path, frame_index: int) -> MaskSet:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"mask file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"mask file is not valid JSON: {exc}") from exc
    if not isinstance(doc, list):
        raise SchemaViolation("mask file root must be an array")
    masks = [mask_from_record(rec, where=f"masks[{i}]") for i, rec in enumerate(doc)]
    tags = {m.granularity for m in masks}
    tag = tags.pop() if len(tags) == 1 else Granularity.UNTAGGED
    return MaskSet(frame_index=frame_index, masks=tuple(masks), granularity_tag=tag)


def save_mask_file(maskset: MaskSet, path) -> None:
    for i, m in enumerate(maskset.masks):
        if m.area < 1:
            raise EmptyMask(f"masks[{i}] has zero area and cannot be stored")
    doc = [mask_to_record(m) for m in maskset.masks]
    try:
        Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write mask file: {exc}") from exc


# ---------------------------------------------------------------------------
# labeled points
# ---------------------------------------------------------------------------

def instance_color(instance_id: int) -> tuple[int, int, int]:
    """Deterministic per-instance color via golden-ratio hue rotation."""
    hue = (instance_id * 0.6180339887498949) % 1.0
    r, g, b = colorsys.hsv_to_rgb(hue, 0.65, 0.95)
    return int(round(r * 255)), int(round(g * 255)), int(round(b * 255))


def write_labeled_points(points: LabeledPointSet, path,
                         fmt: PointsFormat = PointsFormat.BINARY) -> None:
    if len(points) == 0:
        raise EmptyMask("refusing to write an empty labeled point set")
    path = Path(path)
    try:
        if fmt is PointsFormat.BINARY:
            records = np.empty(len(points), dtype=_POINT_RECORD)
            records["x"] = points.xyz[:, 0]
            records["y"] = points.xyz[:, 1]
            records["z"] = points.xyz[:, 2]
            records["instance_id"] = points.instance_ids
            records["confidence"] = points.confidences
            with path.open("wb") as fh:
                fh.write(POINTS_MAGIC)
                fh.write(np.uint32(len(points)).tobytes())
                fh.write(records.tobytes())
        elif fmt is PointsFormat.COLORED_PLY:
            _write_colored_ply(points, path)
        else:
            raise SchemaViolation(f"unknown points format {fmt!r}")
    except OSError as exc:
        raise IoFailure(f"cannot write labeled points: {exc}") from exc


def read_labeled_points(path) -> LabeledPointSet:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"labeled points file not found: {path}")
    blob = path.read_bytes()
    if blob[:4] != POINTS_MAGIC:
        raise SchemaViolation("labeled points file has wrong magic")
    count = int(np.frombuffer(blob, dtype="<u4", count=1, offset=4)[0])
    expected = 8 + count * _POINT_RECORD.itemsize
    if len(blob) != expected:
        raise SchemaViolation(
            f"labeled points file has {len(blob)} bytes, expected {expected}")
    records = np.frombuffer(blob, dtype=_POINT_RECORD, count=count, offset=8)
    xyz = np.column_stack([records["x"], records["y"], records["z"]])
    return LabeledPointSet(xyz, records["instance_id"], records["confidence"])


def _write_colored_ply(points: LabeledPointSet, path: Path) -> None:
    ids = np.unique(points.instance_ids)
    palette = {int(i): instance_color(int(i)) for i in ids}
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(points)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    for (x, y, z), inst in zip(points.xyz, points.instance_ids):
        r, g, b = palette[int(inst)]
        lines.append(f"{x:.6f} {y:.6f} {z:.6f} {r} {g} {b}")
    path.write_text("\n".join(lines) + "\n")
