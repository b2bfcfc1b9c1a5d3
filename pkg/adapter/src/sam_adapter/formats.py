"""Scene interchange formats, reimplemented on the wire contracts.

The adapter deliberately does not import the pipeline package: the JSON
mask schema, the manifest schema, and the prompt-ledger JSONL are the
interface. Mask files are arrays of ``{width, height, rle, score?,
track_id?, source, granularity?}`` with COCO-style uncompressed counts in
row-major order (first count is background and may be 0).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class AdapterError(Exception):
    pass


def encode_rle(bitmap: np.ndarray) -> list[int]:
    flat = (np.asarray(bitmap).reshape(-1) != 0).astype(np.uint8)
    if not flat.any():
        raise AdapterError("cannot encode an empty mask")
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(bounds)
    if flat[0] == 1:
        counts = np.concatenate(([0], counts))
    return [int(c) for c in counts]


def decode_rle(counts, width: int, height: int) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.int64)
    if counts.sum() != width * height:
        raise AdapterError("rle counts do not cover the raster")
    values = np.zeros(len(counts), dtype=np.uint8)
    values[1::2] = 1
    return np.repeat(values, counts).reshape(height, width)


def mask_record(bitmap, source: str, score=None, track_id=None,
                granularity=None) -> dict:
    h, w = np.asarray(bitmap).shape
    rec = {"width": int(w), "height": int(h), "rle": encode_rle(bitmap),
           "source": source}
    if score is not None:
        rec["score"] = float(score)
    if track_id is not None:
        rec["track_id"] = int(track_id)
    if granularity is not None:
        rec["granularity"] = granularity
    return rec


def write_mask_file(records: list[dict], path) -> None:
    """Atomic write: the file appears complete or not at all."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(records, sort_keys=True) + "\n")
    os.replace(tmp, path)


@dataclass(frozen=True)
class SceneInfo:
    scene_id: str
    width: int
    height: int
    frame_indices: tuple[int, ...]


def read_manifest(scene_dir) -> SceneInfo:
    path = Path(scene_dir) / "manifest.json"
    if not path.is_file():
        raise AdapterError(f"manifest not found: {path}")
    doc = json.loads(path.read_text())
    try:
        return SceneInfo(scene_id=doc["scene_id"], width=int(doc["width"]),
                         height=int(doc["height"]),
                         frame_indices=tuple(f["frame_index"]
                                             for f in doc["frames"]))
    except (KeyError, TypeError) as exc:
        raise AdapterError(f"malformed manifest: {exc!r}") from exc


def read_prompts(path, keyframe: int | None = None) -> list[dict]:
    """Prompt-ledger JSONL records, optionally filtered to one keyframe."""
    path = Path(path)
    if not path.is_file():
        raise AdapterError(f"prompt ledger not found: {path}")
    out = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if keyframe is None or rec.get("keyframe") == keyframe:
            out.append(rec)
    return out


def load_rgb(scene_dir, frame_index: int, rgb_dir: str = "rgb") -> np.ndarray:
    from PIL import Image
    path = Path(scene_dir) / rgb_dir / f"frame_{frame_index:06d}.png"
    if not path.is_file():
        raise AdapterError(f"rgb frame not found: {path}")
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))
