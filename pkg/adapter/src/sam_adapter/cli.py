"""Standalone commands that turn model outputs into scene mask files.

``extract-keyframes`` runs automatic mask generation on every keyframe's
RGB image and writes detection mask files (raw masks; containment
filtering stays in the pipeline). ``propagate-window`` reads a prompt
ledger and writes per-frame propagated masks consumable by the pipeline's
replay propagator. The adapter holds no state between invocations.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path


from .backends import load_backend
from .formats import (
    AdapterError,
    decode_rle,
    load_rgb,
    mask_record,
    read_manifest,
    read_prompts,
    write_mask_file,
)


@dataclass(frozen=True)
class AdapterConfig:
    backend: str = "threshold"
    checkpoint: str | None = None
    device: str = "cpu"
    stride: int = 10  # must match the tracking stride downstream
    rgb_dir: str = "rgb"
    out_dir: str | None = None  # default: scene-local mask directories


def extract_keyframe_masks(scene_dir, cfg: AdapterConfig) -> list[Path]:
    scene_dir = Path(scene_dir)
    info = read_manifest(scene_dir)
    backend = load_backend(cfg.backend, cfg.checkpoint, cfg.device)
    out_root = Path(cfg.out_dir) if cfg.out_dir else scene_dir / "masks/detections"
    written = []
    for frame_index in info.frame_indices[::cfg.stride]:
        rgb = load_rgb(scene_dir, frame_index, cfg.rgb_dir)
        if rgb.shape[:2] != (info.height, info.width):
            raise AdapterError(
                f"rgb frame {frame_index} is {rgb.shape[1]}x{rgb.shape[0]}, "
                f"manifest says {info.width}x{info.height}")
        records = [mask_record(m.bitmap, "detection", score=min(m.score, 1.0),
                               granularity=m.granularity)
                   for m in backend.generate(rgb)]
        path = out_root / f"frame_{frame_index:06d}.json"
        write_mask_file(records, path)
        written.append(path)
    return written


def propagate_window(scene_dir, ledger_path, start: int, end: int,
                     cfg: AdapterConfig) -> list[Path]:
    scene_dir = Path(scene_dir)
    info = read_manifest(scene_dir)
    backend = load_backend(cfg.backend, cfg.checkpoint, cfg.device)
    prompts = read_prompts(ledger_path, keyframe=start)
    if not prompts:
        raise AdapterError(f"no prompts at keyframe {start} in {ledger_path}")
    prompt_bitmaps = {}
    for rec in prompts:
        mask = rec["mask"]
        prompt_bitmaps[int(rec["track_id"])] = decode_rle(
            mask["rle"], mask["width"], mask["height"]).astype(bool)

    out_root = Path(cfg.out_dir) if cfg.out_dir else scene_dir / "masks/propagated"
    written = []
    for frame_index in range(start, end + 1):
        if frame_index not in info.frame_indices:
            continue
        rgb = load_rgb(scene_dir, frame_index, cfg.rgb_dir)
        records = []
        for track_id in sorted(prompt_bitmaps):
            bitmap = backend.segment_prompted(rgb, prompt_bitmaps[track_id])
            if bitmap is not None and bitmap.any():
                records.append(mask_record(bitmap, "propagated",
                                           track_id=track_id))
        path = out_root / f"frame_{frame_index:06d}.json"
        write_mask_file(records, path)
        written.append(path)
    return written


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sam-adapter",
        description="Serialize segmentation-model outputs into scene mask files")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("scene_dir")
        p.add_argument("--backend", default="threshold",
                       choices=["threshold", "sam", "sam2"])
        p.add_argument("--checkpoint", default=None)
        p.add_argument("--device", default="cpu")
        p.add_argument("--rgb-dir", default="rgb")
        p.add_argument("--out-dir", default=None)

    p = sub.add_parser("extract-keyframes",
                       help="automatic mask generation on keyframes")
    common(p)
    p.add_argument("--stride", type=int, default=10)
    p.set_defaults(fn=_cmd_extract)

    p = sub.add_parser("propagate-window",
                       help="prompted propagation across one frame window")
    common(p)
    p.add_argument("--ledger", required=True, help="prompt ledger JSONL")
    p.add_argument("--start", type=int, required=True)
    p.add_argument("--end", type=int, required=True)
    p.set_defaults(fn=_cmd_propagate)
    return parser


def _config(args) -> AdapterConfig:
    return AdapterConfig(backend=args.backend, checkpoint=args.checkpoint,
                         device=args.device,
                         stride=getattr(args, "stride", 10),
                         rgb_dir=args.rgb_dir, out_dir=args.out_dir)


def _cmd_extract(args) -> int:
    written = extract_keyframe_masks(args.scene_dir, _config(args))
    print(json.dumps({"written": [str(p) for p in written]}))
    return 0


def _cmd_propagate(args) -> int:
    written = propagate_window(args.scene_dir, args.ledger, args.start,
                               args.end, _config(args))
    print(json.dumps({"written": [str(p) for p in written]}))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except AdapterError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
