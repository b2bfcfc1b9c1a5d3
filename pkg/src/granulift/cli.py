"""Command-line front end for the pseudo-labeling pipeline.

Exit codes: 0 success, 2 input/config error, 3 pipeline-state error.
Errors are also emitted as one JSON object on stderr. Every command accepts
``--json`` for machine-readable stdout. The environment variable
``GRANULIFT_SEED`` overrides the configured master seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import evalmetrics, fusion, lift, maskproc, synth, tracker
from .errors import (
    EmptyLabels,
    GranuliftError,
    MissingFile,
    NoGroundTruth,
    PipelineStateError,
    SchemaViolation,
)
from .scene_io import (
    LabeledPointSet,
    MaskSet,
    MaskSource,
    PointsFormat,
    SceneManifest,
    load_camera_frame,
    load_manifest,
    load_mask_file,
    read_labeled_points,
    save_mask_file,
    write_labeled_points,
)

FILTERED_DIR = "masks/filtered"
CONSISTENT_DIR = "masks/consistent"
PROPAGATED_DIR = "masks/propagated"
LABELS_DIR = "labels"
TRACKLOG_FILE = "tracklog.jsonl"
PROMPTS_FILE = "prompts.jsonl"


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    tau_contain: float = 0.8
    stride: int | None = None  # default: scene synth.json stride, else 10
    tau_iou: float = 0.5
    tau_dorm: int = 3
    matching: str = "hungarian"
    min_points: int = 100
    subsample: int = 1
    voxel_size: float = 0.02
    tau_conf: float = 0.5
    iou_thresholds: tuple[float, ...] = evalmetrics.DEFAULT_THRESHOLDS
    propagator: str = "oracle"
    erosion_prob: float = 0.0
    eval_tol: float = 1e-6

    @classmethod
    def load(cls, path=None) -> "RunConfig":
        cfg = cls()
        if path is not None:
            doc = json.loads(Path(path).read_text())
            known = {f for f in cls.__dataclass_fields__}
            unknown = set(doc) - known
            if unknown:
                raise SchemaViolation(f"unknown config keys: {sorted(unknown)}")
            if "iou_thresholds" in doc:
                doc["iou_thresholds"] = tuple(doc["iou_thresholds"])
            cfg = replace(cfg, **doc)
        env_seed = os.environ.get("GRANULIFT_SEED")
        if env_seed is not None:
            cfg = replace(cfg, seed=int(env_seed))
        return cfg


def _scene_stride(scene_dir: Path, cfg: RunConfig, flag: int | None) -> int:
    if flag is not None:
        return flag
    if cfg.stride is not None:
        return cfg.stride
    spec_path = scene_dir / synth.SPEC_FILE
    if spec_path.is_file():
        try:
            return int(json.loads(spec_path.read_text()).get("stride", 10))
        except (json.JSONDecodeError, TypeError, ValueError):
            pass
    return 10


def _keyframes(manifest: SceneManifest, stride: int) -> list[int]:
    return manifest.frame_indices[::stride]


def _detection_set(scene_dir: Path, manifest: SceneManifest,
                   frame_index: int, prefer_filtered: bool) -> MaskSet:
    candidates = []
    if prefer_filtered:
        candidates.append(scene_dir / FILTERED_DIR / f"frame_{frame_index:06d}.json")
    entry = manifest.frame(frame_index)
    if entry.mask_path is not None:
        candidates.append(manifest.resolve(entry.mask_path))
    candidates.append(scene_dir / synth.DETECTION_MASK_DIR
                      / f"frame_{frame_index:06d}.json")
    for path in candidates:
        if path.is_file():
            return load_mask_file(path, frame_index)
    raise MissingFile(f"no detection masks for keyframe {frame_index} "
                      f"under {scene_dir}")


def _load_maskset_dir(scene_dir: Path, rel_dir: str,
                      frame_indices) -> dict[int, MaskSet]:
    out = {}
    for f in frame_indices:
        path = scene_dir / rel_dir / f"frame_{f:06d}.json"
        if not path.is_file():
            raise MissingFile(f"mask file missing: {path}")
        out[f] = load_mask_file(path, f)
    return out


def _emit(payload: dict, as_json: bool) -> None:
    if as_json:
        print(json.dumps(payload, sort_keys=True))
    else:
        for key, value in payload.items():
            print(f"{key}: {value}")


def _fail(exc: GranuliftError) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc)},
                     sort_keys=True), file=sys.stderr)
    return 3 if isinstance(exc, PipelineStateError) else 2


def _for_each_scene(scene_dirs, jobs, fn) -> list[dict]:
    dirs = [Path(d) for d in scene_dirs]
    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, dirs))
    return [fn(d) for d in dirs]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = synth.load_spec(args.spec)
    render = synth.generate_scene(spec, args.out_dir)
    _emit({"scene_dir": str(args.out_dir), "frames": spec.frame_count,
           "objects": len(spec.objects),
           "gt_points": len(render.gt_points)}, args.json)
    return 0


def cmd_filter(args) -> int:
    cfg = RunConfig.load(args.config)
    fcfg = maskproc.FilterConfig(
        tau_contain=args.tau_contain if args.tau_contain is not None
        else cfg.tau_contain)

    def run(scene_dir: Path) -> dict:
        manifest = load_manifest(scene_dir / "manifest.json")
        stride = _scene_stride(scene_dir, cfg, args.stride)
        out_dir = scene_dir / FILTERED_DIR
        out_dir.mkdir(parents=True, exist_ok=True)
        total_in = total_out = 0
        for kf in _keyframes(manifest, stride):
            detections = _detection_set(scene_dir, manifest, kf,
                                        prefer_filtered=False)
            fine, coarse = maskproc.split_by_granularity(detections)
            filtered = maskproc.filter_redundant(fine, coarse, fcfg)
            save_mask_file(filtered, out_dir / f"frame_{kf:06d}.json")
            total_in += len(detections)
            total_out += len(filtered)
        return {"scene": manifest.scene_id, "masks_in": total_in,
                "masks_out": total_out}

    for result in _for_each_scene(args.scene_dirs, args.jobs, run):
        _emit(result, args.json)
    return 0


def _build_propagator(scene_dir: Path, name: str, erosion_prob: float,
                      seed: int, manifest: SceneManifest):
    if name == "replay":
        return tracker.ReplayPropagator(scene_dir / PROPAGATED_DIR)
    if name == "oracle":
        gt_dir = scene_dir / synth.GT_MASK_DIR
        if not gt_dir.is_dir():
            raise MissingFile(f"oracle propagator needs {gt_dir}")
        gt = _load_maskset_dir(scene_dir, synth.GT_MASK_DIR,
                               manifest.frame_indices)
        return synth.OraclePropagator(gt, erosion_prob=erosion_prob, seed=seed)
    raise SchemaViolation(f"unknown propagator {name!r}")


def cmd_track(args) -> int:
    cfg = RunConfig.load(args.config)

    def run(scene_dir: Path) -> dict:
        manifest = load_manifest(scene_dir / "manifest.json")
        stride = _scene_stride(scene_dir, cfg, args.stride)
        tcfg = tracker.TrackerConfig(
            stride_s=stride,
            tau_iou=args.tau_iou if args.tau_iou is not None else cfg.tau_iou,
            tau_dorm=args.tau_dorm if args.tau_dorm is not None else cfg.tau_dorm,
            matching=args.matching or cfg.matching)
        detections = {}
        for kf in _keyframes(manifest, stride):
            try:
                detections[kf] = _detection_set(scene_dir, manifest, kf,
                                                prefer_filtered=True)
            except MissingFile as exc:
                raise tracker.MissingKeyframeDetections(str(exc)) from exc
        propagator = _build_propagator(
            scene_dir, args.propagator or cfg.propagator,
            args.erosion_prob if args.erosion_prob is not None else cfg.erosion_prob,
            cfg.seed, manifest)
        ledger = tracker.PromptLedger()
        output, state, log = tracker.run_tracking(manifest, detections,
                                                  propagator, tcfg, ledger=ledger)
        out_dir = scene_dir / CONSISTENT_DIR
        out_dir.mkdir(parents=True, exist_ok=True)
        for f, maskset in output.items():
            save_mask_file(maskset, out_dir / f"frame_{f:06d}.json")
        log.write(scene_dir / TRACKLOG_FILE)
        ledger.write(scene_dir / PROMPTS_FILE)
        return {"scene": manifest.scene_id,
                "tracks": state.next_id,
                "active": len(state.active),
                "dormant": len(state.dormant),
                "terminated": len(state.terminated),
                "transitions": len(log.records)}

    for result in _for_each_scene(args.scene_dirs, args.jobs, run):
        _emit(result, args.json)
    return 0


def cmd_lift(args) -> int:
    cfg = RunConfig.load(args.config)
    lcfg = lift.LiftConfig(
        min_points=args.min_points if args.min_points is not None
        else cfg.min_points)
    subsample = args.subsample if args.subsample is not None else cfg.subsample

    def run(scene_dir: Path) -> dict:
        manifest = load_manifest(scene_dir / "manifest.json")
        frames = lambda f: load_camera_frame(manifest, f)  # noqa: E731
        if args.stage == 1:
            stride = _scene_stride(scene_dir, cfg, args.stride)
            masksets = {kf: _detection_set(scene_dir, manifest, kf,
                                           prefer_filtered=True)
                        for kf in _keyframes(manifest, stride)}
            labels = lift.aggregate_stage1(frames, masksets, lcfg)
            out_name = "stage1.bin"
        else:
            masksets = _load_maskset_dir(scene_dir, CONSISTENT_DIR,
                                         manifest.frame_indices)
            labels = lift.aggregate_stage2(frames, masksets, lcfg,
                                           subsample=subsample)
            out_name = "stage2.bin"
        if len(labels) == 0:
            raise EmptyLabels(f"stage {args.stage} produced no labeled points")
        out_dir = scene_dir / LABELS_DIR
        out_dir.mkdir(parents=True, exist_ok=True)
        write_labeled_points(labels, out_dir / out_name)
        return {"scene": manifest.scene_id, "stage": args.stage,
                "points": len(labels),
                "instances": len(set(labels.instance_ids.tolist()))}

    for result in _for_each_scene(args.scene_dirs, args.jobs, run):
        _emit(result, args.json)
    return 0


def cmd_fuse(args) -> int:
    cfg = RunConfig.load(args.config)
    fcfg = fusion.FusionConfig(
        voxel_size=args.voxel if args.voxel is not None else cfg.voxel_size,
        tau_conf=args.tau_conf if args.tau_conf is not None else cfg.tau_conf)

    def run(scene_dir: Path) -> dict:
        labels_path = Path(args.labels) if args.labels else \
            scene_dir / LABELS_DIR / "stage2.bin"
        labels = read_labeled_points(labels_path)
        full_cloud_path = Path(args.full_cloud) if args.full_cloud else \
            scene_dir / synth.GT_POINTS_FILE
        if full_cloud_path.is_file():
            full = read_labeled_points(full_cloud_path)
            fused = fusion.fuse_scene(labels, full.xyz, fcfg)
        else:
            fused = fusion.confidence_filter(
                fusion.voxelize_and_vote(labels, fcfg), fcfg.tau_conf)
        if len(fused) == 0:
            raise EmptyLabels("fusion produced no labeled points")
        out_dir = scene_dir / LABELS_DIR
        out_dir.mkdir(parents=True, exist_ok=True)
        write_labeled_points(fused, out_dir / "fused.bin")
        if args.ply:
            write_labeled_points(fused, out_dir / "fused.ply",
                                 PointsFormat.COLORED_PLY)
        return {"scene": scene_dir.name, "points": len(fused),
                "instances": len(set(fused.instance_ids.tolist()))}

    for result in _for_each_scene(args.scene_dirs, args.jobs, run):
        _emit(result, args.json)
    return 0


def _evaluate_points(pred: LabeledPointSet, gt: LabeledPointSet,
                     thresholds, tol: float) -> evalmetrics.ApReport:
    ecfg = evalmetrics.EvalConfig(iou_thresholds=tuple(thresholds))
    gt_instances = evalmetrics.instances_from_ids(gt.instance_ids)
    pred_instances, scores = evalmetrics.labels_to_instances(pred, gt.xyz, tol)
    preds = [(idxs, scores[inst]) for inst, idxs in sorted(pred_instances.items())]
    return evalmetrics.average_precision(preds, list(gt_instances.values()), ecfg)


def cmd_eval(args) -> int:
    cfg = RunConfig.load(args.config)
    thresholds = tuple(args.thresholds) if args.thresholds else cfg.iou_thresholds
    pred = read_labeled_points(args.pred)
    gt_path = Path(args.gt)
    if not gt_path.is_file():
        raise NoGroundTruth(f"ground-truth labels not found: {gt_path}")
    gt = read_labeled_points(gt_path)
    report = _evaluate_points(pred, gt, thresholds, args.tol or cfg.eval_tol)
    doc = report.to_dict()
    doc["id_switches"] = None
    doc["fragmentation"] = None
    out_path = Path(args.out) if args.out else Path(args.pred).parent / "eval_report.json"
    out_path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    if args.csv:
        lines = ["metric,value"]
        lines += [f"ap@{t:.2f},{v}" for t, v in sorted(report.per_threshold.items())]
        lines += [f"ap_mean,{report.mean}", f"ap50,{report.ap50}",
                  f"ap25,{report.ap25}"]
        Path(args.csv).write_text("\n".join(lines) + "\n")
    if args.json:
        print(json.dumps(doc, sort_keys=True))
    else:
        print(f"{'threshold':>10} {'AP':>8}")
        for t, v in sorted(report.per_threshold.items()):
            print(f"{t:>10.2f} {v:>8.4f}")
        print(f"{'mean':>10} {report.mean:>8.4f}")
        print(f"{'AP50':>10} {report.ap50:>8.4f}")
        print(f"{'AP25':>10} {report.ap25:>8.4f}")
    return 0


def _stage1_masksets_with_serial_ids(masksets: dict[int, MaskSet]) -> dict[int, MaskSet]:
    serial = 0
    out = {}
    for kf in sorted(masksets):
        masks = []
        for m in masksets[kf].masks:
            masks.append(m.with_track(serial, MaskSource.DETECTION))
            serial += 1
        out[kf] = MaskSet(frame_index=kf, masks=tuple(masks))
    return out


def run_pipeline(scene_dir: Path, cfg: RunConfig) -> dict:
    """filter -> track -> lift -> fuse -> eval for one scene.

    Returns the run summary comparing the keyframe-serial stage-1 labeling
    with the tracked stage-2 labeling.
    """
    scene_dir = Path(scene_dir)
    manifest = load_manifest(scene_dir / "manifest.json")
    stride = _scene_stride(scene_dir, cfg, None)

    # filter
    fcfg = maskproc.FilterConfig(tau_contain=cfg.tau_contain)
    filtered_dir = scene_dir / FILTERED_DIR
    filtered_dir.mkdir(parents=True, exist_ok=True)
    keyframes = _keyframes(manifest, stride)
    filtered = {}
    for kf in keyframes:
        detections = _detection_set(scene_dir, manifest, kf, prefer_filtered=False)
        fine, coarse = maskproc.split_by_granularity(detections)
        filtered[kf] = maskproc.filter_redundant(fine, coarse, fcfg)
        save_mask_file(filtered[kf], filtered_dir / f"frame_{kf:06d}.json")

    # track
    tcfg = tracker.TrackerConfig(stride_s=stride, tau_iou=cfg.tau_iou,
                                 tau_dorm=cfg.tau_dorm, matching=cfg.matching)
    propagator = _build_propagator(scene_dir, cfg.propagator, cfg.erosion_prob,
                                   cfg.seed, manifest)
    ledger = tracker.PromptLedger()
    consistent, state, log = tracker.run_tracking(manifest, filtered, propagator,
                                                  tcfg, ledger=ledger)
    consistent_dir = scene_dir / CONSISTENT_DIR
    consistent_dir.mkdir(parents=True, exist_ok=True)
    for f, maskset in consistent.items():
        save_mask_file(maskset, consistent_dir / f"frame_{f:06d}.json")
    log.write(scene_dir / TRACKLOG_FILE)
    ledger.write(scene_dir / PROMPTS_FILE)

    # lift both stages
    lcfg = lift.LiftConfig(min_points=cfg.min_points)
    frame_cache: dict[int, object] = {}

    def frames(f):
        if f not in frame_cache:
            frame_cache[f] = load_camera_frame(manifest, f)
        return frame_cache[f]

    stage1 = lift.aggregate_stage1(frames, filtered, lcfg)
    stage2 = lift.aggregate_stage2(frames, consistent, lcfg,
                                   subsample=cfg.subsample)
    labels_dir = scene_dir / LABELS_DIR
    labels_dir.mkdir(parents=True, exist_ok=True)
    if len(stage1):
        write_labeled_points(stage1, labels_dir / "stage1.bin")
    if len(stage2):
        write_labeled_points(stage2, labels_dir / "stage2.bin")

    # fuse + evaluate against ground truth where available
    summary = {"scene": manifest.scene_id, "frames": len(manifest.frames),
               "keyframes": len(keyframes), "tracks": state.next_id}
    gt_path = scene_dir / synth.GT_POINTS_FILE
    gt_masks_dir = scene_dir / synth.GT_MASK_DIR
    fuse_cfg = fusion.FusionConfig(voxel_size=cfg.voxel_size, tau_conf=cfg.tau_conf)
    stage2_report = None
    for name, labels, masksets in (
            ("stage1", stage1, _stage1_masksets_with_serial_ids(filtered)),
            ("stage2", stage2, consistent)):
        entry = {"points": len(labels),
                 "instances": len(set(labels.instance_ids.tolist()))}
        if gt_path.is_file() and len(labels):
            gt = read_labeled_points(gt_path)
            fused = fusion.fuse_scene(labels, gt.xyz, fuse_cfg)
            if name == "stage2" and len(fused):
                write_labeled_points(fused, labels_dir / "fused.bin")
            report = _evaluate_points(fused, gt, cfg.iou_thresholds, cfg.eval_tol) \
                if len(fused) else None
            if report is not None:
                entry.update({"ap_mean": report.mean, "ap50": report.ap50,
                              "ap25": report.ap25})
                if name == "stage2":
                    stage2_report = report
        if gt_masks_dir.is_dir():
            gt_masks = _load_maskset_dir(scene_dir, synth.GT_MASK_DIR,
                                         manifest.frame_indices)
            assoc = evalmetrics.build_gt_association(masksets, gt_masks)
            stats = evalmetrics.consistency_stats(log, assoc)
            entry["fragmentation"] = stats.fragmentation
            entry["id_switches"] = stats.id_switches
        summary[name] = entry

    if stage2_report is not None:
        report_doc = stage2_report.to_dict()
        report_doc["id_switches"] = summary["stage2"].get("id_switches")
        report_doc["fragmentation"] = summary["stage2"].get("fragmentation")
        (scene_dir / "eval_report.json").write_text(
            json.dumps(report_doc, sort_keys=True, indent=2) + "\n")
    (scene_dir / "run_summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return summary


def cmd_pipeline(args) -> int:
    cfg = RunConfig.load(args.config)
    results = _for_each_scene(args.scene_dirs, args.jobs,
                              lambda d: run_pipeline(d, cfg))
    for summary in results:
        if args.json:
            print(json.dumps(summary, sort_keys=True))
        else:
            s1, s2 = summary.get("stage1", {}), summary.get("stage2", {})
            print(f"scene {summary['scene']}: tracks={summary['tracks']}")
            for name, s in (("stage1", s1), ("stage2", s2)):
                bits = [f"instances={s.get('instances')}"]
                if "ap_mean" in s:
                    bits.append(f"ap_mean={s['ap_mean']:.4f}")
                if "fragmentation" in s:
                    bits.append(f"fragmentation={s['fragmentation']:.3f}")
                print(f"  {name}: " + " ".join(bits))
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="granulift",
        description="Granularity-consistent mask tracking and 3D pseudo-label fusion")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenes=True):
        if scenes:
            p.add_argument("scene_dirs", nargs="+", help="scene directories")
            p.add_argument("--jobs", type=int, default=1,
                           help="parallel scenes (tracking stays sequential per scene)")
        p.add_argument("--config", help="RunConfig JSON file")
        p.add_argument("--json", action="store_true", help="machine-readable stdout")

    p = sub.add_parser("synth", help="render a synthetic scene")
    p.add_argument("spec", help="synth spec JSON")
    p.add_argument("out_dir", help="output scene directory")
    common(p, scenes=False)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("filter", help="containment-filter keyframe detections")
    common(p)
    p.add_argument("--tau-contain", type=float, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.set_defaults(fn=cmd_filter)

    p = sub.add_parser("track", help="run consistent tracking over a scene")
    common(p)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--tau-iou", type=float, default=None)
    p.add_argument("--tau-dorm", type=int, default=None)
    p.add_argument("--matching", choices=["hungarian", "greedy"], default=None)
    p.add_argument("--propagator", choices=["oracle", "replay"], default=None)
    p.add_argument("--erosion-prob", type=float, default=None)
    p.set_defaults(fn=cmd_track)

    p = sub.add_parser("lift", help="lift masks into labeled 3D points")
    common(p)
    p.add_argument("--stage", type=int, choices=[1, 2], required=True)
    p.add_argument("--min-points", type=int, default=None)
    p.add_argument("--subsample", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.set_defaults(fn=cmd_lift)

    p = sub.add_parser("fuse", help="voxel-vote and transfer labels")
    common(p)
    p.add_argument("--voxel", type=float, default=None)
    p.add_argument("--tau-conf", type=float, default=None)
    p.add_argument("--labels", default=None, help="labeled points input")
    p.add_argument("--full-cloud", default=None,
                   help="cloud to transfer labels onto (default: scene GT points)")
    p.add_argument("--ply", action="store_true", help="also write a colored PLY")
    p.set_defaults(fn=cmd_fuse)

    p = sub.add_parser("eval", help="evaluate labeled points against ground truth")
    p.add_argument("pred", help="predicted labeled points file")
    p.add_argument("gt", help="ground-truth labeled points file")
    common(p, scenes=False)
    p.add_argument("--thresholds", type=float, nargs="+", default=None)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--out", default=None, help="report path")
    p.add_argument("--csv", default=None, help="also write a flat CSV report")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("pipeline", help="filter, track, lift, fuse, eval")
    common(p)
    p.set_defaults(fn=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except GranuliftError as exc:
        return _fail(exc)


if __name__ == "__main__":
    sys.exit(main())
