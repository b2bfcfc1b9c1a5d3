"""Class-agnostic evaluation: 3D instance AP, overlap metrics, consistency.

The AP protocol is greedy score-ordered matching with exclusive ground
truth assignment (a prediction counts at threshold t when its point-set
IoU with a still-unmatched GT instance strictly exceeds t) and all-point
precision/recall integration under the usual monotone precision envelope.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    EmptyUniverse,
    InvariantViolation,
    LengthMismatch,
    MissingGT,
    NoGroundTruth,
)
from .scene_io import LabeledPointSet, MaskSet
from .maskproc import rle_intersection_area

CE_EPS = 1e-7
DEFAULT_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS

    def __post_init__(self):
        ts = tuple(float(t) for t in self.iou_thresholds)
        object.__setattr__(self, "iou_thresholds", ts)
        if not ts:
            raise InvariantViolation("iou_thresholds must be non-empty")
        if any(not 0.0 < t < 1.0 for t in ts):
            raise InvariantViolation("iou thresholds must lie in (0, 1)")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise InvariantViolation("iou thresholds must be strictly increasing")


@dataclass(frozen=True)
class LossWeights:
    lambda_dice: float = 1.0
    lambda_ce: float = 1.0
    lambda_obj: float = 1.0

    def __post_init__(self):
        if min(self.lambda_dice, self.lambda_ce, self.lambda_obj) < 0:
            raise InvariantViolation("loss weights must be >= 0")
        if max(self.lambda_dice, self.lambda_ce, self.lambda_obj) == 0:
            raise InvariantViolation("at least one loss weight must be > 0")


def instance_iou_3d(pred, gt) -> float:
    """IoU of two instances as sets of point indices."""
    pred = set(map(int, pred))
    gt = set(map(int, gt))
    union = pred | gt
    if not union:
        raise EmptyUniverse("both instances are empty")
    return len(pred & gt) / len(union)


@dataclass
class ApReport:
    per_threshold: dict[float, float]
    mean: float
    ap50: float
    ap25: float

    def to_dict(self) -> dict:
        return {"ap_mean": self.mean, "ap50": self.ap50, "ap25": self.ap25,
                "ap_per_threshold": {f"{t:.2f}": v
                                     for t, v in sorted(self.per_threshold.items())}}


def _ap_at_threshold(preds, gt_sets, threshold: float) -> float:
    """All-point AP at one IoU threshold; preds pre-sorted by score."""
    n_gt = len(gt_sets)
    matched = [False] * n_gt
    tp = np.zeros(len(preds))
    for rank, (pset, _score) in enumerate(preds):
        best_iou, best_j = 0.0, -1
        for j, gset in enumerate(gt_sets):
            if matched[j]:
                continue
            union = len(pset | gset)
            if union == 0:
                continue
            iou = len(pset & gset) / union
            if iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0 and best_iou > threshold:
            matched[best_j] = True
            tp[rank] = 1.0
    if len(preds) == 0:
        return 0.0
    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(1.0 - tp)
    recall = cum_tp / n_gt
    precision = cum_tp / (cum_tp + cum_fp)
    # monotone precision envelope, integrated over recall increments
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = 0.0
    ap = 0.0
    for r, p in zip(recall, envelope):
        ap += (r - prev_r) * p
        prev_r = r
    return float(ap)


def average_precision(pred_instances, gt_instances,
                      cfg: EvalConfig = EvalConfig()) -> ApReport:
    """AP over point-set instances.

    ``pred_instances``: iterable of (point index set, score);
    ``gt_instances``: iterable of point index sets. Ties in score keep the
    input order, so results are deterministic.
    """
    gt_sets = [set(map(int, g)) for g in gt_instances]
    if not gt_sets:
        raise NoGroundTruth("ground truth instance list is empty")
    preds = [(set(map(int, p)), float(s)) for p, s in pred_instances]
    order = sorted(range(len(preds)), key=lambda i: (-preds[i][1], i))
    preds = [preds[i] for i in order]

    per_threshold = {t: _ap_at_threshold(preds, gt_sets, t)
                     for t in cfg.iou_thresholds}
    mean = float(np.mean(list(per_threshold.values())))
    ap50 = per_threshold.get(0.50, _ap_at_threshold(preds, gt_sets, 0.50))
    ap25 = per_threshold.get(0.25, _ap_at_threshold(preds, gt_sets, 0.25))
    return ApReport(per_threshold=per_threshold, mean=mean, ap50=ap50, ap25=ap25)


def dice_metric(pred_soft, gt) -> float:
    """Soft Dice coefficient 2*sum(p*g) / (sum(p) + sum(g)); 0/0 is 1."""
    p = np.asarray(pred_soft, dtype=np.float64).reshape(-1)
    g = np.asarray(gt, dtype=np.float64).reshape(-1)
    if p.shape != g.shape:
        raise LengthMismatch(f"pred has {p.size} values, gt has {g.size}")
    denom = p.sum() + g.sum()
    if denom == 0:
        return 1.0
    return float(2.0 * (p * g).sum() / denom)


def cross_entropy_metric(pred_soft, gt) -> float:
    """Mean binary cross-entropy with predictions clamped to [eps, 1-eps]."""
    p = np.asarray(pred_soft, dtype=np.float64).reshape(-1)
    g = np.asarray(gt, dtype=np.float64).reshape(-1)
    if p.shape != g.shape:
        raise LengthMismatch(f"pred has {p.size} values, gt has {g.size}")
    if p.size == 0:
        return 0.0
    p = np.clip(p, CE_EPS, 1.0 - CE_EPS)
    return float(-(g * np.log(p) + (1.0 - g) * np.log(1.0 - p)).mean())


def objectness_metric(scores, labels) -> float:
    """Binary cross-entropy over per-instance objectness scores."""
    return cross_entropy_metric(scores, labels)


def combined_loss(pred_soft, gt, objectness_scores, objectness_labels,
                  weights: LossWeights) -> float:
    """Weighted sum of (1 - dice), cross-entropy, and objectness terms."""
    return (weights.lambda_dice * (1.0 - dice_metric(pred_soft, gt))
            + weights.lambda_ce * cross_entropy_metric(pred_soft, gt)
            + weights.lambda_obj * objectness_metric(objectness_scores,
                                                     objectness_labels))


# ---------------------------------------------------------------------------
# temporal consistency
# ---------------------------------------------------------------------------

@dataclass
class ConsistencyStats:
    id_switches: int
    fragmentation: float
    tracks_per_gt: dict[int, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"id_switches": self.id_switches,
                "fragmentation": self.fragmentation,
                "tracks_per_gt": {str(k): v
                                  for k, v in sorted(self.tracks_per_gt.items())}}


def build_gt_association(pred_masksets: dict[int, MaskSet],
                         gt_masksets: dict[int, MaskSet]) -> dict[int, dict[int, int | None]]:
    """Per frame, map each GT instance to its best-overlap predicted id.

    Predicted masks must carry ids (track ids, or serial instance ids for a
    keyframe baseline). A GT instance with no overlapping prediction maps
    to None for that frame.
    """
    assoc: dict[int, dict[int, int | None]] = {}
    for frame in sorted(gt_masksets):
        gt = gt_masksets[frame]
        preds = pred_masksets.get(frame)
        frame_map: dict[int, int | None] = {}
        for gmask in gt.masks:
            best_id, best_inter = None, 0
            if preds is not None:
                for pmask in preds.masks:
                    inter = rle_intersection_area(gmask, pmask)
                    if inter > best_inter:
                        best_id, best_inter = pmask.track_id, inter
            frame_map[gmask.track_id] = best_id
        assoc[frame] = frame_map
    return assoc


def consistency_stats(tracklog, gt_id_map) -> ConsistencyStats:
    """ID switches and fragmentation from a GT-to-track association table.

    ``gt_id_map`` is frame -> {gt_instance_id -> associated id or None};
    the tracklog is accepted for interface symmetry but the association
    table already determines both statistics.
    """
    del tracklog
    if not gt_id_map:
        raise MissingGT("gt association table is empty")
    per_object: dict[int, list[int]] = {}
    for frame in sorted(gt_id_map):
        for gt_id, assoc in gt_id_map[frame].items():
            per_object.setdefault(gt_id, [])
            if assoc is not None:
                per_object[gt_id].append(assoc)

    switches = 0
    tracks_per_gt = {}
    for gt_id, ids in sorted(per_object.items()):
        tracks_per_gt[gt_id] = len(set(ids))
        switches += sum(1 for a, b in zip(ids, ids[1:]) if a != b)
    fragmentation = float(np.mean([max(c, 1) for c in tracks_per_gt.values()]) - 1.0) \
        if tracks_per_gt else 0.0
    return ConsistencyStats(id_switches=switches, fragmentation=fragmentation,
                            tracks_per_gt=tracks_per_gt)


# ---------------------------------------------------------------------------
# point-universe helpers
# ---------------------------------------------------------------------------

def instances_from_ids(instance_ids) -> dict[int, set[int]]:
    """Group universe indices by instance id."""
    out: dict[int, set[int]] = {}
    for idx, inst in enumerate(np.asarray(instance_ids).reshape(-1)):
        out.setdefault(int(inst), set()).add(idx)
    return out


def labels_to_instances(points: LabeledPointSet, universe_xyz,
                        tol: float = 1e-6):
    """Snap labeled points onto a point universe and group into instances.

    Returns (instances, scores): instances is {instance_id: set of universe
    indices}, scores maps each id to the mean confidence of its points.
    Points farther than ``tol`` from every universe point are ignored.
    """
    universe_xyz = np.asarray(universe_xyz, dtype=np.float64).reshape(-1, 3)
    if len(universe_xyz) == 0:
        raise EmptyUniverse("point universe is empty")
    if len(points) == 0:
        return {}, {}
    tree = cKDTree(universe_xyz)
    dist, idx = tree.query(points.xyz, k=1)
    ok = dist <= tol
    instances: dict[int, set[int]] = {}
    confs: dict[int, list[float]] = {}
    for uidx, inst, conf in zip(idx[ok], points.instance_ids[ok],
                                points.confidences[ok]):
        instances.setdefault(int(inst), set()).add(int(uidx))
        confs.setdefault(int(inst), []).append(float(conf))
    scores = {inst: float(np.mean(c)) for inst, c in confs.items()}
    return instances, scores
