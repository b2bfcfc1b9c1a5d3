"""Multi-view label fusion: voxel deduplication, majority vote, confidence gate.

Voxel keys are ``floor(coordinate / voxel_size)`` per axis on raw world
coordinates; no recentring. Confidence of a fused point is the fraction of
voxel members that voted for the winning instance id.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyLabels, InvariantViolation
from .scene_io import LabeledPointSet

_KEY_OFFSET = 1 << 20  # packed voxel keys support indices in [-2^20, 2^20)


@dataclass(frozen=True)
class FusionConfig:
    voxel_size: float = 0.02
    tau_conf: float = 0.5

    def __post_init__(self):
        if not self.voxel_size > 0:
            raise InvariantViolation("voxel_size must be > 0")
        if not 0.0 <= self.tau_conf <= 1.0:
            raise InvariantViolation("tau_conf must lie in [0, 1]")


def _voxel_keys(xyz: np.ndarray, voxel_size: float) -> np.ndarray:
    return np.floor(xyz / voxel_size).astype(np.int64)


def _pack_keys(keys: np.ndarray) -> np.ndarray:
    """Pack integer (x, y, z) voxel keys into one int64, order-preserving."""
    shifted = keys + _KEY_OFFSET
    if len(shifted) and (shifted.min() < 0 or shifted.max() >= (1 << 21)):
        raise InvariantViolation("point cloud exceeds supported voxel grid extent")
    return (shifted[:, 0] << 42) | (shifted[:, 1] << 21) | shifted[:, 2]


def voxelize_and_vote(points: LabeledPointSet, cfg: FusionConfig) -> LabeledPointSet:
    """One representative per occupied voxel: member centroid, majority id.

    Ties on the vote go to the smallest instance id; the fused confidence
    is the winning vote fraction. Members are summed in a value-determined
    order and output is sorted by voxel key, so the result is invariant to
    input ordering.
    """
    if len(points) == 0:
        return LabeledPointSet.empty()
    pack = _pack_keys(_voxel_keys(points.xyz, cfg.voxel_size))
    xyz = points.xyz
    ids = points.instance_ids.astype(np.int64)
    order = np.lexsort((xyz[:, 2], xyz[:, 1], xyz[:, 0], ids, pack))
    pack, ids, xyz = pack[order], ids[order], xyz[order]

    vox_starts = np.r_[0, np.flatnonzero(np.diff(pack)) + 1]
    vox_counts = np.diff(np.r_[vox_starts, len(pack)])
    centroids = np.add.reduceat(xyz, vox_starts, axis=0) / vox_counts[:, None]

    pair_change = (np.diff(pack) != 0) | (np.diff(ids) != 0)
    pair_starts = np.r_[0, np.flatnonzero(pair_change) + 1]
    pair_counts = np.diff(np.r_[pair_starts, len(pack)])
    pair_ids = ids[pair_starts]
    pair_vox = np.searchsorted(vox_starts, pair_starts, side="right") - 1

    # best (count desc, id asc) pair per voxel wins the vote
    sel = np.lexsort((pair_ids, -pair_counts, pair_vox))
    first = np.unique(pair_vox[sel], return_index=True)[1]
    winners = sel[first]
    conf = pair_counts[winners] / vox_counts

    return LabeledPointSet(centroids,
                           pair_ids[winners].astype(np.uint32),
                           conf.astype(np.float32))


def confidence_filter(points: LabeledPointSet, tau_conf: float) -> LabeledPointSet:
    """Keep points whose confidence strictly exceeds the threshold."""
    if len(points) == 0:
        return points
    keep = points.confidences > np.float32(tau_conf)
    return points.take(keep)


def fuse_scene(stage2_labels: LabeledPointSet, full_cloud: np.ndarray,
               cfg: FusionConfig) -> LabeledPointSet:
    """Transfer voxel-voted labels onto an unlabeled full cloud.

    Every full-cloud point within ``voxel_size`` of an occupied voxel (the
    voxel cube as a region, so a point inside an occupied voxel always
    qualifies at distance 0) takes that voxel's id and vote confidence;
    other points stay unlabeled and are omitted from the output. The
    confidence gate is applied at the end.
    """
    if len(stage2_labels) == 0:
        raise EmptyLabels("cannot fuse an empty label set")
    voted = voxelize_and_vote(stage2_labels, cfg)
    full_cloud = np.asarray(full_cloud, dtype=np.float64).reshape(-1, 3)
    if len(full_cloud) == 0:
        return LabeledPointSet.empty()

    v = cfg.voxel_size
    vox_keys = _voxel_keys(voted.xyz, v)
    vox_pack = _pack_keys(vox_keys)  # unique and ascending after voting

    def lookup(query_pack):
        pos = np.searchsorted(vox_pack, query_pack)
        pos_c = np.minimum(pos, len(vox_pack) - 1)
        return pos_c, vox_pack[pos_c] == query_pack

    pkeys = _voxel_keys(full_cloud, v)
    n = len(full_cloud)
    assigned = np.full(n, -1, dtype=np.int64)
    best_dist = np.full(n, np.inf)

    # fast path: the point's own voxel is occupied (distance 0)
    idx, hit = lookup(_pack_keys(pkeys))
    assigned[hit] = idx[hit]
    best_dist[hit] = 0.0

    rest = np.flatnonzero(~hit)
    if rest.size:
        rest_keys = pkeys[rest]
        rest_xyz = full_cloud[rest]
        offsets = [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1)
                   for dz in (-1, 0, 1) if (dx, dy, dz) != (0, 0, 0)]
        for d in offsets:
            cand = rest_keys + np.array(d, dtype=np.int64)
            idx, hit = lookup(_pack_keys(cand))
            if not hit.any():
                continue
            lo = cand[hit].astype(np.float64) * v
            p = rest_xyz[hit]
            gap = np.maximum(np.maximum(lo - p, p - (lo + v)), 0.0)
            dist = np.linalg.norm(gap, axis=1)
            target = rest[hit]
            better = (dist <= v) & (dist < best_dist[target])
            assigned[target[better]] = idx[hit][better]
            best_dist[target[better]] = dist[better]

    labeled_idx = np.flatnonzero(assigned >= 0)
    src = assigned[labeled_idx]
    labeled = LabeledPointSet(full_cloud[labeled_idx],
                              voted.instance_ids[src],
                              voted.confidences[src])
    return confidence_filter(labeled, cfg.tau_conf)
