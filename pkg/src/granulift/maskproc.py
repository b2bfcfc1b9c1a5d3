"""2D mask-set operations: areas, IoU, containment rate, redundancy filtering.

Intersections are computed directly on RLE runs (no full raster decode):
both masks' foreground intervals are step functions over the flattened
pixel index, so the overlap is integrated over the union of their
breakpoints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyMask, InvariantViolation
from .scene_io import Granularity, Mask, MaskSet, foreground_intervals


@dataclass(frozen=True)
class FilterConfig:
    tau_contain: float = 0.8

    def __post_init__(self):
        if not 0.0 < self.tau_contain <= 1.0:
            raise InvariantViolation("tau_contain must lie in (0, 1]")


def _check_dims(a: Mask, b: Mask) -> None:
    if (a.width, a.height) != (b.width, b.height):
        raise DimensionMismatch(
            f"mask dimensions differ: {a.width}x{a.height} vs {b.width}x{b.height}")


def rle_intersection_area(a: Mask, b: Mask) -> int:
    """|a ∩ b| in pixels, evaluated on the runs themselves."""
    a_starts, a_ends = foreground_intervals(a)
    b_starts, b_ends = foreground_intervals(b)
    if a_starts.size == 0 or b_starts.size == 0:
        return 0
    a_flat = np.column_stack([a_starts, a_ends]).reshape(-1)
    b_flat = np.column_stack([b_starts, b_ends]).reshape(-1)
    cuts = np.union1d(a_flat, b_flat)
    if cuts.size < 2:
        return 0
    seg_starts = cuts[:-1]
    seg_lens = np.diff(cuts)
    in_a = np.searchsorted(a_flat, seg_starts, side="right") % 2 == 1
    in_b = np.searchsorted(b_flat, seg_starts, side="right") % 2 == 1
    return int(seg_lens[in_a & in_b].sum())


def mask_iou(a: Mask, b: Mask) -> float:
    """Intersection over union of two masks of equal dimensions."""
    _check_dims(a, b)
    inter = rle_intersection_area(a, b)
    union = a.area + b.area - inter
    if union == 0:
        return 0.0
    return inter / union


def containment_rate(m: Mask, m_prime: Mask) -> float:
    """Fraction of ``m`` covered by ``m_prime``; not symmetric."""
    _check_dims(m, m_prime)
    area = m.area
    if area < 1:
        raise EmptyMask("containment rate is undefined for an empty mask")
    return rle_intersection_area(m, m_prime) / area


def filter_redundant(fine: MaskSet, coarse: MaskSet, cfg: FilterConfig) -> MaskSet:
    """Drop fine masks that are substantially contained in some coarse mask.

    A fine mask is redundant when its containment rate against any coarse
    mask strictly exceeds ``cfg.tau_contain`` (a rate exactly equal to the
    threshold keeps the mask). Coarse masks are always retained and are
    emitted first, followed by the surviving fine masks in input order.
    """
    if fine.masks and coarse.masks:
        _check_dims(fine.masks[0], coarse.masks[0])
    survivors = []
    for m in fine.masks:
        if not any(containment_rate(m, c) > cfg.tau_contain for c in coarse.masks):
            survivors.append(m)
    return MaskSet(frame_index=fine.frame_index,
                   masks=tuple(coarse.masks) + tuple(survivors),
                   granularity_tag=Granularity.UNTAGGED)


def split_by_granularity(maskset: MaskSet) -> tuple[MaskSet, MaskSet]:
    """Split one loaded mask set into (fine, coarse) by per-mask tags.

    Untagged masks side with the coarse set so they are always retained by
    the filter.
    """
    fine = [m for m in maskset.masks if m.granularity is Granularity.FINE]
    rest = [m for m in maskset.masks if m.granularity is not Granularity.FINE]
    return (MaskSet(maskset.frame_index, tuple(fine), Granularity.FINE),
            MaskSet(maskset.frame_index, tuple(rest), Granularity.COARSE))
