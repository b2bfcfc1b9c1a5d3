"""Cross-frame consistent segmentation via keyframe tracking.

Detections at keyframes are reconciled with masks propagated from the
previous keyframe window: an optimal one-to-one IoU assignment decides
which tracks stay alive, unmatched tracks fall dormant and eventually
terminate, and unmatched detections either reactivate a dormant track or
start a new one. Active tracks are re-prompted into the next overlapping
window, so every output frame carries masks with stable track ids.
"""

from __future__ import annotations

import json
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import (
    DimensionMismatch,
    InvariantViolation,
    MissingFile,
    MissingKeyframeDetections,
    MissingTrackId,
    NonEmptyState,
    PropagatorFailure,
    SchemaViolation,
)
from .maskproc import mask_iou
from .scene_io import (
    Granularity,
    Mask,
    MaskSet,
    MaskSource,
    SceneManifest,
    load_mask_file,
)


class TrackState(str, Enum):
    ACTIVE = "active"
    DORMANT = "dormant"
    TERMINATED = "terminated"


# the complete transition set; anything else in a tracklog is a bug
LEGAL_TRANSITIONS = frozenset([
    ("new", "active"),
    ("active", "active"),
    ("active", "dormant"),
    ("dormant", "dormant"),
    ("dormant", "active"),
    ("dormant", "terminated"),
])


@dataclass(frozen=True)
class TrackerConfig:
    stride_s: int = 10
    tau_iou: float = 0.5
    tau_dorm: int = 3
    matching: str = "hungarian"  # or "greedy", kept for ablations

    def __post_init__(self):
        if self.stride_s < 1:
            raise InvariantViolation("stride_s must be >= 1")
        if not 0.0 < self.tau_iou < 1.0:
            raise InvariantViolation("tau_iou must lie in (0, 1)")
        if self.tau_dorm < 1:
            raise InvariantViolation("tau_dorm must be >= 1")
        if self.matching not in ("hungarian", "greedy"):
            raise SchemaViolation(f"unknown matching method {self.matching!r}")


@dataclass
class Track:
    track_id: int
    state: TrackState
    dormancy_counter: int
    last_keyframe_mask: Mask
    first_seen: int
    history: list = field(default_factory=list)  # (frame_index, Mask)


@dataclass
class TrackerState:
    active: dict = field(default_factory=dict)      # track_id -> Track
    dormant: dict = field(default_factory=dict)
    terminated: dict = field(default_factory=dict)
    next_id: int = 0

    def is_empty(self) -> bool:
        return not (self.active or self.dormant or self.terminated)

    def all_tracks(self) -> list:
        tracks = list(self.active.values()) + list(self.dormant.values()) \
            + list(self.terminated.values())
        return sorted(tracks, key=lambda t: t.track_id)

    def _spawn(self, mask: Mask, keyframe: int) -> Track:
        track = Track(track_id=self.next_id, state=TrackState.ACTIVE,
                      dormancy_counter=0,
                      last_keyframe_mask=mask.with_track(self.next_id,
                                                         MaskSource.DETECTION),
                      first_seen=keyframe)
        self.active[track.track_id] = track
        self.next_id += 1
        return track


@dataclass
class PromptEntry:
    track_id: int
    keyframe_index: int
    mask: Mask


class PromptLedger:
    """Ordered record of every visual prompt handed to the propagator."""

    def __init__(self):
        self.entries: list[PromptEntry] = []

    def add(self, track_id: int, keyframe_index: int, mask: Mask) -> PromptEntry:
        entry = PromptEntry(track_id, keyframe_index, mask)
        self.entries.append(entry)
        return entry

    def __len__(self) -> int:
        return len(self.entries)

    def write(self, path) -> None:
        from .scene_io import mask_to_record
        lines = []
        for e in self.entries:
            rec = {"track_id": e.track_id, "keyframe": e.keyframe_index,
                   "mask": mask_to_record(e.mask)}
            lines.append(json.dumps(rec, sort_keys=True))
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


class TrackLog:
    """Append-only transition log; one JSON record per state change."""

    def __init__(self, records=None):
        self.records: list[dict] = list(records) if records else []

    def append(self, keyframe: int, track_id: int, from_state: str,
               to_state: str, reason: str, iou: float | None = None) -> None:
        rec = {"keyframe": keyframe, "track_id": track_id,
               "from_state": from_state, "to_state": to_state, "reason": reason}
        if iou is not None:
            rec["iou"] = float(iou)
        self.records.append(rec)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def write(self, path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def read(cls, path) -> "TrackLog":
        path = Path(path)
        if not path.is_file():
            raise MissingFile(f"tracklog not found: {path}")
        records = [json.loads(line) for line in path.read_text().splitlines() if line]
        return cls(records)

    def validate(self) -> None:
        """Raise InvariantViolation unless the log is a legal trajectory."""
        finished: set[int] = set()
        seen: dict[int, str] = {}
        for i, rec in enumerate(self.records):
            edge = (rec["from_state"], rec["to_state"])
            tid = rec["track_id"]
            if edge not in LEGAL_TRANSITIONS:
                raise InvariantViolation(f"record {i}: illegal transition {edge}")
            if tid in finished:
                raise InvariantViolation(
                    f"record {i}: track {tid} transitions after termination")
            expected = seen.get(tid, "new")
            if rec["from_state"] != expected:
                raise InvariantViolation(
                    f"record {i}: track {tid} leaves state {rec['from_state']} "
                    f"but was last seen in {expected}")
            seen[tid] = rec["to_state"]
            if rec["to_state"] == "terminated":
                finished.add(tid)


class MaskPropagator(ABC):
    """Window-propagation contract.

    Given the prompts issued at a window's starting keyframe and the list of
    frame indices the window spans, produce for each prompted track at most
    one mask per frame (absent when the object leaves view). Returned masks
    must match the scene raster dimensions.
    """

    @abstractmethod
    def propagate(self, prompts: list[PromptEntry],
                  frame_indices: list[int]) -> dict[int, dict[int, Mask]]:
        """Return {track_id: {frame_index: Mask}} for the prompted tracks."""


class ReplayPropagator(MaskPropagator):
    """Replays precomputed per-frame propagated masks from disk.

    Expects one mask file per frame named ``frame_%06d.json`` whose records
    carry track ids; only masks for prompted tracks are surfaced.
    """

    def __init__(self, masks_dir):
        self.masks_dir = Path(masks_dir)
        self._cache: dict[int, MaskSet] = {}

    def _frame_masks(self, frame_index: int) -> MaskSet:
        if frame_index not in self._cache:
            path = self.masks_dir / f"frame_{frame_index:06d}.json"
            try:
                self._cache[frame_index] = load_mask_file(path, frame_index)
            except MissingFile as exc:
                raise PropagatorFailure(
                    f"no propagated masks for frame {frame_index}: {exc}") from exc
        return self._cache[frame_index]

    def propagate(self, prompts, frame_indices):
        wanted = {p.track_id for p in prompts}
        out: dict[int, dict[int, Mask]] = {p.track_id: {} for p in prompts}
        for f in frame_indices:
            for mask in self._frame_masks(f).masks:
                if mask.track_id in wanted:
                    out[mask.track_id][f] = mask
        return out


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def init_first_window(detections: MaskSet, state: TrackerState,
                      ledger: PromptLedger | None = None,
                      log: TrackLog | None = None,
                      keyframe: int = 0) -> TrackerState:
    """Start one active track per first-keyframe detection (ids 0..N-1)."""
    if not state.is_empty() or state.next_id != 0:
        raise NonEmptyState("first-window initialization requires an empty tracker")
    for mask in detections.masks:
        track = state._spawn(mask, keyframe)
        if log is not None:
            log.append(keyframe, track.track_id, "new", "active", "initialized")
        if ledger is not None:
            ledger.add(track.track_id, keyframe, track.last_keyframe_mask)
    return state


def optimal_match(propagated: MaskSet, detections: MaskSet, tau_iou: float,
                  method: str = "hungarian") -> list[tuple[int, int, float]]:
    """One-to-one assignment between propagated tracks and detections.

    Maximizes total IoU over all pairings, then drops pairs whose IoU does
    not strictly exceed ``tau_iou``. Returns (track_id, detection_index,
    iou) triplets sorted by track id.
    """
    if propagated.masks and detections.masks:
        a, b = propagated.masks[0], detections.masks[0]
        if (a.width, a.height) != (b.width, b.height):
            raise DimensionMismatch(
                f"propagated {a.width}x{a.height} vs detections {b.width}x{b.height}")
    track_ids = []
    for m in propagated.masks:
        if m.track_id is None:
            raise MissingTrackId("propagated mask lacks a track_id")
        track_ids.append(m.track_id)

    n, m_count = len(propagated.masks), len(detections.masks)
    if n == 0 or m_count == 0:
        return []
    iou = np.zeros((n, m_count))
    for i, pm in enumerate(propagated.masks):
        for j, dm in enumerate(detections.masks):
            iou[i, j] = mask_iou(pm, dm)

    if method == "hungarian":
        # break assignment ties toward low row (track) and detection index;
        # the nudge is far below the smallest possible gap between distinct
        # pixel-ratio IoU values for sub-megapixel masks, so it never flips
        # a genuinely better assignment
        row_order = np.argsort(np.argsort(track_ids, kind="stable"))
        cost = -iou + row_order[:, None] * 1e-13 \
            + np.arange(m_count)[None, :] * 1e-14
        rows, cols = linear_sum_assignment(cost)
        pairs = list(zip(rows.tolist(), cols.tolist()))
    elif method == "greedy":
        order = sorted(((-iou[i, j], i, j) for i in range(n) for j in range(m_count)))
        used_i, used_j, pairs = set(), set(), []
        for _, i, j in order:
            if i not in used_i and j not in used_j:
                pairs.append((i, j))
                used_i.add(i)
                used_j.add(j)
    else:
        raise SchemaViolation(f"unknown matching method {method!r}")

    out = [(track_ids[i], j, float(iou[i, j])) for i, j in pairs if iou[i, j] > tau_iou]
    out.sort(key=lambda t: (t[0], t[1]))
    return out


def update_states(state: TrackerState, matches: list[tuple[int, int, float]],
                  detections: MaskSet, cfg: TrackerConfig,
                  keyframe: int = 0, log: TrackLog | None = None) -> TrackerState:
    """Apply one keyframe's worth of lifecycle transitions.

    Every live track and every detection undergoes exactly one transition:
    matched tracks stay active with their keyframe mask replaced by the
    matched detection (drift correction), unmatched active tracks fall
    dormant, pre-existing dormant tracks either reactivate against leftover
    detections, tick their counter, or terminate once the counter exceeds
    ``tau_dorm``, and remaining detections spawn fresh tracks.
    """
    def record(track_id, from_state, to_state, reason, iou=None):
        if log is not None:
            log.append(keyframe, track_id, from_state, to_state, reason, iou)

    dormant_pool = dict(state.dormant)  # dormant before this keyframe
    matched_tracks = set()
    matched_dets = set()

    for track_id, det_idx, iou in sorted(matches):
        track = state.active.get(track_id)
        if track is None:
            track = dormant_pool.pop(track_id, None)
            if track is None:
                continue  # terminated or unknown id: nothing to update
            # propagated mask for a track the caller considered live again
            del state.dormant[track_id]
            track.state = TrackState.ACTIVE
            track.dormancy_counter = 0
            state.active[track_id] = track
            track.last_keyframe_mask = detections.masks[det_idx].with_track(
                track_id, MaskSource.DETECTION)
            record(track_id, "dormant", "active", "reactivated", iou)
        else:
            track.last_keyframe_mask = detections.masks[det_idx].with_track(
                track_id, MaskSource.DETECTION)
            record(track_id, "active", "active", "matched", iou)
        matched_tracks.add(track_id)
        matched_dets.add(det_idx)

    # unmatched active tracks fall dormant with a fresh counter
    for track_id in sorted(state.active):
        if track_id in matched_tracks:
            continue
        track = state.active.pop(track_id)
        track.state = TrackState.DORMANT
        track.dormancy_counter = 1
        state.dormant[track_id] = track
        record(track_id, "active", "dormant", "lost")

    # leftover detections first try to wake a dormant track
    leftover = [j for j in range(len(detections.masks)) if j not in matched_dets]
    candidates = []
    for j in leftover:
        for track_id, track in sorted(dormant_pool.items()):
            iou = mask_iou(detections.masks[j], track.last_keyframe_mask)
            if iou > cfg.tau_iou:
                candidates.append((-iou, track_id, j))
    reactivated_dets = set()
    for neg_iou, track_id, j in sorted(candidates):
        if track_id not in dormant_pool or j in reactivated_dets:
            continue
        track = dormant_pool.pop(track_id)
        del state.dormant[track_id]
        track.state = TrackState.ACTIVE
        track.dormancy_counter = 0
        track.last_keyframe_mask = detections.masks[j].with_track(
            track_id, MaskSource.DETECTION)
        state.active[track_id] = track
        reactivated_dets.add(j)
        record(track_id, "dormant", "active", "reactivated", -neg_iou)

    # remaining dormant tracks tick toward termination
    for track_id in sorted(dormant_pool):
        track = dormant_pool[track_id]
        track.dormancy_counter += 1
        if track.dormancy_counter > cfg.tau_dorm:
            del state.dormant[track_id]
            track.state = TrackState.TERMINATED
            state.terminated[track_id] = track
            record(track_id, "dormant", "terminated", "expired")
        else:
            record(track_id, "dormant", "dormant", "still_lost")

    # whatever detections remain are new objects
    for j in leftover:
        if j in reactivated_dets:
            continue
        track = state._spawn(detections.masks[j], keyframe)
        record(track.track_id, "new", "active", "created")

    return state


def add_prompts(state: TrackerState, keyframe: int,
                ledger: PromptLedger) -> list[PromptEntry]:
    """Append one prompt per active track; returns the window's batch."""
    batch = []
    for track_id in sorted(state.active):
        track = state.active[track_id]
        batch.append(ledger.add(track_id, keyframe, track.last_keyframe_mask))
    return batch


def run_tracking(scene: SceneManifest, keyframe_detections: dict,
                 propagator: MaskPropagator, cfg: TrackerConfig,
                 ledger: PromptLedger | None = None,
                 ) -> tuple[dict[int, MaskSet], TrackerState, TrackLog]:
    """Track one scene end to end.

    Returns (per-frame consistent mask sets, final tracker state, tracklog).
    Frames shared by two windows take their masks from the later window,
    whose prompts incorporate the keyframe drift correction.
    """
    frames = scene.frame_indices
    if not frames:
        return {}, TrackerState(), TrackLog()
    s = cfg.stride_s
    keyframe_positions = list(range(0, len(frames), s))
    keyframes = [frames[p] for p in keyframe_positions]
    missing = [k for k in keyframes if k not in keyframe_detections]
    if missing:
        raise MissingKeyframeDetections(
            f"no detections for keyframes {missing} (stride {s})")

    state = TrackerState()
    log = TrackLog()
    if ledger is None:
        ledger = PromptLedger()
    # frame -> {track_id -> Mask}; later windows overwrite boundary frames
    per_frame: dict[int, dict[int, Mask]] = {f: {} for f in frames}
    prev_window: dict[int, dict[int, Mask]] = {}

    for i, (pos, t_k) in enumerate(zip(keyframe_positions, keyframes)):
        detections = keyframe_detections[t_k]
        _check_detection_dims(scene, detections)
        if i == 0:
            state = init_first_window(detections, state, log=log, keyframe=t_k)
        else:
            if pos == len(frames) - 1:
                # final keyframe with no onward window: adopt propagation as-is
                break
            propagated_here = []
            for track_id in sorted(prev_window):
                mask = prev_window[track_id].get(t_k)
                if mask is not None:
                    propagated_here.append(mask.with_track(track_id,
                                                           MaskSource.PROPAGATED))
            prop_set = MaskSet(frame_index=t_k, masks=tuple(propagated_here))
            matches = optimal_match(prop_set, detections, cfg.tau_iou,
                                    method=cfg.matching)
            state = update_states(state, matches, detections, cfg,
                                  keyframe=t_k, log=log)
        window_frames = frames[pos:pos + s + 1]
        prompts = add_prompts(state, t_k, ledger)
        result = propagator.propagate(prompts, list(window_frames))
        prompted = {p.track_id for p in prompts}
        # the window owns its boundary start frame outright: masks written by
        # the previous window (including ones for tracks that just went
        # dormant) are discarded in favor of the corrected prompts
        per_frame[t_k] = {}
        prev_window = {}
        for track_id in sorted(prompted):
            track_masks = result.get(track_id, {})
            clean = {}
            for f, mask in track_masks.items():
                if f not in window_frames:
                    continue
                if (mask.width, mask.height) != (scene.width, scene.height):
                    raise PropagatorFailure(
                        f"propagated mask for track {track_id} at frame {f} is "
                        f"{mask.width}x{mask.height}, expected "
                        f"{scene.width}x{scene.height}")
                if mask.area < 1:
                    continue
                clean[f] = mask.with_track(track_id, MaskSource.PROPAGATED)
            prev_window[track_id] = clean
            for f, mask in clean.items():
                per_frame[f][track_id] = mask

    output = {}
    for f in frames:
        masks = tuple(per_frame[f][tid] for tid in sorted(per_frame[f]))
        output[f] = MaskSet(frame_index=f, masks=masks,
                            granularity_tag=Granularity.UNTAGGED)

    track_index = {t.track_id: t for t in state.all_tracks()}
    for f in frames:
        for mask in output[f].masks:
            track_index[mask.track_id].history.append((f, mask))

    return output, state, log


def _check_detection_dims(scene: SceneManifest, detections: MaskSet) -> None:
    for m in detections.masks:
        if (m.width, m.height) != (scene.width, scene.height):
            raise DimensionMismatch(
                f"detection mask is {m.width}x{m.height}, scene is "
                f"{scene.width}x{scene.height}")
