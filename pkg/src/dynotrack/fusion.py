"""Image-plane box tracking and promotion of cluster tracks to ``person``.

No detector runs in-process. Anything producing :class:`~dynotrack.core.BBox2D`
lists per frame (the dataset sidecar, or a live network wrapped to the same
output) can feed :class:`DetectorFusion`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .clustering import box_owners
from .core import BBox2D, CameraModel, Pose


@dataclass(frozen=True)
class FusionParams:
    iou_threshold: float = 0.3
    confidence_freq_threshold: float = 1.5
    freq_window: float = 2.0
    min_detection_confidence: float = 0.5

    def __post_init__(self):
        if not 0 < self.iou_threshold < 1:
            raise ValueError("iou_threshold must lie in (0, 1)")
        if not self.confidence_freq_threshold > 0 or not self.freq_window > 0:
            raise ValueError("frequency threshold and window must be positive")
        if not 0 <= self.min_detection_confidence <= 1:
            raise ValueError("min_detection_confidence must lie in [0, 1]")


@dataclass
class BoxTrack:
    id: int
    box_history: list = field(default_factory=list)
    associated_cluster_track: Optional[int] = None
    association_events: list = field(default_factory=list)

    @property
    def box(self) -> BBox2D:
        return self.box_history[-1][1]

    @property
    def last_seen(self) -> float:
        return self.box_history[-1][0]

    def record_association(self, cluster_track: Optional[int], now: float) -> None:
        if cluster_track is None:
            return
        if cluster_track != self.associated_cluster_track:
            self.associated_cluster_track = cluster_track
            self.association_events = []
        self.association_events.append(now)


def iou(a: BBox2D, b: BBox2D) -> float:
    ix = max(0.0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0.0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def track_boxes(current, tracks, params: FusionParams, now: float, next_id: int = 0):
    """Greedy highest-IoU matching of detections onto box tracks.

    Returns ``(tracks, matched)`` where ``matched[i]`` is the track that
    detection ``i`` extended or started. Tracks unseen for longer than the
    frequency window are dropped.
    """
    tracks = list(tracks)
    pairs = []
    for i, det in enumerate(current):
        for j, tr in enumerate(tracks):
            v = iou(det, tr.box)
            if v >= params.iou_threshold:
                pairs.append((-v, i, j))
    pairs.sort()
    used_d, used_t, matched = set(), set(), [None] * len(current)
    for _, i, j in pairs:
        if i in used_d or j in used_t:
            continue
        used_d.add(i)
        used_t.add(j)
        tracks[j].box_history.append((now, current[i]))
        matched[i] = tracks[j]
    nid = max([next_id] + [t.id + 1 for t in tracks])
    for i, det in enumerate(current):
        if matched[i] is None:
            tr = BoxTrack(nid, [(now, det)])
            nid += 1
            tracks.append(tr)
            matched[i] = tr
    tracks = [t for t in tracks if now - t.last_seen <= params.freq_window]
    return tracks, matched


def associate_box_to_cluster(box: BBox2D, clusters, cloud, cam: CameraModel, pose: Pose) -> Optional[int]:
    """Index of the cluster with most points inside ``box`` (closer wins ties)."""
    return box_owners(clusters, cloud, [box], cam, pose)[0]


def association_frequency(track_id: int, box_tracks, params: FusionParams, now: float) -> float:
    stamps = set()
    for bt in box_tracks:
        if bt.associated_cluster_track == track_id:
            stamps.update(t for t in bt.association_events if now - params.freq_window < t <= now)
    return len(stamps) / params.freq_window


def update_person_confidence(cluster_tracks, box_tracks, params: FusionParams, now: float):
    """Promote cluster tracks whose association frequency reaches the threshold."""
    for ct in cluster_tracks:
        if not ct.is_person and association_frequency(ct.id, box_tracks, params, now) >= params.confidence_freq_threshold:
            ct.is_person = True
    return cluster_tracks


class DetectorFusion:
    """Per-frame state of the box tracker."""

    def __init__(self, params: FusionParams):
        self.params = params
        self.tracks: list[BoxTrack] = []
        self._next_id = 0

    def step(self, detections, clusters, cluster_track_ids, cloud, cam: CameraModel, pose: Pose,
             cluster_tracks, now: float):
        p = self.params
        dets = [d for d in detections if d.confidence >= p.min_detection_confidence]
        self.tracks, matched = track_boxes(dets, self.tracks, p, now, self._next_id)
        if self.tracks:
            self._next_id = max(self._next_id, max(t.id for t in self.tracks) + 1)
        owners = box_owners(clusters, cloud, dets, cam, pose) if dets else []
        for bt, owner in zip(matched, owners):
            if owner is not None:
                bt.record_association(cluster_track_ids[owner], now)
        update_person_confidence(cluster_tracks, self.tracks, p, now)
        return [None if o is None else cluster_track_ids[o] for o in owners]


def person_track_ids(cluster_tracks) -> np.ndarray:
    return np.array([t.id for t in cluster_tracks if t.is_person], dtype=np.int64)
