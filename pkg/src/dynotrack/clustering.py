"""Density clustering of the sparse cloud and frame-to-frame centroid tracking."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array

from .core import CameraModel, Pose, spatial_index

CLASS_STATES = ("unknown", "static", "dynamic", "uncertain", "person")


@dataclass(frozen=True)
class ClusteringParams:
    eps: float = 0.15
    min_pts: int = 8
    max_association_distance: float = 0.8
    track_timeout: float = 2.0
    box_containment_threshold: float = 0.6

    def __post_init__(self):
        for name in ("eps", "min_pts", "max_association_distance", "track_timeout"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.box_containment_threshold <= 1:
            raise ValueError("box_containment_threshold must lie in (0, 1]")


@dataclass
class Cluster:
    id: int
    indices: np.ndarray
    centroid: np.ndarray
    bbox_link: Optional[int] = None

    @classmethod
    def from_indices(cls, cid: int, indices, cloud: np.ndarray, bbox_link=None) -> "Cluster":
        indices = np.asarray(indices, dtype=np.int64)
        return cls(cid, indices, cloud[indices].mean(axis=0), bbox_link)

    def __len__(self) -> int:
        return len(self.indices)


@dataclass
class ClusterTrack:
    """Centroid history of one object plus its classification state.

    ``motion_class`` is the voting outcome; ``class_state`` reports ``person``
    whenever detector fusion promoted the track.
    """

    id: int
    centroid_history: list = field(default_factory=list)
    motion_class: str = "unknown"
    is_person: bool = False
    last_seen: float = -np.inf
    vote_history: deque = field(default_factory=deque)
    created: float = 0.0

    @property
    def class_state(self) -> str:
        return "person" if self.is_person else self.motion_class

    @property
    def centroid(self) -> np.ndarray:
        return self.centroid_history[-1][1]

    def extend(self, timestamp: float, centroid) -> None:
        if self.centroid_history and timestamp <= self.centroid_history[-1][0]:
            raise ValueError("centroid history must be strictly increasing in time")
        self.centroid_history.append((timestamp, np.asarray(centroid, dtype=float)))
        self.last_seen = timestamp


def _components(i: np.ndarray, j: np.ndarray, n: int):
    # Each pair is stored once; weak connectivity of the directed graph avoids
    # building the symmetric matrix and gives the same components.
    graph = coo_matrix((np.ones(len(i), dtype=np.int8), (i, j)), shape=(n, n)).tocsr()
    return connected_components(graph, directed=True, connection="weak")


def dbscan_labels(cloud, eps: float, min_pts: int, workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """DBSCAN labelling.

    A point is core when its closed ``eps`` ball (itself included) holds at
    least ``min_pts`` points. Clusters are the connected components of the
    core graph, numbered by their smallest core index; border points join the
    lowest-numbered adjacent cluster. Returns ``(labels, core_mask)`` with
    label ``-1`` for noise.
    """
    if not eps > 0 or min_pts < 1:
        raise ValueError("eps must be positive and min_pts >= 1")
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    n = len(pts)
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return labels, np.zeros(0, dtype=bool)
    pairs = spatial_index(pts).query_pairs(eps, output_type="ndarray")
    i, j = np.ascontiguousarray(pairs[:, 0]), np.ascontiguousarray(pairs[:, 1])
    degree = np.bincount(i, minlength=n) + np.bincount(j, minlength=n)
    core = degree + 1 >= min_pts
    if not core.any():
        return labels, core

    core_idx = np.flatnonzero(core)
    remap = np.full(n, -1, dtype=np.int64)
    remap[core_idx] = np.arange(len(core_idx))
    m = len(core_idx)
    both = core.take(i) & core.take(j)
    _, comp = _components(remap.take(i[both]), remap.take(j[both]), m)
    # Number components by their smallest member so labels do not depend on traversal order.
    _, first = np.unique(comp, return_index=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    labels[core_idx] = rank[comp]

    # Border points take the lowest label among their core neighbours.
    ci, cj = core.take(i), core.take(j)
    a = ci & ~cj
    bb = cj & ~ci
    border = np.concatenate([j[a], i[bb]])
    if len(border):
        cand = np.concatenate([labels[i[a]], labels[j[bb]]])
        order = np.lexsort((cand, border))
        ub, pos = np.unique(border[order], return_index=True)
        labels[ub] = cand[order][pos]
    return labels, core


def clusters_from_labels(cloud: np.ndarray, labels: np.ndarray, start_id: int = 0) -> list[Cluster]:
    if len(labels) == 0 or labels.max() < 0:
        return []
    order = np.argsort(labels, kind="stable")
    sorted_labels = labels[order]
    out = []
    for lab in range(labels.max() + 1):
        lo, hi = np.searchsorted(sorted_labels, [lab, lab + 1])
        if hi > lo:
            out.append(Cluster.from_indices(start_id + len(out), order[lo:hi], cloud))
    return out


def dbscan(cloud, eps: float, min_pts: int, workers: int = 1) -> list[Cluster]:
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    labels, _ = dbscan_labels(pts, eps, min_pts, workers)
    return clusters_from_labels(pts, labels)


class DBSCANClusterer(ClusterMixin, BaseEstimator):
    """Estimator facade over :func:`dbscan_labels`."""

    def __init__(self, eps=0.15, min_pts=8, n_jobs=1):
        self.eps = eps
        self.min_pts = min_pts
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=0)
        self.labels_, core = dbscan_labels(X, self.eps, self.min_pts, self.n_jobs)
        self.core_sample_indices_ = np.flatnonzero(core)
        return self


def _project_world(points_world: np.ndarray, cam: CameraModel, pose: Pose):
    cam_pts = pose.inverse().apply(points_world)
    uv, valid = cam.project(cam_pts)
    return uv, valid, cam_pts[:, 2]


def box_point_counts(clusters, cloud, detections, cam: CameraModel, pose: Pose) -> np.ndarray:
    """``counts[b, c]``: points of cluster ``c`` projecting inside box ``b``."""
    counts = np.zeros((len(detections), len(clusters)), dtype=np.int64)
    if not clusters or not detections:
        return counts
    cloud = np.asarray(cloud, dtype=float)
    label = np.full(len(cloud), len(clusters), dtype=np.int64)
    for c, cl in enumerate(clusters):
        label[cl.indices] = c
    member = np.flatnonzero(label < len(clusters))
    uv, valid, _ = _project_world(cloud[member], cam, pose)
    member, uv = member[valid], uv[valid]
    for b, box in enumerate(detections):
        inside = box.contains(uv)
        counts[b] = np.bincount(label[member[inside]], minlength=len(clusters))[:len(clusters)]
    return counts


def box_owners(clusters, cloud, detections, cam: CameraModel, pose: Pose) -> list[Optional[int]]:
    """Index of the cluster each box links to (most in-box points, nearer wins ties)."""
    counts = box_point_counts(clusters, cloud, detections, cam, pose)
    if not clusters:
        return [None] * len(detections)
    depths = pose.inverse().apply(np.array([c.centroid for c in clusters]))[:, 2]
    owners = []
    for b in range(len(detections)):
        best = int(counts[b].max()) if counts.shape[1] else 0
        if best == 0:
            owners.append(None)
            continue
        tied = np.flatnonzero(counts[b] == best)
        owners.append(int(tied[np.argmin(depths[tied])]))
    return owners


def refine_with_boxes(clusters, cloud, detections, cam: CameraModel, pose: Pose,
                      params: ClusteringParams) -> list[Cluster]:
    """Split clusters shared by several boxes or only partly covered by one."""
    if not detections or not clusters:
        return list(clusters)
    cloud = np.asarray(cloud, dtype=float)
    uv, valid, _ = _project_world(cloud, cam, pose)
    owners = box_owners(clusters, cloud, detections, cam, pose)
    boxes_of: dict[int, list[int]] = {}
    for b, c in enumerate(owners):
        if c is not None:
            boxes_of.setdefault(c, []).append(b)

    out: list[Cluster] = []

    def emit(idx, link):
        if len(idx) >= params.min_pts:
            out.append(Cluster.from_indices(len(out), idx, cloud, link))

    for c, cl in enumerate(clusters):
        boxes = boxes_of.get(c, [])
        idx = cl.indices
        if not boxes:
            emit(idx, None)
            continue
        inside = np.zeros((len(boxes), len(idx)), dtype=bool)
        for k, b in enumerate(boxes):
            inside[k] = valid[idx] & detections[b].contains(uv[idx])
        if len(boxes) == 1:
            frac = inside[0].mean()
            if frac >= params.box_containment_threshold:
                emit(idx, boxes[0])
            else:
                emit(idx[inside[0]], boxes[0])
                emit(idx[~inside[0]], None)
            continue
        # Several boxes: points inside one or more boxes go to the box whose
        # center is nearest in the image; the rest join the closest fragment.
        centers = np.array([detections[b].center for b in boxes])
        d2 = ((uv[idx][:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        d2 = np.where(inside.T, d2, np.inf)
        assign = np.where(inside.any(axis=0), np.argmin(d2, axis=1), -1)
        present = [k for k in range(len(boxes)) if np.any(assign == k)]
        if not present:
            emit(idx, None)
            continue
        cents = np.array([cloud[idx[assign == k]].mean(axis=0) for k in present])
        rest = np.flatnonzero(assign == -1)
        if len(rest):
            dd = ((cloud[idx[rest]][:, None, :] - cents[None]) ** 2).sum(axis=2)
            assign[rest] = np.asarray(present)[np.argmin(dd, axis=1)]
        for k in present:
            emit(idx[assign == k], boxes[k])
    return out


@dataclass
class Association:
    matches: dict  # cluster index -> track id
    new: list  # cluster indices without a track
    lost: list  # track ids without a cluster


def associate_centroids(current, previous_tracks, max_dist: float) -> Association:
    """Greedy global-closest matching of cluster centroids to track tails."""
    tracks = list(previous_tracks)
    if not current or not tracks:
        return Association({}, list(range(len(current))), [t.id for t in tracks])
    a = np.array([c.centroid for c in current])
    b = np.array([t.centroid for t in tracks])
    dist = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    ci, ti = np.nonzero(dist <= max_dist)
    order = np.lexsort((ti, ci, dist[ci, ti]))
    used_c, used_t, matches = set(), set(), {}
    for k in order:
        c, t = int(ci[k]), int(ti[k])
        if c in used_c or t in used_t:
            continue
        used_c.add(c)
        used_t.add(t)
        matches[c] = tracks[t].id
    new = [c for c in range(len(current)) if c not in used_c]
    lost = [tracks[t].id for t in range(len(tracks)) if t not in used_t]
    return Association(matches, new, lost)
