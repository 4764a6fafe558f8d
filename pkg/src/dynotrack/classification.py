"""Static/dynamic voting of cluster points against a delayed dense cloud."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .core import CameraModel, Pose, spatial_index

VOTE = 0
EXCLUDED_FOV = 1
EXCLUDED_OCCLUSION = 2
NO_TRACK = -1


@dataclass(frozen=True)
class VotingParams:
    delta: float = 0.4
    velocity_threshold: float = 0.45
    abs_dynamic_threshold: int = 100
    rel_dynamic_threshold: float = 0.8
    consistency_horizon: float = 0.4
    depthmap_samples: int = 2000
    occlusion_margin: float = 0.15
    pixel_nn_radius: float = 5.0

    def __post_init__(self):
        if not self.delta > 0 or not self.velocity_threshold > 0:
            raise ValueError("delta and velocity_threshold must be positive")
        if not 0 < self.rel_dynamic_threshold <= 1:
            raise ValueError("rel_dynamic_threshold must lie in (0, 1]")
        if self.consistency_horizon < 0:
            raise ValueError("consistency_horizon must be non-negative")
        if self.abs_dynamic_threshold < 1 or self.depthmap_samples < 1:
            raise ValueError("thresholds and sample counts must be positive")
        if self.occlusion_margin < 0 or not self.pixel_nn_radius > 0:
            raise ValueError("invalid occlusion parameters")


@dataclass(frozen=True)
class Vote:
    value: str  # "static", "dynamic" or "excluded"
    nn_distance: Optional[float] = None

    def __post_init__(self):
        if (self.value == "excluded") != (self.nn_distance is None):
            raise ValueError("excluded votes carry no distance, others must")


@dataclass
class ApproxDepthMap:
    """Sparse depth image built from sampled dense points of one frame."""

    pixels: np.ndarray  # (M, 2)
    depths: np.ndarray  # (M,)
    points: np.ndarray  # (M, 3) camera frame
    track_ids: np.ndarray  # (M,)
    _tree: Optional[cKDTree] = None

    def __len__(self) -> int:
        return len(self.depths)

    @property
    def tree(self) -> Optional[cKDTree]:
        if self._tree is None and len(self.depths):
            self._tree = cKDTree(self.pixels)
        return self._tree

    def nearest(self, uv, radius: float):
        """Index of the nearest sample within ``radius`` pixels, ``-1`` if none."""
        uv = np.asarray(uv, dtype=float).reshape(-1, 2)
        if self.tree is None or len(uv) == 0:
            return np.full(len(uv), -1, dtype=np.int64)
        d, i = self.tree.query(uv, k=1, distance_upper_bound=np.nextafter(radius, np.inf))
        return np.where(np.isfinite(d), i, -1).astype(np.int64)


def build_depth_map(dense_cam, pose: Pose, cam: CameraModel, samples: int, rng: np.random.Generator,
                    labeled_cloud=None, workers: int = 1) -> ApproxDepthMap:
    """Project a random subset of the dense cloud onto the image plane.

    ``labeled_cloud`` is ``(filtered_world, track_ids)`` of the same frame; each
    sample takes the track id of its nearest filtered point.
    """
    pts = np.asarray(dense_cam, dtype=float).reshape(-1, 3)
    n = len(pts)
    if n == 0:
        return ApproxDepthMap(np.zeros((0, 2)), np.zeros(0), np.zeros((0, 3)), np.zeros(0, np.int64))
    take = rng.choice(n, size=min(samples, n), replace=False) if samples < n else np.arange(n)
    sub = pts[take]
    uv, valid = cam.project(sub)
    sub, uv = sub[valid], uv[valid]
    ids = np.full(len(sub), NO_TRACK, dtype=np.int64)
    if labeled_cloud is not None and len(sub):
        fw, fids = labeled_cloud
        fw = np.asarray(fw, dtype=float).reshape(-1, 3)
        if len(fw):
            _, nn = spatial_index(fw).query(pose.apply(sub), k=1, workers=workers)
            ids = np.asarray(fids, dtype=np.int64)[nn]
    return ApproxDepthMap(uv, sub[:, 2].copy(), sub, ids)


def exclusion_status(q_world, q_track_ids, depth_map: ApproxDepthMap, prev_pose: Pose,
                     cam: CameraModel, params: VotingParams, depth_limit: float = np.inf) -> np.ndarray:
    """Per-point status: ``VOTE``, ``EXCLUDED_FOV`` or ``EXCLUDED_OCCLUSION``.

    A point is outside the previous view when it projects outside the previous
    image or lies beyond the trusted ``depth_limit`` of the previous camera.
    """
    q = np.asarray(q_world, dtype=float).reshape(-1, 3)
    tid = np.broadcast_to(np.asarray(q_track_ids, dtype=np.int64), (len(q),))
    status = np.full(len(q), VOTE, dtype=np.int8)
    if len(q) == 0:
        return status
    q_prev = prev_pose.inverse().apply(q)
    uv, valid = cam.project(q_prev)
    valid &= q_prev[:, 2] <= depth_limit
    status[~valid] = EXCLUDED_FOV
    idx = np.flatnonzero(valid)
    nn = depth_map.nearest(uv[idx], params.pixel_nn_radius)
    hit = nn >= 0
    idx, nn = idx[hit], nn[hit]
    occluded = depth_map.depths[nn] < q_prev[idx, 2] - params.occlusion_margin
    other = depth_map.track_ids[nn] != tid[idx]
    status[idx[occluded & other]] = EXCLUDED_OCCLUSION
    return status


def check_exclusion(q_world, track_of_q: int, depth_map: ApproxDepthMap, prev_pose: Pose,
                    cam: CameraModel, params: VotingParams, depth_limit: float = np.inf) -> str:
    """Single-point form of :func:`exclusion_status`: ``votes``, ``excluded_fov`` or ``excluded_occlusion``."""
    s = exclusion_status(q_world, [track_of_q], depth_map, prev_pose, cam, params, depth_limit)[0]
    return {VOTE: "votes", EXCLUDED_FOV: "excluded_fov", EXCLUDED_OCCLUSION: "excluded_occlusion"}[int(s)]


def nn_distances(query_world, previous_dense_world, workers: int = 1, upper_bound: float = np.inf) -> np.ndarray:
    """Distance from each query point to its nearest neighbour in the previous dense cloud.

    ``previous_dense_world`` may be a prebuilt ``cKDTree``. Distances beyond
    ``upper_bound`` are reported as ``inf``, which lets the search prune early.
    """
    q = np.asarray(query_world, dtype=float).reshape(-1, 3)
    tree = previous_dense_world if isinstance(previous_dense_world, cKDTree) else cKDTree(
        np.asarray(previous_dense_world, dtype=float).reshape(-1, 3))
    if len(q) == 0:
        return np.zeros(0)
    if tree.n == 0:
        return np.full(len(q), np.inf)
    d, _ = tree.query(q, k=1, workers=workers, distance_upper_bound=upper_bound)
    return d


def vote_point(q_world, previous_dense_world, params: VotingParams) -> Vote:
    d = float(nn_distances(q_world, previous_dense_world)[0])
    return Vote("dynamic" if d / params.delta >= params.velocity_threshold else "static", d)


def is_dynamic_distance(d, params: VotingParams) -> np.ndarray:
    return np.asarray(d) / params.delta >= params.velocity_threshold


def dynamic_distance_bound(params: VotingParams) -> float:
    """Smallest NN distance that votes dynamic; searching beyond it changes no vote."""
    return params.velocity_threshold * params.delta


def frame_verdict(n_dynamic: int, n_voting: int, params: VotingParams) -> Optional[str]:
    """Cluster verdict for one frame, ``None`` when no point voted."""
    if n_voting == 0:
        return None
    if n_dynamic >= params.abs_dynamic_threshold or n_dynamic / n_voting >= params.rel_dynamic_threshold:
        return "dynamic"
    return "static"


_TIME_EPS = 1e-9


def classify_cluster(votes, track, params: VotingParams, now: float) -> str:
    """Fold this frame's votes into ``track`` and return its motion class."""
    values = [v.value for v in votes]
    verdict = frame_verdict(values.count("dynamic"), len(values) - values.count("excluded"), params)
    return apply_verdict(track, verdict, params, now)


def apply_verdict(track, verdict: Optional[str], params: VotingParams, now: float) -> str:
    if verdict is None:
        return track.motion_class
    hist = track.vote_history
    hist.append((now, verdict))
    while hist and hist[0][0] < now - params.consistency_horizon - _TIME_EPS:
        hist.popleft()
    kinds = {v for _, v in hist}
    track.motion_class = "uncertain" if len(kinds) > 1 else verdict
    return track.motion_class
