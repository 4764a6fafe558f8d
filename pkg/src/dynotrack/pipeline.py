"""Per-frame pipeline: filter, cluster, vote, fuse, filter motion, update the grid."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator

from .classification import EXCLUDED_FOV, EXCLUDED_OCCLUSION, NO_TRACK, VOTE, ApproxDepthMap, apply_verdict, \
    build_depth_map, dynamic_distance_bound, exclusion_status, frame_verdict, is_dynamic_distance, nn_distances
from .clustering import ClusterTrack, associate_centroids, dbscan, refine_with_boxes
from .config import PipelineConfig
from .core import CameraModel, Frame, FrameBuffer, Pose, spatial_index
from .filtering import crop_mask, filter_cloud, voxel_downsample
from .fusion import DetectorFusion
from .grid import LayeredGrid, aggregate, expand_dynamic_costs, export_grid, raytrace_clear, update_layers
from .io import dumps_line, encode_cloud, iter_frames, load_camera
from .motion import MotionEstimator, handle_lost_tracks

log = logging.getLogger(__name__)

STAGES = ("filtering", "clustering", "classification", "fusion", "motion", "grid")
CORE_STAGES = ("filtering", "clustering", "classification", "motion", "grid")
MOVING_CLASSES = ("dynamic", "person")
# Tracks in these classes are coasted while unseen and may be re-associated;
# an object often turns uncertain while it is being occluded.
COASTED_CLASSES = ("dynamic", "person", "uncertain")
_SAME_TIME = 1e-9
# A delayed frame is usable for voting when its timestamp is this close
# (as a fraction of the voting delay) to the requested one.
_LOOKUP_TOLERANCE = 0.25


@dataclass
class TrackState:
    id: int
    class_state: str
    centroid: np.ndarray
    velocity: Optional[np.ndarray]
    n_points: int

    def to_dict(self) -> dict:
        return {
            "track_id": self.id,
            "class": self.class_state,
            "centroid": [float(v) for v in self.centroid],
            "velocity": None if self.velocity is None else [float(v) for v in self.velocity],
        }


@dataclass
class FrameResult:
    frame: int
    timestamp: float
    tracks: list
    timings: dict
    diagnostics: dict = field(default_factory=dict)
    grid: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass
class _FrameRecord:
    timestamp: float
    pose: Pose
    tree: cKDTree
    depth_map: ApproxDepthMap


class DynamicObstacleTracker(BaseEstimator):
    """Online tracker over a stream of :class:`~dynotrack.core.Frame`.

    Parameters
    ----------
    camera : CameraModel
        Intrinsics shared by all frames.
    config : PipelineConfig, optional
        Stage parameters; defaults when omitted.
    use_detector : bool
        Fuse 2D person detections carried by the frames.
    n_jobs : int
        Worker threads for neighbour queries. Results do not depend on it.
    seed : int
        Seeds the depth-map subsampling (combined with the frame index).
    keep_diagnostics : bool
        Record per-point voting details in each :class:`FrameResult`.

    Notes
    -----
    ``fit`` consumes a whole sequence from a fresh state; ``partial_fit``
    feeds one frame and keeps the state, so it is the streaming entry point.
    Frames must arrive in strictly increasing time.
    """

    def __init__(self, camera: CameraModel | None = None, config: PipelineConfig | None = None,
                 use_detector: bool = True, n_jobs: int = 1, seed: int = 0, keep_diagnostics: bool = False):
        self.camera = camera
        self.config = config
        self.use_detector = use_detector
        self.n_jobs = n_jobs
        self.seed = seed
        self.keep_diagnostics = keep_diagnostics

    # -- estimator API -------------------------------------------------
    def fit(self, X, y=None):
        self._reset()
        self.results_ = [self.process(f) for f in X]
        return self

    def partial_fit(self, X, y=None):
        if not hasattr(self, "tracks_"):
            self._reset()
        self.results_.append(self.process(X))
        return self

    # -- state ----------------------------------------------------------
    def _reset(self) -> None:
        if self.camera is None:
            raise ValueError("a CameraModel is required")
        self.config_ = self.config if self.config is not None else PipelineConfig()
        cfg = self.config_
        self.tracks_: dict[int, ClusterTrack] = {}
        self.motion_ = MotionEstimator(cfg.motion)
        self.fusion_ = DetectorFusion(cfg.fusion)
        self.grid_ = LayeredGrid(cfg.grid.spec())
        self.buffer_ = FrameBuffer(horizon=2.0 * cfg.voting.delta + 1.0, capacity=256)
        self.static_points_: list[np.ndarray] = []
        self.results_: list[FrameResult] = []
        self._next_track = 0
        self._prev_time: Optional[float] = None

    def _new_track(self, now: float, centroid) -> ClusterTrack:
        tr = ClusterTrack(self._next_track, created=now)
        tr.extend(now, centroid)
        self.tracks_[tr.id] = tr
        self._next_track += 1
        return tr

    @property
    def static_cloud_(self) -> np.ndarray:
        """Accumulated points of static clusters, voxel-averaged."""
        if not self.static_points_:
            return np.zeros((0, 3))
        return voxel_downsample(np.vstack(self.static_points_), self.config_.filtering.voxel_leaf)

    # -- one frame ------------------------------------------------------
    def process(self, frame: Frame) -> FrameResult:
        if not hasattr(self, "tracks_"):
            self._reset()
        cfg = self.config_
        cam = self.camera
        now = float(frame.timestamp)
        if self._prev_time is not None and now <= self._prev_time:
            raise ValueError("frames must arrive in strictly increasing time")
        pose = frame.pose
        timings = dict.fromkeys(STAGES, 0.0)
        diag: dict = {}
        t_start = time.perf_counter()

        # Filtering
        t0 = time.perf_counter()
        keep, world = crop_mask(frame.dense_cloud, cfg.filtering, pose)
        dense_world = world[keep]
        dense_cam = frame.dense_cloud[keep]
        filtered = filter_cloud(dense_world, cfg.filtering, self.n_jobs)
        frame.filtered_cloud = filtered
        timings["filtering"] = time.perf_counter() - t0

        # Clustering and centroid association
        t0 = time.perf_counter()
        cp = cfg.clustering
        clusters = dbscan(filtered, cp.eps, cp.min_pts, self.n_jobs)
        if self.use_detector and frame.detections:
            clusters = refine_with_boxes(clusters, filtered, frame.detections, cam, pose, cp)
        previous = [] if self._prev_time is None else [
            tr for tr in self.tracks_.values() if abs(tr.last_seen - self._prev_time) <= _SAME_TIME]
        assoc = associate_centroids(clusters, previous, cp.max_association_distance)
        track_of = [None] * len(clusters)
        for ci, tid in assoc.matches.items():
            self.tracks_[tid].extend(now, clusters[ci].centroid)
            track_of[ci] = tid
        new_ids = {}
        for ci in assoc.new:
            tr = self._new_track(now, clusters[ci].centroid)
            track_of[ci] = tr.id
            new_ids[tr.id] = ci
        timings["clustering"] = time.perf_counter() - t0

        # Motion: update matched filters, re-associate lost moving tracks
        t0 = time.perf_counter()
        mp = cfg.motion
        for ci, tid in assoc.matches.items():
            self.motion_.observe(tid, clusters[ci].centroid[:2], now)
        seen_now = set(track_of)
        lost = {}
        for tid, tr in self.tracks_.items():
            if tid in seen_now or tr.class_state not in COASTED_CLASSES:
                continue
            kt = self.motion_.coast(tid, now)
            if kt is not None:
                lost[tid] = kt
        merges = handle_lost_tracks(lost, {tid: clusters[ci].centroid[:2] for tid, ci in new_ids.items()}, mp, now) \
            if lost and new_ids else []
        for nid, lid in merges:
            ci = new_ids.pop(nid)
            del self.tracks_[nid]
            self.tracks_[lid].extend(now, clusters[ci].centroid)
            track_of[ci] = lid
            self.motion_.adopt(nid, lid)
            self.motion_.observe(lid, clusters[ci].centroid[:2], now)
        for tid, ci in new_ids.items():
            self.motion_.observe(tid, clusters[ci].centroid[:2], now)
        for tid in [tid for tid, tr in self.tracks_.items() if now - tr.last_seen > cp.track_timeout + _SAME_TIME]:
            del self.tracks_[tid]
            self.motion_.drop(tid)
        diag["merges"] = list(merges)
        timings["motion"] = time.perf_counter() - t0

        # Classification by delayed nearest-neighbour voting
        t0 = time.perf_counter()
        vp = cfg.voting
        point_track = np.full(len(filtered), NO_TRACK, dtype=np.int64)
        point_cluster = np.full(len(filtered), -1, dtype=np.int64)
        for ci, cl in enumerate(clusters):
            point_track[cl.indices] = track_of[ci]
            point_cluster[cl.indices] = ci
        rec = self.buffer_.lookup(now - vp.delta)
        usable = rec is not None and rec[0] < now and abs(rec[0] - (now - vp.delta)) <= _LOOKUP_TOLERANCE * vp.delta
        in_cluster = np.flatnonzero(point_cluster >= 0)
        n_vote = np.zeros(len(clusters), dtype=np.int64)
        n_dyn = np.zeros(len(clusters), dtype=np.int64)
        if usable and len(in_cluster):
            r = rec[1]
            q = filtered[in_cluster]
            # Near the previous depth crop the reference neighbourhood may have
            # been cut away, so only points whose whole search ball was in range vote.
            trusted_depth = cfg.filtering.depth_limit - dynamic_distance_bound(vp)
            status = exclusion_status(q, point_track[in_cluster], r.depth_map, r.pose, cam, vp, trusted_depth)
            voting = status == VOTE
            d = nn_distances(q[voting], r.tree, self.n_jobs, np.nextafter(dynamic_distance_bound(vp), np.inf))
            dyn = is_dynamic_distance(d, vp)
            cl_of = point_cluster[in_cluster]
            n_vote = np.bincount(cl_of[voting], minlength=len(clusters))
            n_dyn = np.bincount(cl_of[voting][dyn], minlength=len(clusters))
            if self.keep_diagnostics:
                diag["vote_points"] = q[voting]
                diag["vote_track_ids"] = point_track[in_cluster][voting]
                diag["vote_dynamic"] = dyn
                diag["reference_time"] = rec[0]
            diag["excluded_fov"] = int(np.sum(status == EXCLUDED_FOV))
            diag["excluded_occlusion"] = int(np.sum(status == EXCLUDED_OCCLUSION))
            diag["votes"] = int(voting.sum())
        for ci in range(len(clusters)):
            verdict = frame_verdict(int(n_dyn[ci]), int(n_vote[ci]), vp) if usable else None
            apply_verdict(self.tracks_[track_of[ci]], verdict, vp, now)
        timings["classification"] = time.perf_counter() - t0

        # Detector fusion
        t0 = time.perf_counter()
        if self.use_detector:
            self.fusion_.step(frame.detections, clusters, track_of, filtered, cam, pose,
                              list(self.tracks_.values()), now)
        timings["fusion"] = time.perf_counter() - t0

        # Grid layers
        t0 = time.perf_counter()
        gp = cfg.grid
        grid = self.grid_
        grid.recenter(pose.translation[:2])
        raytrace_clear(grid.static, grid.spec, pose.translation[:2], filtered[:, :2], gp.decay)
        objects, sweeps = [], []
        for ci, cl in enumerate(clusters):
            tr = self.tracks_[track_of[ci]]
            pts = filtered[cl.indices]
            objects.append((tr.class_state, pts))
            if tr.class_state in MOVING_CLASSES:
                kt = self.motion_.filters.get(tr.id)
                vel = np.zeros(2) if kt is None else kt.velocity
                sweeps.append((cl.centroid[:2], vel))
            elif tr.class_state == "static":
                self.static_points_.append(pts)
        update_layers(grid, objects, now, gp)
        expand_dynamic_costs(grid.dynamic, grid.spec, sweeps, gp.prediction_horizon, gp.sweep_floor)
        agg = aggregate(grid.static, grid.dynamic, grid.uncertain, resolution=gp.resolution,
                        static_inflation=gp.static_inflation, dynamic_inflation=gp.dynamic_inflation)
        timings["grid"] = time.perf_counter() - t0

        # Remember this frame as a future voting reference (part of classification)
        t0 = time.perf_counter()
        rng = np.random.default_rng([int(self.seed), int(frame.index)])
        dm = build_depth_map(dense_cam, pose, cam, vp.depthmap_samples, rng, (filtered, point_track), self.n_jobs)
        self.buffer_.push(now, _FrameRecord(now, pose, spatial_index(dense_world), dm))
        timings["classification"] += time.perf_counter() - t0

        self._prev_time = now
        states = []
        for ci, cl in enumerate(clusters):
            tr = self.tracks_[track_of[ci]]
            kt = self.motion_.filters.get(tr.id)
            states.append(TrackState(tr.id, tr.class_state, np.asarray(cl.centroid, dtype=float),
                                     None if kt is None else kt.velocity.copy(), len(cl)))
        states.sort(key=lambda s: s.id)
        timings["total"] = time.perf_counter() - t_start
        return FrameResult(int(frame.index), now, states, timings, diag, agg)


def core_time(timings: dict) -> float:
    """Seconds spent in the stages that run without the person detector."""
    return float(sum(timings[s] for s in CORE_STAGES))


def run_dataset(dataset_dir, out_dir, config: PipelineConfig | None = None, use_detector: bool = True,
                export_grids: bool = False, n_jobs: int = 1, seed: int = 0) -> DynamicObstacleTracker:
    """Run the tracker over a dataset directory and write its outputs.

    Writes ``tracks.jsonl`` (one line per observed track per frame),
    ``timing.csv`` (seconds per stage per frame), ``static_cloud.dpc`` and,
    optionally, ``grids/`` with one raster set per frame.
    """
    dataset_dir, out_dir = Path(dataset_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tracker = DynamicObstacleTracker(load_camera(dataset_dir), config, use_detector, n_jobs, seed)
    tracker._reset()
    if export_grids:
        (out_dir / "grids").mkdir(exist_ok=True)
    with open(out_dir / "tracks.jsonl", "w") as tf, open(out_dir / "timing.csv", "w", newline="") as cf:
        writer = csv.writer(cf)
        writer.writerow(["frame", *STAGES, "total"])
        for frame in iter_frames(dataset_dir):
            res = tracker.process(frame)
            for st in res.tracks:
                tf.write(dumps_line({"frame": res.frame, "timestamp": res.timestamp, **st.to_dict()}))
            writer.writerow([res.frame, *(f"{res.timings[s]:.6f}" for s in STAGES), f"{res.timings['total']:.6f}"])
            if export_grids:
                export_grid(out_dir / "grids", f"{res.frame:06d}", tracker.grid_, res.grid, res.timestamp)
            res.grid = None
            tracker.results_.append(res)
            log.debug("frame %d: %d tracks, %.1f ms", res.frame, len(res.tracks), 1e3 * res.timings["total"])
    (out_dir / "static_cloud.dpc").write_bytes(encode_cloud(tracker.static_cloud_))
    return tracker
