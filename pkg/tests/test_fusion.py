from __future__ import annotations

import numpy as np
import pytest

from dynotrack.clustering import Cluster, ClusterTrack
from dynotrack.core import BBox2D, CameraModel, Pose
from dynotrack.fusion import (BoxTrack, DetectorFusion, FusionParams, associate_box_to_cluster,
                              association_frequency, iou, person_track_ids, track_boxes, update_person_confidence)

CAM = CameraModel(100.0, 100.0, 50.0, 50.0, 100, 100)
POSE = Pose.from_matrix(np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]]))
P = FusionParams()


class TestIou:
    def test_identical(self):
        assert iou(BBox2D(0, 0, 10, 10), BBox2D(0, 0, 10, 10)) == 1.0

    def test_disjoint(self):
        assert iou(BBox2D(0, 0, 10, 10), BBox2D(20, 0, 10, 10)) == 0.0

    def test_half_overlap(self):
        assert iou(BBox2D(0, 0, 10, 10), BBox2D(5, 0, 10, 10)) == pytest.approx(1 / 3)

    def test_symmetric_and_bounded(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            a, b = (BBox2D(*rng.uniform(0, 50, 2), *rng.uniform(1, 30, 2)) for _ in range(2))
            assert iou(a, b) == pytest.approx(iou(b, a))
            assert 0.0 <= iou(a, b) <= 1.0


class TestBoxTracking:
    def test_drifting_box_keeps_one_track(self):
        tracks, ids = [], set()
        for k in range(50):
            tracks, matched = track_boxes([BBox2D(100 + 2 * k, 50, 40, 100)], tracks, P, k / 10)
            ids.add(matched[0].id)
        assert ids == {0} and len(tracks) == 1

    def test_order_swap_preserves_ids(self):
        a, b = BBox2D(10, 10, 30, 60), BBox2D(200, 10, 30, 60)
        tracks, m0 = track_boxes([a, b], [], P, 0.0)
        tracks, m1 = track_boxes([b, a], tracks, P, 0.1)
        assert [t.id for t in m1] == [m0[1].id, m0[0].id]

    def test_unmatched_tracks_age_out(self):
        tracks, _ = track_boxes([BBox2D(0, 0, 10, 10)], [], P, 0.0)
        tracks, _ = track_boxes([], tracks, P, 1.0)
        assert len(tracks) == 1
        tracks, _ = track_boxes([], tracks, P, 2.5)
        assert tracks == []

    def test_low_overlap_starts_new_track(self):
        tracks, _ = track_boxes([BBox2D(0, 0, 10, 10)], [], P, 0.0)
        tracks, m = track_boxes([BBox2D(7, 0, 10, 10)], tracks, P, 0.1)
        assert m[0].id == 1 and len(tracks) == 2


def slab(y0, n, x=3.0, seed=0):
    rng = np.random.default_rng(seed)
    return np.column_stack([np.full(n, x), y0 - rng.uniform(0, 0.4, n), rng.uniform(0.2, 1.4, n)])


class TestBoxToCluster:
    def test_larger_in_box_population_wins(self):
        a, b = slab(0.2, 200), slab(0.2, 30, x=3.5, seed=1)
        cloud = np.vstack([a, b])
        clusters = [Cluster.from_indices(0, np.arange(200, 230), cloud), Cluster.from_indices(1, np.arange(200), cloud)]
        assert associate_box_to_cluster(BBox2D(20, 0, 60, 100), clusters, cloud, CAM, POSE) == 1

    def test_empty_box(self):
        cloud = slab(0.2, 100)
        clusters = [Cluster.from_indices(0, np.arange(100), cloud)]
        assert associate_box_to_cluster(BBox2D(0, 0, 5, 5), clusters, cloud, CAM, POSE) is None


class TestPersonConfidence:
    def _run(self, rate, duration, track_id=3):
        cloud = slab(0.2, 100)
        clusters = [Cluster.from_indices(0, np.arange(100), cloud)]
        ct = ClusterTrack(track_id)
        fusion = DetectorFusion(P)
        promoted_at = None
        for k in range(int(round(rate * duration))):
            now = k / rate
            fusion.step([BBox2D(20, 0, 60, 100, 0.9)], clusters, [track_id], cloud, CAM, POSE, [ct], now)
            if ct.is_person and promoted_at is None:
                promoted_at = now
        return ct, promoted_at

    def test_steady_detections_promote(self):
        ct, t = self._run(8.5, 1.0)
        assert ct.is_person and t <= 1.0

    def test_low_rate_does_not_promote(self):
        ct, _ = self._run(1.0, 6.0)
        assert not ct.is_person

    def test_no_associations_leave_tracks_unchanged(self):
        cts = [ClusterTrack(0), ClusterTrack(1, is_person=True)]
        update_person_confidence(cts, [], P, 5.0)
        assert [c.is_person for c in cts] == [False, True]

    def test_flipping_association_promotes_neither(self):
        bt = BoxTrack(0, [(0.0, BBox2D(0, 0, 10, 10))])
        cts = [ClusterTrack(0), ClusterTrack(1)]
        for k in range(40):
            now = k / 10
            bt.record_association(k % 2, now)
            update_person_confidence(cts, [bt], P, now)
        assert not any(c.is_person for c in cts)

    def test_frequency_counts_distinct_timestamps(self):
        bts = [BoxTrack(i, [(0.0, BBox2D(0, 0, 10, 10))]) for i in range(2)]
        for k in range(5):
            for bt in bts:
                bt.record_association(7, k * 0.1)
        assert association_frequency(7, bts, P, 0.4) == pytest.approx(5 / P.freq_window)

    def test_new_track_must_earn_person(self):
        ct, _ = self._run(8.5, 1.0)
        assert ct.is_person
        fresh = ClusterTrack(ct.id + 1)
        update_person_confidence([fresh], [], P, 1.0)
        assert not fresh.is_person
        assert list(person_track_ids([ct, fresh])) == [ct.id]

    def test_low_confidence_detections_ignored(self):
        cloud = slab(0.2, 100)
        clusters = [Cluster.from_indices(0, np.arange(100), cloud)]
        ct, fusion = ClusterTrack(0), DetectorFusion(P)
        for k in range(20):
            fusion.step([BBox2D(20, 0, 60, 100, 0.2)], clusters, [0], cloud, CAM, POSE, [ct], k / 10)
        assert not ct.is_person


def test_invalid_parameters():
    with pytest.raises(ValueError):
        FusionParams(iou_threshold=1.0)
