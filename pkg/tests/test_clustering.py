from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynotrack.clustering import (Cluster, ClusteringParams, ClusterTrack, DBSCANClusterer, associate_centroids,
                                  box_owners, dbscan, dbscan_labels, refine_with_boxes)
from dynotrack.core import BBox2D, CameraModel, Pose
from oracles import dbscan_oracle

CAM = CameraModel(100.0, 100.0, 50.0, 50.0, 100, 100)
# Camera at the world origin looking along world +x.
POSE = Pose.from_matrix(np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]]))


def track_at(tid, xy):
    t = ClusterTrack(tid)
    t.extend(0.0, [xy[0], xy[1], 0.0])
    return t


def cluster_at(cid, xy):
    return Cluster(cid, np.array([cid]), np.array([xy[0], xy[1], 0.0]))


class TestDbscan:
    def test_two_groups(self):
        g = np.stack(np.meshgrid(np.arange(5) * 0.05, np.arange(5) * 0.05, [0.0, 0.05], indexing="ij"), -1)
        a = g.reshape(-1, 3)
        assert len(a) == 50
        clusters = dbscan(np.vstack([a, a + [2.0, 0, 0]]), 0.15, 5)
        assert len(clusters) == 2
        assert sorted(len(c) for c in clusters) == [50, 50]

    def test_empty(self):
        assert dbscan(np.zeros((0, 3)), 0.15, 8) == []

    def test_identical_points(self):
        clusters = dbscan(np.ones((20, 3)), 0.15, 8)
        assert len(clusters) == 1 and len(clusters[0]) == 20

    def test_matches_oracle(self):
        rng = np.random.default_rng(5)
        for i in range(50):
            n = int(rng.integers(1, 301))
            pts = (rng.integers(0, 6, (n, 3)) * 0.125 if i % 3 == 0
                   else rng.normal(0, rng.uniform(0.05, 0.5), (n, 3)))
            eps, m = float(rng.choice([0.125, 0.25, rng.uniform(0.05, 0.3)])), int(rng.integers(1, 10))
            labels, core = dbscan_labels(pts, eps, m)
            o_core, o_noise, groups = dbscan_oracle(pts, eps, m)
            np.testing.assert_array_equal(core, o_core)
            np.testing.assert_array_equal(labels == -1, o_noise)
            assert {frozenset(np.flatnonzero(core & (labels == k)).tolist()) for k in set(labels[core])} == groups

    def test_border_points_join_an_adjacent_cluster(self):
        rng = np.random.default_rng(6)
        pts = rng.normal(0, 0.2, (300, 3))
        labels, core = dbscan_labels(pts, 0.1, 6)
        d = np.linalg.norm(pts[:, None] - pts[None], axis=2) <= 0.1
        for b in np.flatnonzero(~core & (labels >= 0)):
            assert labels[b] in set(labels[np.flatnonzero(d[b] & core)])

    def test_labels_independent_of_threads(self):
        pts = np.random.default_rng(7).normal(0, 0.3, (2000, 3))
        np.testing.assert_array_equal(dbscan_labels(pts, 0.1, 8, 1)[0], dbscan_labels(pts, 0.1, 8, 4)[0])

    def test_estimator_facade(self):
        pts = np.random.default_rng(8).normal(0, 0.3, (500, 3))
        est = DBSCANClusterer(eps=0.1, min_pts=5).fit(pts)
        labels, core = dbscan_labels(pts, 0.1, 5)
        np.testing.assert_array_equal(est.labels_, labels)
        np.testing.assert_array_equal(est.core_sample_indices_, np.flatnonzero(core))
        np.testing.assert_array_equal(DBSCANClusterer(eps=0.1, min_pts=5).fit_predict(pts), labels)

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            dbscan_labels(np.zeros((3, 3)), 0.0, 3)


class TestAssociation:
    def test_unique_nearest(self):
        a = associate_centroids([cluster_at(0, (0.1, 0.0))], [track_at(4, (0.0, 0.0))], 0.8)
        assert a.matches == {0: 4} and a.new == [] and a.lost == []

    def test_crossing_configuration_greedy_equals_optimal(self):
        # Smallest pair first (0.1), then the only remaining pair (0.2).
        c = np.array([[0.0, 0.0], [0.6, 0.0]])
        t = np.array([[0.1, 0.0], [0.6, 0.2]])
        clusters = [cluster_at(i, c[i]) for i in range(2)]
        tracks = [track_at(10 + j, t[j]) for j in range(2)]
        d = np.linalg.norm(c[:, None] - t[None], axis=2)
        np.testing.assert_allclose(d, [[0.1, np.hypot(0.6, 0.2)], [0.5, 0.2]])
        a = associate_centroids(clusters, tracks, 0.8)
        assert a.matches == {0: 10, 1: 11}

    def test_gate_creates_new_track(self):
        a = associate_centroids([cluster_at(0, (3.0, 0.0))], [track_at(1, (0.0, 0.0))], 1.0)
        assert a.matches == {} and a.new == [0] and a.lost == [1]

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(0, 8), st.integers(0, 8))
    def test_partial_injection_within_gate(self, seed, nc, nt):
        rng = np.random.default_rng(seed)
        clusters = [cluster_at(i, rng.uniform(0, 3, 2)) for i in range(nc)]
        tracks = [track_at(100 + j, rng.uniform(0, 3, 2)) for j in range(nt)]
        a = associate_centroids(clusters, tracks, 0.8)
        assert len(set(a.matches.values())) == len(a.matches)
        assert sorted(list(a.matches) + a.new) == list(range(nc))
        assert sorted(set(a.matches.values()) | set(a.lost)) == [t.id for t in tracks]
        by_id = {t.id: t for t in tracks}
        for ci, tid in a.matches.items():
            assert np.linalg.norm(clusters[ci].centroid - by_id[tid].centroid) <= 0.8


def person_block(y0, n=100, x=3.0):
    """Points of a 0.4 m wide, 1.2 m tall slab at distance x, left edge at world y = y0."""
    rng = np.random.default_rng(int(abs(y0) * 100) + n)
    return np.column_stack([np.full(n, x), y0 - rng.uniform(0, 0.4, n), rng.uniform(0.2, 1.4, n)])


def image_box(points_world):
    uv, valid = CAM.project(POSE.inverse().apply(points_world))
    lo, hi = uv.min(axis=0), uv.max(axis=0)
    return BBox2D(lo[0] - 0.5, lo[1] - 0.5, hi[0] - lo[0] + 1.0, hi[1] - lo[1] + 1.0)


class TestRefine:
    params = ClusteringParams()

    def test_no_detections_unchanged(self):
        cloud = person_block(0.5)
        cl = [Cluster.from_indices(0, np.arange(len(cloud)), cloud)]
        out = refine_with_boxes(cl, cloud, [], CAM, POSE, self.params)
        assert len(out) == 1 and np.array_equal(out[0].indices, cl[0].indices)

    def test_two_boxes_split_a_merged_cluster(self):
        a, b = person_block(0.6), person_block(0.1)
        cloud = np.vstack([a, b])
        cl = [Cluster.from_indices(0, np.arange(len(cloud)), cloud)]
        out = refine_with_boxes(cl, cloud, [image_box(a), image_box(b)], CAM, POSE, self.params)
        assert len(out) == 2
        assert sorted(len(c) for c in out) == [100, 100]
        assert {c.bbox_link for c in out} == {0, 1}

    def test_partial_coverage_splits(self):
        person, wall = person_block(0.5, 40), person_block(-0.2, 60)
        cloud = np.vstack([person, wall])
        cl = [Cluster.from_indices(0, np.arange(len(cloud)), cloud)]
        out = refine_with_boxes(cl, cloud, [image_box(person)], CAM, POSE, self.params)
        assert len(out) == 2
        linked = [c for c in out if c.bbox_link == 0]
        assert len(linked) == 1 and set(linked[0].indices) == set(range(40))

    def test_mostly_covered_cluster_kept_whole(self):
        cloud = person_block(0.5)
        cl = [Cluster.from_indices(0, np.arange(len(cloud)), cloud)]
        out = refine_with_boxes(cl, cloud, [image_box(cloud)], CAM, POSE, self.params)
        assert len(out) == 1 and out[0].bbox_link == 0 and len(out[0]) == 100

    def test_never_grows_and_respects_min_pts(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            cloud = np.column_stack([rng.uniform(2, 5, 400), rng.uniform(-1.5, 1.5, 400), rng.uniform(0.2, 1.6, 400)])
            labels = rng.integers(0, 4, 400)
            cl = [Cluster.from_indices(i, np.flatnonzero(labels == i), cloud) for i in range(4)]
            boxes = [BBox2D(*rng.uniform(0, 60, 2), *rng.uniform(5, 40, 2)) for _ in range(int(rng.integers(0, 4)))]
            out = refine_with_boxes(cl, cloud, boxes, CAM, POSE, self.params)
            assert sum(len(c) for c in out) <= 400
            assert all(len(c) >= self.params.min_pts for c in out)
            idx = np.concatenate([c.indices for c in out]) if out else np.zeros(0, int)
            assert len(np.unique(idx)) == len(idx)

    def test_box_owner_prefers_most_points(self):
        person, wall = person_block(0.4, 200), person_block(0.3, 30, x=4.0)
        cloud = np.vstack([person, wall])
        cl = [Cluster.from_indices(0, np.arange(200), cloud), Cluster.from_indices(1, np.arange(200, 230), cloud)]
        assert box_owners(cl, cloud, [image_box(person)], CAM, POSE) == [0]

    def test_box_over_empty_space(self):
        cloud = person_block(0.5)
        cl = [Cluster.from_indices(0, np.arange(len(cloud)), cloud)]
        assert box_owners(cl, cloud, [BBox2D(0, 0, 3, 3)], CAM, POSE) == [None]


def test_track_history_must_increase():
    t = ClusterTrack(0)
    t.extend(1.0, [0, 0, 0])
    with pytest.raises(ValueError):
        t.extend(1.0, [0, 0, 0])
