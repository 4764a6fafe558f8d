from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynotrack.classification import (EXCLUDED_FOV, EXCLUDED_OCCLUSION, VOTE, Vote, VotingParams, apply_verdict,
                                      build_depth_map, check_exclusion, classify_cluster, dynamic_distance_bound,
                                      exclusion_status, frame_verdict, is_dynamic_distance, nn_distances, vote_point)
from dynotrack.clustering import ClusterTrack
from dynotrack.core import CameraModel, Pose
from oracles import nn_oracle

CAM = CameraModel(100.0, 100.0, 50.0, 50.0, 100, 100)
# Camera at the world origin looking along world +x (optical z = world x).
POSE = Pose.from_matrix(np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]]))
P = VotingParams()


def wall(depth, n=400, half=0.4, seed=0):
    """Camera-frame points of a fronto-parallel square at ``depth``."""
    rng = np.random.default_rng(seed)
    return np.column_stack([rng.uniform(-half, half, (n, 2)), np.full(n, depth)])


class TestDepthMap:
    def test_wall_depth_read_back(self):
        dm = build_depth_map(wall(3.0), POSE, CAM, 2000, np.random.default_rng(0))
        assert len(dm) == 400
        i = dm.nearest([[50.0, 50.0]], P.pixel_nn_radius)[0]
        assert i >= 0 and dm.depths[i] == pytest.approx(3.0)

    def test_sample_count_capped_without_repeats(self):
        pts = wall(3.0, n=5000)
        dm = build_depth_map(pts, POSE, CAM, 2000, np.random.default_rng(1))
        assert len(dm) == 2000
        assert len(np.unique(dm.points, axis=0)) == 2000
        small = build_depth_map(pts[:300], POSE, CAM, 2000, np.random.default_rng(1))
        assert len(small) == 300

    def test_empty_map_has_no_neighbour(self):
        dm = build_depth_map(np.zeros((0, 3)), POSE, CAM, 2000, np.random.default_rng(0))
        assert dm.nearest([[10.0, 10.0]], 5.0)[0] == -1

    def test_samples_labelled_by_nearest_filtered_point(self):
        pts = wall(2.0, n=50)
        world = POSE.apply(pts)
        dm = build_depth_map(pts, POSE, CAM, 100, np.random.default_rng(0), (world, np.arange(50) + 7))
        np.testing.assert_array_equal(np.sort(dm.track_ids), np.arange(50) + 7)


class TestExclusion:
    def setup_method(self):
        # Track 1 occupied a wall at 2 m in the previous frame.
        pts = wall(2.0, n=2000)
        self.dm = build_depth_map(pts, POSE, CAM, 2000, np.random.default_rng(0),
                                  (POSE.apply(pts), np.ones(2000, dtype=np.int64)))

    def test_behind_another_track_is_excluded(self):
        assert check_exclusion([[3.0, 0.0, 0.0]], 2, self.dm, POSE, CAM, P) == "excluded_occlusion"

    def test_behind_own_track_still_votes(self):
        assert check_exclusion([[3.0, 0.0, 0.0]], 1, self.dm, POSE, CAM, P) == "votes"

    def test_within_margin_votes(self):
        assert check_exclusion([[2.1, 0.0, 0.0]], 2, self.dm, POSE, CAM, P) == "votes"

    def test_outside_previous_view(self):
        assert check_exclusion([[-1.0, 0.0, 0.0]], 2, self.dm, POSE, CAM, P) == "excluded_fov"
        assert check_exclusion([[1.0, 5.0, 0.0]], 2, self.dm, POSE, CAM, P) == "excluded_fov"

    def test_beyond_trusted_depth(self):
        assert check_exclusion([[4.9, 0.3, 0.0]], 1, self.dm, POSE, CAM, P, depth_limit=4.82) == "excluded_fov"

    def test_vectorised_statuses(self):
        q = [[3.0, 0.0, 0.0], [3.0, 0.0, 0.0], [-1.0, 0, 0]]
        np.testing.assert_array_equal(exclusion_status(q, [2, 1, 1], self.dm, POSE, CAM, P),
                                      [EXCLUDED_OCCLUSION, VOTE, EXCLUDED_FOV])


class TestVoting:
    def test_displaced_point_votes_dynamic(self):
        v = vote_point([0.30, 0.0, 0.0], [[0.0, 0.0, 0.0]], P)
        assert v == Vote("dynamic", pytest.approx(0.30))

    def test_unmoved_point_votes_static(self):
        assert vote_point([1.0, 2.0, 3.0], [[1.0, 2.0, 3.0]], P) == Vote("static", 0.0)

    def test_threshold_is_inclusive(self):
        b = dynamic_distance_bound(P)
        assert b == pytest.approx(0.18)
        assert is_dynamic_distance(b, P) and not is_dynamic_distance(np.nextafter(b, 0), P)

    def test_nn_distances_match_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            q, ref = rng.normal(size=(int(rng.integers(1, 200)), 3)), rng.normal(size=(int(rng.integers(1, 300)), 3))
            np.testing.assert_allclose(nn_distances(q, ref), nn_oracle(q, ref), atol=1e-12)

    def test_bounded_search_preserves_votes(self):
        rng = np.random.default_rng(4)
        q, ref = rng.normal(size=(500, 3)), rng.normal(size=(500, 3))
        b = dynamic_distance_bound(P)
        np.testing.assert_array_equal(is_dynamic_distance(nn_distances(q, ref, upper_bound=b), P),
                                      is_dynamic_distance(nn_oracle(q, ref), P))

    def test_excluded_vote_has_no_distance(self):
        with pytest.raises(ValueError):
            Vote("excluded", 0.1)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.1801, 2.0))
    def test_leading_edge_of_rigid_shift_votes_dynamic(self, seed, length):
        rng = np.random.default_rng(seed)
        obj = rng.normal(0, 0.3, (int(rng.integers(1, 300)), 3))
        direction = rng.normal(size=3)
        shift = direction / np.linalg.norm(direction) * length
        lead = obj[np.argmax(obj @ shift)] + shift
        assert vote_point(lead, obj, P).value == "dynamic"


class TestFrameVerdict:
    def test_absolute_threshold(self):
        assert frame_verdict(120, 300, P) == "dynamic"

    def test_relative_threshold(self):
        assert frame_verdict(9, 10, P) == "dynamic"

    def test_static(self):
        assert frame_verdict(0, 50, P) == "static"
        assert frame_verdict(50, 100, P) == "static"

    def test_no_votes(self):
        assert frame_verdict(0, 0, P) is None

    def test_monotone_in_dynamic_votes(self):
        for n in range(1, 400, 7):
            verdicts = [frame_verdict(k, n, P) for k in range(n + 1)]
            first = verdicts.index("dynamic")
            assert all(v == "dynamic" for v in verdicts[first:])

    def test_alternating_verdicts_become_uncertain(self):
        tr = ClusterTrack(0)
        assert apply_verdict(tr, "dynamic", P, 0.0) == "dynamic"
        assert apply_verdict(tr, "static", P, 0.1) == "uncertain"
        assert apply_verdict(tr, "dynamic", P, 0.2) == "uncertain"

    def test_consistent_verdicts_settle_after_horizon(self):
        tr = ClusterTrack(0)
        apply_verdict(tr, "dynamic", P, 0.0)
        for k in range(1, 5):
            apply_verdict(tr, "static", P, 0.1 * k)
        assert tr.motion_class == "uncertain"
        assert apply_verdict(tr, "static", P, 0.5) == "static"

    def test_no_votes_keeps_class(self):
        tr = ClusterTrack(0, motion_class="static")
        assert apply_verdict(tr, None, P, 1.0) == "static"
        assert len(tr.vote_history) == 0

    def test_classify_ignores_excluded_votes(self):
        tr = ClusterTrack(0)
        votes = [Vote("dynamic", 0.3)] * 9 + [Vote("static", 0.0)] + [Vote("excluded")] * 50
        assert classify_cluster(votes, tr, P, 0.0) == "dynamic"


def test_resampled_static_surface_votes_static():
    rng = np.random.default_rng(5)
    surface = lambda n: np.column_stack([rng.uniform(0, 2, n), rng.uniform(0, 1, n), np.zeros(n)])
    d = nn_distances(surface(800), surface(4000))
    assert not is_dynamic_distance(d, P).any()


def test_invalid_parameters():
    with pytest.raises(ValueError):
        VotingParams(delta=0.0)
    with pytest.raises(ValueError):
        VotingParams(rel_dynamic_threshold=1.5)
