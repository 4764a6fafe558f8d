from __future__ import annotations

import json

import numpy as np
import pytest
from sklearn.base import clone

from dynotrack.config import ConfigError, PipelineConfig
from dynotrack.pipeline import CORE_STAGES, STAGES, DynamicObstacleTracker, core_time
from dynotrack.simulator import load_scene, render_frame


@pytest.fixture(scope="module")
def walker_frames():
    scene = load_scene("single-walker")
    return scene, [render_frame(scene, k)[0] for k in range(30)]


def test_estimator_parameters_round_trip():
    cfg = PipelineConfig.from_dict({"voting": {"delta": 0.3}})
    est = DynamicObstacleTracker(load_scene("single-walker").camera, cfg, use_detector=False, n_jobs=2, seed=7)
    c = clone(est)
    assert c.get_params() == est.get_params()
    assert c.get_params()["seed"] == 7 and c.config.voting.delta == 0.3


def test_partial_fit_matches_fit(walker_frames):
    scene, frames = walker_frames
    batch = DynamicObstacleTracker(scene.camera).fit(frames)
    stream = DynamicObstacleTracker(scene.camera)
    for f in frames:
        stream.partial_fit(f)
    assert len(batch.results_) == len(stream.results_) == 30
    for a, b in zip(batch.results_, stream.results_):
        assert [t.to_dict() for t in a.tracks] == [t.to_dict() for t in b.tracks]


def test_refit_starts_fresh(walker_frames):
    scene, frames = walker_frames
    est = DynamicObstacleTracker(scene.camera).fit(frames[:10])
    first = [[t.to_dict() for t in r.tracks] for r in est.results_]
    est.fit(frames[:10])
    assert [[t.to_dict() for t in r.tracks] for r in est.results_] == first


def test_time_must_increase(walker_frames):
    scene, frames = walker_frames
    est = DynamicObstacleTracker(scene.camera).partial_fit(frames[3])
    with pytest.raises(ValueError):
        est.partial_fit(frames[2])


def test_camera_required(walker_frames):
    with pytest.raises(ValueError):
        DynamicObstacleTracker().fit(walker_frames[1][:1])


def test_stage_timings(walker_frames):
    scene, frames = walker_frames
    est = DynamicObstacleTracker(scene.camera).fit(frames[:5])
    for r in est.results_:
        assert set(STAGES) | {"total"} <= set(r.timings)
        assert core_time(r.timings) == pytest.approx(sum(r.timings[s] for s in CORE_STAGES))
        assert core_time(r.timings) <= r.timings["total"]


def test_walker_becomes_dynamic_with_velocity(walker_frames):
    scene, frames = walker_frames
    est = DynamicObstacleTracker(scene.camera).fit(frames)
    moving = [t for t in est.results_[-1].tracks if t.class_state == "dynamic"]
    assert len(moving) == 1
    assert moving[0].velocity is not None and np.linalg.norm(moving[0].velocity) > 0.5


class TestConfig:
    def test_defaults(self):
        cfg = PipelineConfig()
        assert cfg.filtering.depth_limit == 5.0 and cfg.voting.delta == 0.4
        assert cfg.fusion.confidence_freq_threshold == 1.5 and cfg.mot.match_threshold == 0.4

    def test_round_trip(self, tmp_path):
        cfg = PipelineConfig.from_dict({"clustering": {"eps": 0.2}, "motion": {"reassociation_gate": 2.5}})
        p = tmp_path / "c.json"
        p.write_text(json.dumps(cfg.to_dict()))
        assert PipelineConfig.load(p) == cfg

    @pytest.mark.parametrize("data", [{"bogus": {}}, {"voting": {"delta": -1}}, {"grid": []}, {"filtering": {"x": 1}}])
    def test_rejected(self, data):
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict(data)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            PipelineConfig.load(tmp_path / "nope.json")
