from __future__ import annotations

import functools
from dataclasses import dataclass

import pytest

from dynotrack import DynamicObstacleTracker
from dynotrack.simulator import load_scene, render_frame


@dataclass
class SceneRun:
    scene: object
    frames: list
    truths: list
    tracker: DynamicObstacleTracker


@functools.lru_cache(maxsize=None)
def run_scene(name: str, seed: int | None = None, use_detector: bool = True) -> SceneRun:
    """Render a shipped scene and run the tracker over it (cached per session)."""
    scene = load_scene(name)
    rendered = [render_frame(scene, k, seed) for k in range(scene.n_frames)]
    frames = [f for f, _ in rendered]
    truths = [g for _, g in rendered]
    tracker = DynamicObstacleTracker(scene.camera, use_detector=use_detector, keep_diagnostics=True)
    tracker.fit(frames)
    return SceneRun(scene, frames, truths, tracker)


@pytest.fixture(scope="session")
def scene_runner():
    return run_scene


# -- acceptance reporting ------------------------------------------------------

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _CRITERIA[marker] = report.outcome


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        rep.criterion = (int(mark.args[0]), str(mark.args[1]))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), outcome in sorted(_CRITERIA.items()):
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number:>2}: {verdict}  {title}")
