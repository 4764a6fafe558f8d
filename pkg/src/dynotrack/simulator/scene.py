"""Scene description loaded from JSON."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from ..core import CameraModel, Pose

# Camera optical axes expressed in the robot body frame (x fwd, y left, z up).
_BODY_FROM_OPTICAL = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    center: tuple  # (x, y) of the footprint center
    size: tuple  # (sx, sy, sz)
    yaw: float = 0.0
    base: float = 0.0


@dataclass(frozen=True)
class Cylinder:
    center: tuple
    radius: float
    height: float
    base: float = 0.0


@dataclass(frozen=True)
class Actor:
    id: int
    path: tuple  # ((t, x, y), ...)
    height: float = 1.7
    radius: float = 0.25
    is_person: bool = False

    def position(self, t: float) -> np.ndarray:
        return _interp(self.path, t)


@dataclass(frozen=True)
class DetectorSpec:
    enabled: bool = False
    rate: float = 0.0  # Hz; 0 means every frame
    miss_rate: float = 0.0
    jitter_px: float = 0.0
    min_pixels: int = 20


@dataclass(frozen=True)
class SceneSpec:
    name: str
    camera: CameraModel
    mount: Pose
    robot_path: tuple  # ((t, x, y, yaw), ...)
    boxes: tuple = ()
    cylinders: tuple = ()
    actors: tuple = ()
    floor: bool = True
    noise_sigma: float = 0.02
    dropout: float = 0.0
    frame_rate: float = 10.0
    duration: float = 10.0
    seed: int = 0
    max_range: float = 20.0
    detector: DetectorSpec = field(default_factory=DetectorSpec)
    gt_depth_limit: float = 5.0
    gt_height_band: tuple = (0.15, 1.8)
    min_visible_points: int = 150

    @property
    def n_frames(self) -> int:
        return int(round(self.duration * self.frame_rate))

    def frame_time(self, k: int) -> float:
        return k / self.frame_rate

    def robot_pose(self, t: float) -> Pose:
        s = _interp(self.robot_path, t)
        return Pose.from_yaw(float(s[2]), (float(s[0]), float(s[1]), 0.0))

    def camera_pose(self, t: float) -> Pose:
        return self.robot_pose(t).compose(self.mount)


def _interp(path, t: float) -> np.ndarray:
    arr = np.asarray(path, dtype=float)
    times = arr[:, 0]
    return np.array([np.interp(t, times, arr[:, j]) for j in range(1, arr.shape[1])])


def _check_times(path, what: str) -> None:
    times = [p[0] for p in path]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise SceneError(f"{what}: waypoint times must be strictly increasing")


def mount_pose(translation, pitch_deg: float = 0.0) -> Pose:
    """Camera-to-body transform; positive pitch tilts the optical axis down."""
    p = np.radians(pitch_deg)
    pitch = np.array([[np.cos(p), 0.0, np.sin(p)], [0.0, 1.0, 0.0], [-np.sin(p), 0.0, np.cos(p)]])
    return Pose.from_matrix(pitch @ _BODY_FROM_OPTICAL, translation)


def scene_from_dict(d: dict) -> SceneSpec:
    known = {"name", "camera", "mount", "robot_path", "boxes", "cylinders", "actors", "floor", "noise_sigma",
             "dropout", "frame_rate", "duration", "seed", "max_range", "detector", "gt_depth_limit",
             "gt_height_band", "min_visible_points"}
    unknown = set(d) - known
    if unknown:
        raise SceneError(f"unknown scene keys: {sorted(unknown)}")
    try:
        cam = CameraModel(**d["camera"])
        m = d.get("mount", {})
        mount = mount_pose(m.get("translation", (0.0, 0.0, 0.8)), m.get("pitch_deg", 0.0))
        robot = tuple(tuple(float(v) for v in w) for w in d["robot_path"])
        if any(len(w) != 4 for w in robot):
            raise SceneError("robot_path entries are [t, x, y, yaw]")
        _check_times(robot, "robot_path")
        boxes = tuple(Box(tuple(b["center"]), tuple(b["size"]), float(b.get("yaw", 0.0)), float(b.get("base", 0.0)))
                      for b in d.get("boxes", []))
        cyls = tuple(Cylinder(tuple(c["center"]), float(c["radius"]), float(c["height"]), float(c.get("base", 0.0)))
                     for c in d.get("cylinders", []))
        actors = []
        for i, a in enumerate(d.get("actors", [])):
            path = tuple(tuple(float(v) for v in w) for w in a["path"])
            if any(len(w) != 3 for w in path):
                raise SceneError(f"actor {i}: path entries are [t, x, y]")
            _check_times(path, f"actor {i}")
            actors.append(Actor(int(a.get("id", i)), path, float(a.get("height", 1.7)),
                                float(a.get("radius", 0.25)), bool(a.get("is_person", False))))
        det = DetectorSpec(**d.get("detector", {}))
        spec = SceneSpec(
            name=str(d.get("name", "scene")), camera=cam, mount=mount, robot_path=robot, boxes=boxes,
            cylinders=cyls, actors=tuple(actors), floor=bool(d.get("floor", True)),
            noise_sigma=float(d.get("noise_sigma", 0.02)), dropout=float(d.get("dropout", 0.0)),
            frame_rate=float(d.get("frame_rate", 10.0)), duration=float(d.get("duration", 10.0)),
            seed=int(d.get("seed", 0)), max_range=float(d.get("max_range", 20.0)), detector=det,
            gt_depth_limit=float(d.get("gt_depth_limit", 5.0)),
            gt_height_band=tuple(d.get("gt_height_band", (0.15, 1.8))),
            min_visible_points=int(d.get("min_visible_points", 150)),
        )
    except SceneError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise SceneError(f"invalid scene: {exc!r}") from exc
    if spec.noise_sigma < 0:
        raise SceneError("noise_sigma must be non-negative")
    if not 0 <= spec.dropout < 1:
        raise SceneError("dropout must lie in [0, 1)")
    if not spec.frame_rate > 0 or not spec.duration > 0:
        raise SceneError("frame_rate and duration must be positive")
    if len({a.id for a in spec.actors}) != len(spec.actors):
        raise SceneError("actor ids must be unique")
    return spec


def load_scene(path_or_name) -> SceneSpec:
    """Load a scene file, or a shipped scene by name (e.g. ``"single-walker"``)."""
    p = Path(path_or_name)
    if not p.exists():
        name = p.name if p.suffix == ".json" else f"{p.name}.json"
        shipped = resources.files("dynotrack.simulator") / "scenes" / name
        if not shipped.is_file():
            raise SceneError(f"no such scene file or shipped scene: {path_or_name}")
        text = shipped.read_text()
    else:
        try:
            text = p.read_text()
        except OSError as exc:
            raise SceneError(f"cannot read {p}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneError(f"{path_or_name}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise SceneError(f"{path_or_name}: top level must be an object")
    return scene_from_dict(data)


def shipped_scenes() -> list[str]:
    root = resources.files("dynotrack.simulator") / "scenes"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))
