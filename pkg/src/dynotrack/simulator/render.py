"""Depth-camera rendering, ground truth and dataset generation."""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np

from ..core import BBox2D, CameraModel, Frame
from ..io import DatasetError, dumps_line, encode_cloud, index_record
from .raycast import ACTOR_BASE, cast_rays
from .scene import SceneSpec


@dataclass
class ActorTruth:
    id: int
    is_person: bool
    center: np.ndarray  # world (x, y)
    visible_points: int
    centroid: Optional[np.ndarray]  # world (x, y, z) of visible surface, None if unseen
    box: Optional[BBox2D]

    @property
    def visible(self) -> bool:
        return self.centroid is not None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "is_person": self.is_person,
            "center": [float(v) for v in self.center],
            "visible": self.visible,
            "visible_points": self.visible_points,
            "centroid": None if self.centroid is None else [float(v) for v in self.centroid],
            "box": None if self.box is None else self.box.to_dict(),
        }


@dataclass
class GroundTruth:
    frame: int
    timestamp: float
    actors: list
    labels: np.ndarray = field(repr=False)  # per emitted point: object id

    def to_dict(self) -> dict:
        return {"frame": self.frame, "timestamp": self.timestamp, "actors": [a.to_dict() for a in self.actors]}


@lru_cache(maxsize=8)
def _pixel_rays(cam: CameraModel) -> np.ndarray:
    return cam.pixel_rays()


def _detector_fires(scene: SceneSpec, k: int) -> bool:
    rate = scene.detector.rate
    if rate <= 0 or k == 0:
        return True
    now = np.floor(scene.frame_time(k) * rate + 1e-9)
    before = np.floor(scene.frame_time(k - 1) * rate + 1e-9)
    return bool(now > before)


def render_frame(scene: SceneSpec, k: int, seed: Optional[int] = None) -> tuple[Frame, GroundTruth]:
    """Render frame ``k`` of ``scene``; identical output for identical ``(seed, k)``."""
    seed = scene.seed if seed is None else seed
    t = scene.frame_time(k)
    cam = scene.camera
    pose = scene.camera_pose(t)
    rays = _pixel_rays(cam)
    dirs = rays @ pose.matrix.T
    depth, obj = cast_rays(scene, t, pose.translation, dirs)
    hit = np.isfinite(depth) & (depth <= scene.max_range)

    rng = np.random.default_rng([seed, k])
    noise = rng.normal(0.0, scene.noise_sigma, len(depth)) if scene.noise_sigma > 0 else np.zeros(len(depth))
    dropped = rng.random(len(depth)) < scene.dropout
    noisy = depth + noise
    keep = hit & ~dropped & (noisy > 0)
    points = (rays[keep] * noisy[keep, None]).astype(np.float32)
    labels = obj[keep].astype(np.int32)

    world = pose.translation + dirs * np.where(hit, depth, 0.0)[:, None]
    lo, hi = scene.gt_height_band
    trusted = hit & (depth <= scene.gt_depth_limit) & (world[:, 2] >= lo) & (world[:, 2] <= hi)
    fires = scene.detector.enabled and _detector_fires(scene, k)
    actors, detections = [], []
    for a in scene.actors:
        on_actor = hit & (obj == ACTOR_BASE + a.id)
        seen = on_actor & trusted
        n_seen = int(seen.sum())
        centroid = world[seen].mean(axis=0) if n_seen >= scene.min_visible_points else None
        box = None
        pix = np.flatnonzero(on_actor)
        if len(pix):
            u, v = pix % cam.width, pix // cam.width
            box = BBox2D(float(u.min()), float(v.min()), float(u.max() - u.min() + 1), float(v.max() - v.min() + 1))
        actors.append(ActorTruth(a.id, a.is_person, a.position(t)[:2], n_seen, centroid, box))
        if fires and a.is_person:
            # Draw unconditionally so the stream does not depend on visibility.
            miss = rng.random() < scene.detector.miss_rate
            jitter = rng.normal(0.0, scene.detector.jitter_px, 4) if scene.detector.jitter_px > 0 else np.zeros(4)
            if box is not None and len(pix) >= scene.detector.min_pixels and not miss:
                det = BBox2D(box.x + jitter[0], box.y + jitter[1], max(box.w + jitter[2], 1.0),
                             max(box.h + jitter[3], 1.0), 1.0).clamp(cam)
                if det is not None:
                    detections.append(det)
    frame = Frame(timestamp=t, pose=pose, dense_cloud=points, detections=detections, index=k)
    return frame, GroundTruth(k, t, actors, labels)


def sample_static_surfaces(scene: SceneSpec, spacing: float = 0.05) -> np.ndarray:
    """Points on every static primitive surface (sides and tops, no floor)."""
    out = []
    for b in scene.boxes:
        sx, sy, sz = b.size
        zs = b.base + np.arange(0.0, sz + 1e-9, spacing)
        xs = np.arange(-sx / 2, sx / 2 + 1e-9, spacing)
        ys = np.arange(-sy / 2, sy / 2 + 1e-9, spacing)
        local = []
        for x0 in (-sx / 2, sx / 2):
            yy, zz = np.meshgrid(ys, zs)
            local.append(np.column_stack([np.full(yy.size, x0), yy.ravel(), zz.ravel()]))
        for y0 in (-sy / 2, sy / 2):
            xx, zz = np.meshgrid(xs, zs)
            local.append(np.column_stack([xx.ravel(), np.full(xx.size, y0), zz.ravel()]))
        xx, yy = np.meshgrid(xs, ys)
        local.append(np.column_stack([xx.ravel(), yy.ravel(), np.full(xx.size, b.base + sz)]))
        pts = np.vstack(local)
        c, s = np.cos(b.yaw), np.sin(b.yaw)
        rot = np.array([[c, -s], [s, c]])
        pts[:, :2] = pts[:, :2] @ rot.T + np.asarray(b.center)
        out.append(pts)
    for cyl in scene.cylinders:
        n_ang = max(int(np.ceil(2 * np.pi * cyl.radius / spacing)), 8)
        ang = np.arange(n_ang) * 2 * np.pi / n_ang
        zs = cyl.base + np.arange(0.0, cyl.height + 1e-9, spacing)
        aa, zz = np.meshgrid(ang, zs)
        side = np.column_stack([cyl.center[0] + cyl.radius * np.cos(aa.ravel()),
                                cyl.center[1] + cyl.radius * np.sin(aa.ravel()), zz.ravel()])
        g = np.arange(-cyl.radius, cyl.radius + 1e-9, spacing)
        gx, gy = np.meshgrid(g, g)
        disk = gx ** 2 + gy ** 2 <= cyl.radius ** 2
        top = np.column_stack([cyl.center[0] + gx[disk], cyl.center[1] + gy[disk],
                               np.full(disk.sum(), cyl.base + cyl.height)])
        out.extend([side, top])
    return np.vstack(out) if out else np.zeros((0, 3))


def generate_dataset(scene: SceneSpec, out_dir, seed: Optional[int] = None, scene_source=None) -> Path:
    """Write every frame, the index, ground truth and the static surface map."""
    root = Path(out_dir)
    try:
        (root / "frames").mkdir(parents=True, exist_ok=True)
        index_lines, gt_lines = [], []
        for k in range(scene.n_frames):
            frame, gt = render_frame(scene, k, seed)
            name = f"frames/{k:06d}.dpc"
            (root / name).write_bytes(encode_cloud(frame.dense_cloud))
            (root / f"frames/{k:06d}.lbl").write_bytes(gt.labels.astype("<i4").tobytes())
            index_lines.append(dumps_line(index_record(frame, name)))
            gt_lines.append(dumps_line(gt.to_dict()))
        (root / "index.jsonl").write_text("".join(index_lines))
        (root / "gt.jsonl").write_text("".join(gt_lines))
        (root / "camera.json").write_text(json.dumps(scene.camera.to_dict(), indent=2) + "\n")
        (root / "static_map.dpc").write_bytes(encode_cloud(sample_static_surfaces(scene)))
        if scene_source is not None and Path(scene_source).is_file():
            shutil.copyfile(scene_source, root / "scene.json")
    except OSError as exc:
        raise DatasetError(f"cannot write dataset under {root}: {exc}") from exc
    return root


def read_labels(path) -> np.ndarray:
    return np.frombuffer(Path(path).read_bytes(), dtype="<i4").astype(np.int32)
