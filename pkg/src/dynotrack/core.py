"""Geometric primitives shared by every stage of the pipeline.

Conventions
-----------
* World frame: x forward, y left, z up (meters).
* Camera optical frame: z along the optical axis, x right, y down.
* Quaternions are Hamilton, scalar first ``(w, x, y, z)``.
* A :class:`Pose` maps points from its child frame into its parent frame,
  i.e. a camera pose is camera-to-world.
* Pixel ``(u, v)`` covers ``[u, u + 1) x [v, v + 1)``; its center is at
  ``(u + 0.5, v + 0.5)``.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
from scipy.spatial import cKDTree

QUATERNION_TOLERANCE = 1e-9


def spatial_index(points) -> cKDTree:
    """k-d tree tuned for per-frame use: built once, queried a few times.

    The median-split build is skipped; it costs more than it saves at these
    cloud sizes. Query results are exact either way.
    """
    return cKDTree(np.asarray(points, dtype=float).reshape(-1, 3), balanced_tree=False, compact_nodes=False)


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = (float(c) for c in q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(m) -> np.ndarray:
    """Convert a rotation matrix to a unit quaternion with ``w >= 0``."""
    m = np.asarray(m, dtype=float)
    tr = np.trace(m)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q = np.asarray(q)
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


@dataclass(frozen=True)
class Pose:
    """Rigid transform ``p_parent = R @ p_child + t``."""

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=float).reshape(3)
        q = np.asarray(self.rotation, dtype=float).reshape(4)
        if not np.all(np.isfinite(t)) or not np.all(np.isfinite(q)):
            raise ValueError("pose must be finite")
        if abs(np.linalg.norm(q) - 1.0) > QUATERNION_TOLERANCE:
            raise ValueError(f"quaternion norm {np.linalg.norm(q)!r} is not 1")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "_matrix", quat_to_matrix(q))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, rotation, translation=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(np.asarray(translation, dtype=float), matrix_to_quat(rotation))

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> "Pose":
        half = 0.5 * yaw
        return cls(np.asarray(translation, dtype=float), np.array([np.cos(half), 0.0, 0.0, np.sin(half)]))

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    @property
    def yaw(self) -> float:
        m = self._matrix
        return float(np.arctan2(m[1, 0], m[0, 0]))

    def inverse(self) -> "Pose":
        r_inv = self._matrix.T
        q = self.rotation * np.array([1.0, -1.0, -1.0, -1.0])
        return Pose(-r_inv @ self.translation, q)

    def compose(self, other: "Pose") -> "Pose":
        """Return ``self * other`` (apply ``other`` first)."""
        w1, x1, y1, z1 = self.rotation
        w2, x2, y2, z2 = other.rotation
        q = np.array(
            [
                w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
                w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
                w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
                w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
            ]
        )
        q /= np.linalg.norm(q)
        return Pose(self._matrix @ other.translation + self.translation, q)

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        return pts @ self._matrix.T + self.translation

    def to_dict(self) -> dict:
        return {"t": [float(v) for v in self.translation], "q": [float(v) for v in self.rotation]}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(np.asarray(d["t"], dtype=float), np.asarray(d["q"], dtype=float))


def transform_cloud(cloud, pose: Pose) -> np.ndarray:
    """Rotate then translate every point of ``cloud`` by ``pose``."""
    return pose.apply(cloud)


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def project(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised projection of camera-frame points.

        Returns ``(uv, valid)``; ``uv`` is meaningless where ``valid`` is False.
        """
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        z = pts[:, 2]
        front = z > 0
        safe_z = np.where(front, z, 1.0)
        u = self.fx * pts[:, 0] / safe_z + self.cx
        v = self.fy * pts[:, 1] / safe_z + self.cy
        valid = front & (u >= 0) & (u < self.width) & (v >= 0) & (v < self.height)
        return np.column_stack([u, v]), valid

    def pixel_rays(self) -> np.ndarray:
        """Camera-frame ray directions through every pixel center, scaled to z = 1.

        Row-major order: index ``v * width + u``.
        """
        u = np.arange(self.width) + 0.5
        v = np.arange(self.height) + 0.5
        uu, vv = np.meshgrid(u, v)
        x = (uu.ravel() - self.cx) / self.fx
        y = (vv.ravel() - self.cy) / self.fy
        return np.column_stack([x, y, np.ones_like(x)])

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("fx", "fy", "cx", "cy", "width", "height")}


def project_to_image(point, cam: CameraModel) -> Optional[tuple[float, float]]:
    """Project one camera-frame point; ``None`` means out of view."""
    uv, valid = cam.project(point)
    if not valid[0]:
        return None
    return float(uv[0, 0]), float(uv[0, 1])


@dataclass(frozen=True)
class BBox2D:
    """Axis-aligned image box, ``(x, y)`` is the top-left corner in pixels."""

    x: float
    y: float
    w: float
    h: float
    confidence: float = 1.0

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError("box width and height must be positive")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return self.x + 0.5 * self.w, self.y + 0.5 * self.h

    def contains(self, uv) -> np.ndarray:
        uv = np.asarray(uv, dtype=float).reshape(-1, 2)
        return (
            (uv[:, 0] >= self.x)
            & (uv[:, 0] < self.x + self.w)
            & (uv[:, 1] >= self.y)
            & (uv[:, 1] < self.y + self.h)
        )

    def clamp(self, cam: CameraModel) -> Optional["BBox2D"]:
        x0 = min(max(self.x, 0.0), cam.width)
        y0 = min(max(self.y, 0.0), cam.height)
        x1 = min(max(self.x + self.w, 0.0), cam.width)
        y1 = min(max(self.y + self.h, 0.0), cam.height)
        if x1 - x0 <= 0 or y1 - y0 <= 0:
            return None
        return BBox2D(x0, y0, x1 - x0, y1 - y0, self.confidence)

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h, "confidence": self.confidence}

    @classmethod
    def from_dict(cls, d: dict) -> "BBox2D":
        return cls(float(d["x"]), float(d["y"]), float(d["w"]), float(d["h"]), float(d.get("confidence", 1.0)))


@dataclass
class Frame:
    """One sensor frame.

    ``dense_cloud`` holds camera-frame points, ``filtered_cloud`` world-frame
    points (filled in by the pipeline).
    """

    timestamp: float
    pose: Pose
    dense_cloud: np.ndarray
    detections: list = field(default_factory=list)
    filtered_cloud: Optional[np.ndarray] = None
    index: int = 0

    def __post_init__(self):
        self.dense_cloud = np.asarray(self.dense_cloud, dtype=np.float32).reshape(-1, 3)
        if self.filtered_cloud is not None:
            self.filtered_cloud = np.asarray(self.filtered_cloud).reshape(-1, 3)


class FrameBuffer:
    """Time-ordered ring buffer of recent per-frame records.

    Keeps every entry newer than ``horizon`` seconds relative to the latest
    push, capped at ``capacity`` entries.
    """

    def __init__(self, horizon: float, capacity: int = 64):
        if horizon <= 0 or capacity < 1:
            raise ValueError("horizon and capacity must be positive")
        self.horizon = horizon
        self.capacity = capacity
        self._times: list[float] = []
        self._items: list[Any] = []

    def __len__(self) -> int:
        return len(self._times)

    def push(self, timestamp: float, item: Any) -> None:
        if self._times and timestamp <= self._times[-1]:
            raise ValueError("timestamps must be strictly increasing")
        self._times.append(timestamp)
        self._items.append(item)
        cutoff = timestamp - self.horizon
        drop = bisect.bisect_left(self._times, cutoff)
        drop = max(drop, len(self._times) - self.capacity)
        if drop > 0:
            del self._times[:drop]
            del self._items[:drop]

    def lookup(self, t: float) -> Optional[tuple[float, Any]]:
        """Return ``(timestamp, item)`` of the entry closest to ``t``."""
        if not self._times:
            return None
        i = bisect.bisect_left(self._times, t)
        candidates = [j for j in (i - 1, i) if 0 <= j < len(self._times)]
        best = min(candidates, key=lambda j: (abs(self._times[j] - t), j))
        return self._times[best], self._items[best]

    def timestamps(self) -> list[float]:
        return list(self._times)
