"""Dataset file formats.

Cloud files (``.dpc``) are little-endian: the 4-byte magic ``DPC1``, a u32
point count ``N``, then ``N`` records of ``(x, y, z)`` float32.

A dataset directory holds ``index.jsonl`` (one record per frame: timestamp,
pose ``{t, q}``, ``cloud_file`` and ``detections``), the cloud files under
``frames/``, and optionally ``gt.jsonl`` plus ``static_map.dpc`` written by the
simulator.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterator

import numpy as np

from .core import BBox2D, Frame, Pose

MAGIC = b"DPC1"
_HEADER = struct.Struct("<4sI")


class DatasetError(RuntimeError):
    pass


def encode_cloud(points) -> bytes:
    pts = np.ascontiguousarray(np.asarray(points, dtype="<f4").reshape(-1, 3))
    return _HEADER.pack(MAGIC, pts.shape[0]) + pts.tobytes()


def decode_cloud(data: bytes) -> np.ndarray:
    if len(data) < _HEADER.size:
        raise DatasetError("truncated cloud header")
    magic, n = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise DatasetError(f"bad magic {magic!r}")
    expected = _HEADER.size + 12 * n
    if len(data) != expected:
        raise DatasetError(f"cloud size mismatch: header says {n} points, got {len(data)} bytes")
    return np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(n, 3).astype(np.float32)


def write_cloud(path, points) -> None:
    path = Path(path)
    try:
        path.write_bytes(encode_cloud(points))
    except OSError as exc:
        raise DatasetError(f"cannot write {path}: {exc}") from exc


def read_cloud(path) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    try:
        return decode_cloud(data)
    except DatasetError as exc:
        raise DatasetError(f"{path}: {exc}") from exc


def dumps_line(record: dict) -> str:
    return json.dumps(record, separators=(",", ":"), sort_keys=False) + "\n"


def read_jsonl(path) -> list[dict]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    records = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from exc
    return records


def index_record(frame: Frame, cloud_file: str) -> dict:
    return {
        "timestamp": frame.timestamp,
        "pose": frame.pose.to_dict(),
        "cloud_file": cloud_file,
        "detections": [d.to_dict() for d in frame.detections],
    }


def iter_frames(dataset_dir) -> Iterator[Frame]:
    """Yield frames of a dataset in index order."""
    root = Path(dataset_dir)
    records = read_jsonl(root / "index.jsonl")
    last_t = -np.inf
    for i, rec in enumerate(records):
        try:
            t = float(rec["timestamp"])
            pose = Pose.from_dict(rec["pose"])
            dets = [BBox2D.from_dict(d) for d in rec.get("detections", [])]
            cloud_path = root / rec["cloud_file"]
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"frame {i}: malformed index record: {exc}") from exc
        if t <= last_t:
            raise DatasetError(f"frame {i}: timestamps must be strictly increasing")
        last_t = t
        if not cloud_path.exists():
            raise DatasetError(f"frame {i}: missing cloud file {cloud_path}")
        yield Frame(timestamp=t, pose=pose, dense_cloud=read_cloud(cloud_path), detections=dets, index=i)


def load_camera(dataset_dir):
    from .core import CameraModel

    meta = json.loads((Path(dataset_dir) / "camera.json").read_text())
    return CameraModel(**meta)
