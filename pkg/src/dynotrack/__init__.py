"""Dynamic obstacle detection, classification and tracking on depth-camera point clouds."""

from .config import ConfigError, PipelineConfig
from .core import BBox2D, CameraModel, Frame, FrameBuffer, Pose
from .pipeline import DynamicObstacleTracker, FrameResult, TrackState, run_dataset

__version__ = "0.1.0"

__all__ = [
    "BBox2D", "CameraModel", "ConfigError", "DynamicObstacleTracker", "Frame", "FrameBuffer", "FrameResult",
    "PipelineConfig", "Pose", "TrackState", "run_dataset",
]
