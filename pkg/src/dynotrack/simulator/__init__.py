"""Deterministic synthetic depth-camera scenes with ground truth."""

from .raycast import ACTOR_BASE, FLOOR_ID, NO_HIT, cast_rays, is_actor, ray_box, ray_cylinder
from .render import GroundTruth, generate_dataset, read_labels, render_frame, sample_static_surfaces
from .scene import SceneError, SceneSpec, load_scene, scene_from_dict, shipped_scenes

__all__ = [
    "ACTOR_BASE", "FLOOR_ID", "NO_HIT", "GroundTruth", "SceneError", "SceneSpec", "cast_rays",
    "generate_dataset", "is_actor", "load_scene", "ray_box", "ray_cylinder", "read_labels",
    "render_frame", "sample_static_surfaces", "scene_from_dict", "shipped_scenes",
]
