"""Dense-to-sparse cloud filtering: crop, voxel grid, radius outlier removal."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from .core import Pose, spatial_index


@dataclass(frozen=True)
class FilterParams:
    depth_limit: float = 5.0
    ground_height: float = 0.15
    ceiling_height: float = 1.8
    voxel_leaf: float = 0.05
    min_neighbors: int = 30
    neighbor_radius: float = 0.5

    def __post_init__(self):
        for name in ("depth_limit", "ground_height", "ceiling_height", "voxel_leaf", "min_neighbors", "neighbor_radius"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if not self.ground_height < self.ceiling_height:
            raise ValueError("ground_height must be below ceiling_height")


def _as_cloud(cloud) -> np.ndarray:
    return np.asarray(cloud, dtype=float).reshape(-1, 3)


def crop_mask(cloud, params: FilterParams, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Return the survivor mask and the world-frame coordinates of every input point."""
    pts = _as_cloud(cloud)
    world = pose.apply(pts)
    h = world[:, 2]
    keep = (pts[:, 2] <= params.depth_limit) & (h >= params.ground_height) & (h <= params.ceiling_height)
    return keep, world


def crop_cloud(cloud, params: FilterParams, pose: Pose) -> np.ndarray:
    """Drop points beyond the depth limit or outside the height band.

    ``cloud`` is in the camera frame and so is the result; heights are
    evaluated in the world frame via ``pose``.
    """
    keep, _ = crop_mask(cloud, params, pose)
    return _as_cloud(cloud)[keep]


def voxel_keys(cloud, leaf: float) -> np.ndarray:
    """Integer voxel index ``floor(p / leaf)`` per axis."""
    return np.floor(_as_cloud(cloud) / leaf).astype(np.int64)


def voxel_downsample(cloud, leaf: float) -> np.ndarray:
    """Replace the points of each occupied voxel by their centroid.

    Output is sorted lexicographically by voxel index.
    """
    if not leaf > 0:
        raise ValueError("leaf must be positive")
    pts = _as_cloud(cloud)
    if len(pts) == 0:
        return pts.copy()
    idx = voxel_keys(pts, leaf)
    lo = idx.min(axis=0)
    span = idx.max(axis=0) - lo + 1
    rel = idx - lo
    key = (rel[:, 0] * span[1] + rel[:, 1]) * span[2] + rel[:, 2]
    _, inverse, counts = np.unique(key, return_inverse=True, return_counts=True)
    out = np.empty((len(counts), 3))
    for axis in range(3):
        out[:, axis] = np.bincount(inverse, weights=pts[:, axis], minlength=len(counts)) / counts
    return out


# Offsets (in cells of side r/4) of cells lying entirely within r of every
# point of the central cell: sum((|o_i| + 1)^2) <= 16.
_SURE_OFFSETS = np.array([o for o in np.ndindex(5, 5, 5)
                          if sum((abs(v - 2) + 1) ** 2 for v in o) <= 16], dtype=np.int64) - 2


def _certain_neighbor_counts(pts: np.ndarray, radius: float) -> np.ndarray:
    """Lower bound on the number of points within ``radius`` of each point, self included.

    Points are binned into cubes of side slightly under ``radius / 4``; every
    point of a cube in ``_SURE_OFFSETS`` around a point's cube is within
    ``radius`` of it, so summing those cube populations never overcounts.
    """
    side = 0.25 * radius * (1.0 - 1e-9)
    cell = np.floor(pts / side).astype(np.int64)
    lo = cell.min(axis=0) - 2
    span = cell.max(axis=0) - lo + 3
    rel = cell - lo
    key = (rel[:, 0] * span[1] + rel[:, 1]) * span[2] + rel[:, 2]
    ukey, inverse, counts = np.unique(key, return_inverse=True, return_counts=True)
    # Cell coordinates of each occupied cell.
    first = np.zeros(len(ukey), dtype=np.int64)
    first[inverse] = np.arange(len(pts))
    ucell = rel[first]
    total = np.zeros(len(ukey), dtype=np.int64)
    for off in _SURE_OFFSETS:
        nb = ucell + off
        nkey = (nb[:, 0] * span[1] + nb[:, 1]) * span[2] + nb[:, 2]
        pos = np.minimum(np.searchsorted(ukey, nkey), len(ukey) - 1)
        total += np.where(ukey[pos] == nkey, counts[pos], 0)
    return total[inverse]


def neighbor_counts_at_least(cloud, radius: float, k: int, workers: int = 1) -> np.ndarray:
    """Boolean mask: point has at least ``k`` other points within ``radius`` (inclusive)."""
    pts = _as_cloud(cloud)
    if len(pts) == 0:
        return np.zeros(0, dtype=bool)
    if k <= 0:
        return np.ones(len(pts), dtype=bool)
    if len(pts) <= k:
        return np.zeros(len(pts), dtype=bool)
    out = _certain_neighbor_counts(pts, radius) >= k + 1
    todo = np.flatnonzero(~out)
    if len(todo):
        tree = spatial_index(pts)
        # The (k+1)-th nearest neighbour includes the point itself; the bound is inclusive.
        dist, _ = tree.query(pts[todo], k=[k + 1], distance_upper_bound=np.nextafter(radius, np.inf),
                             workers=workers)
        out[todo] = np.isfinite(dist[:, 0])
    return out


def radius_outlier_removal(cloud, min_neighbors: int, radius: float, workers: int = 1) -> np.ndarray:
    """Keep points with at least ``min_neighbors`` other points within ``radius``."""
    pts = _as_cloud(cloud)
    return pts[neighbor_counts_at_least(pts, radius, int(min_neighbors), workers)]


def filter_cloud(dense_world, params: FilterParams, workers: int = 1) -> np.ndarray:
    """Voxel grid followed by radius outlier removal on an already cropped cloud."""
    voxels = voxel_downsample(dense_world, params.voxel_leaf)
    return radius_outlier_removal(voxels, params.min_neighbors, params.neighbor_radius, workers)


class VoxelGridFilter(TransformerMixin, BaseEstimator):
    """Stateless transformer wrapping :func:`voxel_downsample`."""

    def __init__(self, leaf_size=0.05):
        self.leaf_size = leaf_size

    def fit(self, X, y=None):
        check_array(X, ensure_min_samples=0)
        return self

    def transform(self, X):
        X = check_array(X, ensure_min_samples=0)
        return voxel_downsample(X, self.leaf_size)


class RadiusOutlierFilter(TransformerMixin, BaseEstimator):
    """Stateless transformer wrapping :func:`radius_outlier_removal`."""

    def __init__(self, min_neighbors=30, radius=0.5, n_jobs=1):
        self.min_neighbors = min_neighbors
        self.radius = radius
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        check_array(X, ensure_min_samples=0)
        return self

    def transform(self, X):
        X = check_array(X, ensure_min_samples=0)
        return radius_outlier_removal(X, self.min_neighbors, self.radius, self.n_jobs)


class CloudFilter(TransformerMixin, BaseEstimator):
    """Full crop, voxel and outlier chain producing the sparse world-frame cloud.

    ``transform`` takes a camera-frame cloud and the camera-to-world pose.
    """

    def __init__(self, depth_limit=5.0, ground_height=0.15, ceiling_height=1.8,
                 voxel_leaf=0.05, min_neighbors=30, neighbor_radius=0.5, n_jobs=1):
        self.depth_limit = depth_limit
        self.ground_height = ground_height
        self.ceiling_height = ceiling_height
        self.voxel_leaf = voxel_leaf
        self.min_neighbors = min_neighbors
        self.neighbor_radius = neighbor_radius
        self.n_jobs = n_jobs

    def _params(self) -> FilterParams:
        return FilterParams(self.depth_limit, self.ground_height, self.ceiling_height,
                            self.voxel_leaf, self.min_neighbors, self.neighbor_radius)

    def fit(self, X, y=None):
        self.params_ = self._params()
        return self

    def transform(self, X, pose: Pose | None = None):
        X = check_array(X, ensure_min_samples=0)
        params = self._params()
        keep, world = crop_mask(X, params, pose or Pose.identity())
        return filter_cloud(world[keep], params, self.n_jobs)
