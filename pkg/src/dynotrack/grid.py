"""Layered 2D cost maps: static, dynamic and uncertain.

Layers are ``(height, width)`` float32 arrays indexed ``[iy, ix]`` with
``ix = floor((x - origin_x) / resolution)``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import distance_transform_edt

log = logging.getLogger(__name__)

STATIC_LAYER_CLASSES = ("static",)
DYNAMIC_LAYER_CLASSES = ("dynamic", "person")
UNCERTAIN_LAYER_CLASSES = ("uncertain", "unknown")


@dataclass(frozen=True)
class GridSpec:
    resolution: float = 0.05
    width: int = 400
    height: int = 400
    origin: tuple = (-10.0, -10.0)

    def __post_init__(self):
        if not self.resolution > 0 or self.width < 1 or self.height < 1:
            raise ValueError("resolution and size must be positive")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    def cells(self, xy) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        ix = np.floor((xy[:, 0] - self.origin[0]) / self.resolution).astype(np.int64)
        iy = np.floor((xy[:, 1] - self.origin[1]) / self.resolution).astype(np.int64)
        inside = (ix >= 0) & (ix < self.width) & (iy >= 0) & (iy < self.height)
        return ix, iy, inside

    def centered_on(self, xy) -> "GridSpec":
        """Same grid re-anchored so ``xy`` sits at the center, snapped to whole cells."""
        r = self.resolution
        ox = np.floor((xy[0] - 0.5 * self.width * r) / r) * r
        oy = np.floor((xy[1] - 0.5 * self.height * r) / r) * r
        return replace(self, origin=(round(ox, 9), round(oy, 9)))


@dataclass(frozen=True)
class GridParams:
    resolution: float = 0.05
    size: float = 20.0
    decay: float = 0.8
    uncertain_lifetime: float = 1.0
    prediction_horizon: float = 1.0
    sweep_floor: float = 0.3
    static_inflation: float = 0.3
    dynamic_inflation: float = 0.6

    def __post_init__(self):
        if not self.resolution > 0 or not self.size > 0:
            raise ValueError("resolution and size must be positive")
        if not 0 <= self.decay < 1:
            raise ValueError("decay must lie in [0, 1)")
        if not 0 <= self.sweep_floor <= 1:
            raise ValueError("sweep_floor must lie in [0, 1]")
        if self.uncertain_lifetime < 0 or self.prediction_horizon < 0:
            raise ValueError("lifetimes must be non-negative")
        if not 0 <= self.static_inflation < self.dynamic_inflation:
            raise ValueError("dynamic inflation must exceed static inflation")

    def spec(self) -> GridSpec:
        n = int(round(self.size / self.resolution))
        return GridSpec(self.resolution, n, n, (-0.5 * self.size, -0.5 * self.size))


def _line_cells(x0: np.ndarray, y0: np.ndarray, x1: np.ndarray, y1: np.ndarray):
    """Cells of integer DDA lines from ``(x0, y0)`` up to but excluding ``(x1, y1)``.

    Returns ``(ray, k, n, x, y)`` flattened over all rays, ``k`` being the
    step index and ``n`` the ray's step count.
    """
    dx, dy = x1 - x0, y1 - y0
    n = np.maximum(np.abs(dx), np.abs(dy))
    ray = np.repeat(np.arange(len(n)), n)
    starts = np.cumsum(n) - n
    k = np.arange(int(n.sum())) - np.repeat(starts, n)
    frac = k / np.repeat(np.maximum(n, 1), n)
    x = x0[ray] + np.round(frac * dx[ray]).astype(np.int64)
    y = y0[ray] + np.round(frac * dy[ray]).astype(np.int64)
    return ray, k, n, x, y


def raytrace_clear(static_layer: np.ndarray, spec: GridSpec, sensor_origin, endpoints, decay: float = 0.8) -> np.ndarray:
    """Decay static costs on cells crossed by sensor rays.

    Each cell strictly between the sensor cell and a ray's endpoint cell is
    multiplied by ``decay`` once per call; cells holding any endpoint are
    left untouched.
    """
    pts = np.asarray(endpoints, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return static_layer
    ex, ey, _ = spec.cells(pts)
    sx, sy, _ = spec.cells(np.asarray(sensor_origin, dtype=float)[:2])
    off = 1 << 20
    ends = np.unique((ex + off) * (2 * off) + (ey + off))
    ex, ey = ends // (2 * off) - off, ends % (2 * off) - off
    _, _, _, x, y = _line_cells(np.full(len(ex), sx[0]), np.full(len(ey), sy[0]), ex, ey)
    inside = (x >= 0) & (x < spec.width) & (y >= 0) & (y < spec.height)
    crossed = np.zeros(static_layer.size, dtype=bool)
    crossed[y[inside] * spec.width + x[inside]] = True
    e_in = (ex >= 0) & (ex < spec.width) & (ey >= 0) & (ey < spec.height)
    crossed[ey[e_in] * spec.width + ex[e_in]] = False
    view = static_layer.reshape(-1)
    view[crossed] *= decay
    return static_layer


def stamp(layer: np.ndarray, spec: GridSpec, xy, cost: float = 1.0) -> int:
    """Raise cells under ``xy`` to at least ``cost``; returns the number of dropped points."""
    ix, iy, inside = spec.cells(xy)
    if not inside.all():
        log.debug("dropped %d points outside the grid", int((~inside).sum()))
    np.maximum.at(layer, (iy[inside], ix[inside]), cost)
    return int((~inside).sum())


def expand_dynamic_costs(dynamic_layer: np.ndarray, spec: GridSpec, tracks, horizon: float,
                         floor: float = 0.3) -> np.ndarray:
    """Stamp each object's predicted sweep ``p -> p + v * horizon``.

    ``tracks`` yields ``(position_xy, velocity_xy)``. Cost falls linearly from
    1 at the current position to ``floor`` at the sweep end.
    """
    for pos, vel in tracks:
        pos = np.asarray(pos, dtype=float)[:2]
        end = pos + np.asarray(vel, dtype=float)[:2] * horizon
        (x0,), (y0,), _ = spec.cells(pos)
        (x1,), (y1,), _ = spec.cells(end)
        _, k, n, x, y = _line_cells(np.array([x0]), np.array([y0]), np.array([x1]), np.array([y1]))
        x = np.append(x, x1)
        y = np.append(y, y1)
        steps = max(int(n[0]), 1)
        k = np.append(k, n[0])
        cost = 1.0 - (1.0 - floor) * (k / steps)
        inside = (x >= 0) & (x < spec.width) & (y >= 0) & (y < spec.height)
        np.maximum.at(dynamic_layer, (y[inside], x[inside]), cost[inside].astype(dynamic_layer.dtype))
    return dynamic_layer


def inflate(layer: np.ndarray, radius: float, resolution: float) -> np.ndarray:
    """Spread each nonzero cell's cost to cells within ``radius`` meters (nearest source wins)."""
    if radius <= 0 or not layer.any():
        return layer.copy()
    pad = int(np.ceil(radius / resolution)) + 1
    rows = np.flatnonzero(layer.any(axis=1))
    cols = np.flatnonzero(layer.any(axis=0))
    r0, r1 = max(rows[0] - pad, 0), min(rows[-1] + pad + 1, layer.shape[0])
    c0, c1 = max(cols[0] - pad, 0), min(cols[-1] + pad + 1, layer.shape[1])
    sub = layer[r0:r1, c0:c1]
    dist, (ii, jj) = distance_transform_edt(sub == 0, return_indices=True)
    # Compare in cell units with a small slack so a radius of k whole cells is inclusive.
    spread = np.where(dist <= radius / resolution + 1e-9, sub[ii, jj], 0.0)
    out = layer.copy()
    out[r0:r1, c0:c1] = np.maximum(sub, spread)
    return out


class LayeredGrid:
    """Static, dynamic and uncertain layers over one scrolling grid."""

    def __init__(self, spec: GridSpec):
        self.spec = spec
        shape = (spec.height, spec.width)
        self.static = np.zeros(shape, dtype=np.float32)
        self.dynamic = np.zeros(shape, dtype=np.float32)
        self.uncertain = np.zeros(shape, dtype=np.float32)
        self.uncertain_stamp = np.full(shape, -np.inf)

    def recenter(self, xy) -> None:
        """Scroll so ``xy`` is central; cells shifted off the grid are forgotten."""
        new = self.spec.centered_on(xy)
        r = self.spec.resolution
        sx = int(round((new.origin[0] - self.spec.origin[0]) / r))
        sy = int(round((new.origin[1] - self.spec.origin[1]) / r))
        if sx == 0 and sy == 0:
            return
        for name, fill in (("static", 0.0), ("dynamic", 0.0), ("uncertain", 0.0), ("uncertain_stamp", -np.inf)):
            setattr(self, name, _shift(getattr(self, name), sx, sy, fill))
        self.spec = new

    def expire_uncertain(self, now: float, lifetime: float) -> None:
        old = now - self.uncertain_stamp > lifetime
        self.uncertain[old] = 0.0

    def layers(self) -> dict:
        return {"static": self.static, "dynamic": self.dynamic, "uncertain": self.uncertain}


def _shift(a: np.ndarray, sx: int, sy: int, fill) -> np.ndarray:
    out = np.full_like(a, fill)
    h, w = a.shape
    if abs(sx) >= w or abs(sy) >= h:
        return out
    src_y = slice(max(sy, 0), h + min(sy, 0))
    dst_y = slice(max(-sy, 0), h + min(-sy, 0))
    src_x = slice(max(sx, 0), w + min(sx, 0))
    dst_x = slice(max(-sx, 0), w + min(-sx, 0))
    out[dst_y, dst_x] = a[src_y, src_x]
    return out


def update_layers(grid: LayeredGrid, objects, now: float, params: GridParams) -> LayeredGrid:
    """Write object footprints into the layer matching their class.

    ``objects`` yields ``(class_state, points_world)``. The dynamic layer is a
    per-frame snapshot and is cleared first; the uncertain layer keeps its
    costs for ``params.uncertain_lifetime`` seconds.
    """
    grid.dynamic[:] = 0.0
    grid.expire_uncertain(now, params.uncertain_lifetime)
    for cls, pts in objects:
        xy = np.asarray(pts, dtype=float).reshape(-1, 3)[:, :2]
        if cls in STATIC_LAYER_CLASSES:
            stamp(grid.static, grid.spec, xy)
        elif cls in DYNAMIC_LAYER_CLASSES:
            stamp(grid.dynamic, grid.spec, xy)
        elif cls in UNCERTAIN_LAYER_CLASSES:
            stamp(grid.uncertain, grid.spec, xy)
            ix, iy, inside = grid.spec.cells(xy)
            grid.uncertain_stamp[iy[inside], ix[inside]] = now
        else:
            raise ValueError(f"unknown class {cls!r}")
    return grid


def aggregate(static_layer, dynamic_layer, uncertain_layer, specs=None, resolution: float = 0.05,
              static_inflation: float = 0.0, dynamic_inflation: float = 0.0) -> np.ndarray:
    """Cell-wise maximum of the three layers after inflating each.

    ``specs`` (three :class:`GridSpec`) are compared when given; any mismatch
    raises ``ValueError``. With zero inflation this is the plain maximum.
    """
    if specs is not None and len(set(specs)) != 1:
        raise ValueError("layers do not share one grid spec")
    if not (static_layer.shape == dynamic_layer.shape == uncertain_layer.shape):
        raise ValueError("layer shapes differ")
    s = inflate(static_layer, static_inflation, resolution)
    u = inflate(uncertain_layer, static_inflation, resolution)
    d = inflate(dynamic_layer, dynamic_inflation, resolution)
    return np.maximum(np.maximum(s, u), d)


def write_pgm(path, layer: np.ndarray) -> None:
    """Binary PGM (P5, maxval 255), row ``iy = 0`` first."""
    data = np.clip(np.round(np.asarray(layer) * 255.0), 0, 255).astype(np.uint8)
    h, w = data.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + data.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    maxval = int(parts[2])
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w).astype(np.float32) / maxval


def export_grid(out_dir, stem: str, grid: LayeredGrid, aggregate_layer: np.ndarray, timestamp: float) -> None:
    out_dir = Path(out_dir)
    for name, layer in {**grid.layers(), "aggregate": aggregate_layer}.items():
        write_pgm(out_dir / f"{stem}_{name}.pgm", layer)
    meta = {"resolution": grid.spec.resolution, "origin": list(grid.spec.origin),
            "width": grid.spec.width, "height": grid.spec.height, "timestamp": timestamp}
    (out_dir / f"{stem}.json").write_text(json.dumps(meta, indent=2))
