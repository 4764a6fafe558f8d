"""Vectorised ray intersection with the scene primitives.

Rays share one origin; directions need not be unit length, and the returned
parameter ``t`` is in units of the direction vector (the renderer scales
directions so that ``t`` equals camera depth).
"""

from __future__ import annotations

import numpy as np

from .scene import Box, SceneSpec

FLOOR_ID = 0
ACTOR_BASE = 10000
NO_HIT = -1
_T_MIN = 1e-9


def ray_box(origin, dirs, box: Box) -> np.ndarray:
    """Entry parameter of each ray into an oriented box, ``inf`` on miss."""
    c, s = np.cos(-box.yaw), np.sin(-box.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    center = np.array([box.center[0], box.center[1], box.base + 0.5 * box.size[2]])
    o = rot @ (np.asarray(origin, dtype=float) - center)
    d = np.asarray(dirs, dtype=float) @ rot.T
    half = 0.5 * np.asarray(box.size, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - o) / d
        t2 = (half - o) / d
    parallel = d == 0
    inside_slab = np.abs(o) <= half
    lo = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), np.minimum(t1, t2))
    hi = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), np.maximum(t1, t2))
    tnear = lo.max(axis=1)
    tfar = hi.min(axis=1)
    hit = (tnear <= tfar) & (tfar > _T_MIN)
    t = np.where(tnear > _T_MIN, tnear, tfar)
    return np.where(hit, t, np.inf)


def ray_cylinder(origin, dirs, cx, cy, radius, base, height) -> np.ndarray:
    """Entry parameter into a vertical capped cylinder, ``inf`` on miss."""
    o = np.asarray(origin, dtype=float)
    d = np.asarray(dirs, dtype=float)
    ox, oy = o[0] - cx, o[1] - cy
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    b = 2.0 * (d[:, 0] * ox + d[:, 1] * oy)
    c = ox * ox + oy * oy - radius * radius
    disc = b * b - 4 * a * c
    ok = (a > 0) & (disc >= 0)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    safe_a = np.where(a > 0, a, 1.0)
    t_side = np.full(len(d), np.inf)
    for root in ((-b - sq) / (2 * safe_a), (-b + sq) / (2 * safe_a)):
        z = o[2] + root * d[:, 2]
        good = ok & (root > _T_MIN) & (z >= base) & (z <= base + height) & ~np.isfinite(t_side)
        t_side = np.where(good, root, t_side)
    t_cap = np.full(len(d), np.inf)
    for plane in (base + height, base):
        with np.errstate(divide="ignore", invalid="ignore"):
            tc = (plane - o[2]) / d[:, 2]
            px = ox + tc * d[:, 0]
            py = oy + tc * d[:, 1]
        good = (d[:, 2] != 0) & (tc > _T_MIN) & (px * px + py * py <= radius * radius)
        t_cap = np.minimum(t_cap, np.where(good, tc, np.inf))
    return np.minimum(t_side, t_cap)


def ray_floor(origin, dirs) -> np.ndarray:
    d = np.asarray(dirs, dtype=float)
    oz = float(origin[2])
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -oz / d[:, 2]
    return np.where((d[:, 2] < 0) & (t > _T_MIN), t, np.inf)


def cast_rays(scene: SceneSpec, t: float, origin, dirs, include_actors: bool = True):
    """First hit of each ray at scene time ``t``: ``(param, object_id)``.

    Object ids: floor 0, static primitives 1.., actors ``ACTOR_BASE + actor.id``;
    ``NO_HIT`` where nothing is hit.
    """
    d = np.asarray(dirs, dtype=float).reshape(-1, 3)
    best = np.full(len(d), np.inf)
    obj = np.full(len(d), NO_HIT, dtype=np.int32)

    def take(tt, oid):
        nonlocal best, obj
        closer = tt < best
        best = np.where(closer, tt, best)
        obj = np.where(closer, oid, obj).astype(np.int32)

    if scene.floor:
        take(ray_floor(origin, d), FLOOR_ID)
    k = 1
    for b in scene.boxes:
        take(ray_box(origin, d, b), k)
        k += 1
    for c in scene.cylinders:
        take(ray_cylinder(origin, d, c.center[0], c.center[1], c.radius, c.base, c.height), k)
        k += 1
    if include_actors:
        for a in scene.actors:
            p = a.position(t)
            take(ray_cylinder(origin, d, p[0], p[1], a.radius, 0.0, a.height), ACTOR_BASE + a.id)
    return best, obj


def is_actor(obj_ids) -> np.ndarray:
    return np.asarray(obj_ids) >= ACTOR_BASE
