"""Oriented-rectangle collision tests (separating axis) and the sampled
trajectory-vs-trajectory conflict check used by planning and verification."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .trajectory import Trajectory, sample
from .types import VehicleParams


@dataclass(frozen=True)
class Footprint:
    length: float
    width: float
    inflation: float = 0.02

    @classmethod
    def of(cls, params: VehicleParams, inflation: float = 0.02) -> "Footprint":
        return cls(params.length, params.width, inflation)

    @property
    def half_extents(self) -> tuple[float, float]:
        return ((self.length + 2 * self.inflation) / 2,
                (self.width + 2 * self.inflation) / 2)


def rect_corners(x, y, yaw, half_len, half_wid) -> np.ndarray:
    """Corners of an oriented rectangle centered on (x, y); vectorized over
    leading dimensions of x/y/yaw. Returns (..., 4, 2)."""
    x, y, yaw = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float),
                                    np.asarray(yaw, float))
    c, s = np.cos(yaw), np.sin(yaw)
    local = np.array([[half_len, half_wid], [half_len, -half_wid],
                      [-half_len, -half_wid], [-half_len, half_wid]])
    rot = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)  # (..., 2, 2)
    corners = np.einsum("...ij,kj->...ki", rot, local)
    return corners + np.stack([x, y], -1)[..., None, :]


def rects_overlap(ca: np.ndarray, cb: np.ndarray) -> np.ndarray:
    """Separating-axis overlap test for corner arrays (..., 4, 2).

    Axes are the edge normals of both rectangles (2 unique per rectangle)."""
    overlap = None
    for corners in (ca, cb):
        edges = corners[..., [1, 2], :] - corners[..., [0, 1], :]  # (..., 2, 2)
        norms = np.linalg.norm(edges, axis=-1, keepdims=True)
        axes = edges / np.where(norms > 0, norms, 1.0)
        for i in range(2):
            axis = axes[..., i, :]
            pa = np.einsum("...kj,...j->...k", ca, axis)
            pb = np.einsum("...kj,...j->...k", cb, axis)
            sep = (pa.max(-1) < pb.min(-1)) | (pb.max(-1) < pa.min(-1))
            overlap = ~sep if overlap is None else overlap & ~sep
    return overlap


def poses_collide(xa, ya, yawa, fa: Footprint, xb, yb, yawb, fb: Footprint) -> np.ndarray:
    la, wa = fa.half_extents
    lb, wb = fb.half_extents
    return rects_overlap(rect_corners(xa, ya, yawa, la, wa),
                         rect_corners(xb, yb, yawb, lb, wb))


def _headings(vel: np.ndarray, fallback: float = 0.0) -> np.ndarray:
    """Headings from velocity direction; near-zero speeds reuse the nearest
    moving sample's heading."""
    speeds = np.linalg.norm(vel, axis=1)
    yaw = np.arctan2(vel[:, 1], vel[:, 0])
    moving = speeds > 1e-6
    if not moving.any():
        return np.full(len(vel), fallback)
    idx = np.where(moving)[0]
    nearest = idx[np.abs(np.arange(len(vel))[:, None] - idx[None, :]).argmin(axis=1)]
    yaw[~moving] = yaw[nearest[~moving]]
    return yaw


def collision_check(traj_a: Trajectory, traj_b: Trajectory,
                    footprint_a: Footprint, footprint_b: Footprint,
                    dt_c: int = 10_000_000) -> int | None:
    """Earliest sampled conflict time (ns) between two trajectories, or None.

    Both trajectories are sampled at dt_c over the intersection of their
    time ranges and tested for oriented-rectangle overlap with headings
    taken from the velocity direction.
    """
    t0 = max(traj_a.t_first, traj_b.t_first)
    t1 = min(traj_a.t_last, traj_b.t_last)
    if t1 < t0:
        return None
    ts = np.arange(t0, t1 + 1, dt_c, dtype=np.int64)
    if ts[-1] != t1:
        ts = np.append(ts, t1)
    pa, va = sample(traj_a, ts)
    pb, vb = sample(traj_b, ts)

    # Cheap circle prefilter before the exact SAT test.
    ra = math.hypot(*footprint_a.half_extents)
    rb = math.hypot(*footprint_b.half_extents)
    near = np.linalg.norm(pa - pb, axis=1) <= ra + rb
    if not near.any():
        return None

    yawa = _headings(va)
    yawb = _headings(vb)
    hit = poses_collide(pa[near, 0], pa[near, 1], yawa[near], footprint_a,
                        pb[near, 0], pb[near, 1], yawb[near], footprint_b)
    if not hit.any():
        return None
    return int(ts[np.where(near)[0][hit.argmax()]])
