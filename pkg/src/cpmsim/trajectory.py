"""Trajectory container and cubic Hermite interpolation.

The continuous reference [x_ref(t), y_ref(t)] is interpolated between timed
nodes with the standard cubic Hermite basis. Interpolation on a segment
depends only on that segment's two end nodes, so appending nodes never
changes values on earlier segments (the locality property the MLC relies on
for real-time node additions).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .types import DEFAULT_PARAMS, NS_PER_S, TrajectoryNode, VehicleParams, validate_node


class TrajectoryError(ValueError):
    pass


class ExtrapolationError(TrajectoryError):
    """Query time outside [t_first, t_last]."""


@dataclass(frozen=True, eq=False)
class Trajectory:
    nodes: tuple[TrajectoryNode, ...]

    def __init__(self, nodes, params: VehicleParams = DEFAULT_PARAMS):
        nodes = tuple(nodes)
        if not nodes:
            raise TrajectoryError("trajectory needs at least one node")
        prev_t = None
        for n in nodes:
            bad = validate_node(n, params)
            if bad is not None:
                raise TrajectoryError(f"invalid node at t={n.t}: {bad}")
            if prev_t is not None and n.t <= prev_t:
                raise TrajectoryError(f"node times not strictly increasing at t={n.t}")
            prev_t = n.t
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "_params", params)

    @property
    def params(self) -> VehicleParams:
        return self._params

    @property
    def t_first(self) -> int:
        return self.nodes[0].t

    @property
    def t_last(self) -> int:
        return self.nodes[-1].t

    def __len__(self):
        return len(self.nodes)

    def covers(self, t0: int, t1: int) -> bool:
        return self.t_first <= t0 and t1 <= self.t_last

    @cached_property
    def _arrays(self):
        times = np.array([n.t for n in self.nodes], dtype=np.int64)
        pos = np.array([[n.x, n.y] for n in self.nodes])
        vel = np.array([[n.vx, n.vy] for n in self.nodes])
        return times, pos, vel


def sample(traj: Trajectory, ts) -> tuple[np.ndarray, np.ndarray]:
    """Interpolate positions and velocities at integer-ns times `ts`.

    Returns (pos, vel) with shape (len(ts), 2). Queries that hit a node time
    exactly return that node's stored values bit-exactly.
    """
    if len(traj) < 2:
        raise TrajectoryError("interpolation needs at least 2 nodes")
    ts = np.asarray(ts, dtype=np.int64)
    times, pos, vel = traj._arrays
    if ts.size and (ts.min() < times[0] or ts.max() > times[-1]):
        raise ExtrapolationError(
            f"query outside [{times[0]}, {times[-1]}] ns: "
            f"[{ts.min()}, {ts.max()}]"
        )
    # Left segment index for each query; exact node hits handled separately.
    seg = np.clip(np.searchsorted(times, ts, side="right") - 1, 0, len(times) - 2)
    t0 = times[seg]
    t1 = times[seg + 1]
    # tau from integer differences: no absolute-time cancellation.
    dt_ns = (t1 - t0).astype(np.float64)
    tau = (ts - t0).astype(np.float64) / dt_ns
    dt_s = dt_ns / NS_PER_S

    t2 = tau * tau
    t3 = t2 * tau
    h00 = 2 * t3 - 3 * t2 + 1
    h10 = t3 - 2 * t2 + tau
    h01 = -2 * t3 + 3 * t2
    h11 = t3 - t2
    # Derivatives of the basis w.r.t. tau.
    d00 = 6 * t2 - 6 * tau
    d10 = 3 * t2 - 4 * tau + 1
    d01 = -6 * t2 + 6 * tau
    d11 = 3 * t2 - 2 * tau

    p0, p1 = pos[seg], pos[seg + 1]
    m0 = vel[seg] * dt_s[:, None]
    m1 = vel[seg + 1] * dt_s[:, None]

    out_p = h00[:, None] * p0 + h10[:, None] * m0 + h01[:, None] * p1 + h11[:, None] * m1
    out_v = (d00[:, None] * p0 + d10[:, None] * m0 + d01[:, None] * p1 + d11[:, None] * m1) / dt_s[:, None]

    exact = ts == t0
    if exact.any():
        out_p[exact] = pos[seg[exact]]
        out_v[exact] = vel[seg[exact]]
    last = ts == times[-1]
    if last.any():
        out_p[last] = pos[-1]
        out_v[last] = vel[-1]
    return out_p, out_v


def interpolate(traj: Trajectory, t: int) -> tuple[tuple[float, float], tuple[float, float]]:
    """Position and velocity at logical time t (ns)."""
    p, v = sample(traj, [int(t)])
    return (p[0, 0], p[0, 1]), (v[0, 0], v[0, 1])


def append_node(traj: Trajectory, node: TrajectoryNode) -> Trajectory:
    """New trajectory with `node` appended; earlier segments are untouched."""
    if node.t <= traj.t_last:
        raise TrajectoryError(f"appended node time {node.t} not after t_last {traj.t_last}")
    return Trajectory(traj.nodes + (node,), traj.params)


def prune_before(traj: Trajectory, t: int) -> Trajectory:
    """Drop nodes before t, keeping the last earlier node as left endpoint."""
    times = [n.t for n in traj.nodes]
    idx = 0
    for i, ti in enumerate(times):
        if ti < t:
            idx = i
        else:
            break
    if times[0] >= t:
        return traj
    return Trajectory(traj.nodes[idx:], traj.params)


def merge_nodes(traj: Trajectory | None, nodes, params: VehicleParams = DEFAULT_PARAMS) -> Trajectory:
    """Fold a freshly received node batch into the stored trajectory.

    Replanned batches overlap the stored tail: stored nodes at or after the
    batch start are replaced, earlier nodes are kept as history so queries
    just before the batch remain answerable.
    """
    nodes = list(nodes)
    if not nodes:
        if traj is None:
            raise TrajectoryError("empty node batch with no stored trajectory")
        return traj
    if traj is None:
        return Trajectory(nodes, params)
    t0 = nodes[0].t
    kept = [n for n in traj.nodes if n.t < t0]
    return Trajectory(kept + nodes, traj.params)
