import math

import numpy as np
import pytest

from cpmsim.trajectory import (ExtrapolationError, Trajectory, TrajectoryError,
                               append_node, interpolate, merge_nodes,
                               prune_before, sample)
from cpmsim.types import NS_PER_S, TrajectoryNode

S = NS_PER_S


def line(t0=0, n=5, speed=1.0, dt=S):
    """Nodes along the x axis at constant speed."""
    return [TrajectoryNode(t0 + k * dt, speed * (t0 + k * dt) / S, 0.0, speed, 0.0)
            for k in range(n)]


def test_construction_requires_increasing_times():
    nodes = line()
    with pytest.raises(TrajectoryError):
        Trajectory(nodes + [nodes[-1]])
    with pytest.raises(TrajectoryError):
        Trajectory([])


def test_construction_rejects_invalid_nodes():
    with pytest.raises(TrajectoryError):
        Trajectory([TrajectoryNode(0, 0, 0, 10.0, 0)])  # over the speed limit


def test_node_hits_are_bit_exact():
    traj = Trajectory(line(n=6))
    ts = [n.t for n in traj.nodes]
    pos, vel = sample(traj, ts)
    for k, n in enumerate(traj.nodes):
        assert pos[k, 0] == n.x and pos[k, 1] == n.y
        assert vel[k, 0] == n.vx and vel[k, 1] == n.vy


def test_hermite_basis_midpoint_oracle():
    # Single segment [0, 1 s]; at tau = 1/2 the basis values are
    # h00 = 1/2, h10 = 1/8, h01 = 1/2, h11 = -1/8.
    p0, p1 = (1.0, 2.0), (3.0, -1.0)
    v0, v1 = (0.5, 0.25), (-0.5, 1.0)
    traj = Trajectory([TrajectoryNode(0, *p0, *v0), TrajectoryNode(S, *p1, *v1)])
    pos, _ = sample(traj, [S // 2])
    for i in range(2):
        expect = 0.5 * p0[i] + 0.125 * v0[i] + 0.5 * p1[i] - 0.125 * v1[i]
        assert pos[0, i] == pytest.approx(expect, abs=1e-15)


def test_cubic_reproduction():
    # Position x(t) = t^3 - t with exact derivatives at the nodes: the
    # interpolant must reproduce the cubic everywhere on the segment.
    def x(t):
        return t ** 3 - t

    def dx(t):
        return 3 * t ** 2 - 1

    nodes = [TrajectoryNode(round(t * S), x(t), 0.0, dx(t), 0.0)
             for t in (0.0, 0.5, 1.0)]
    traj = Trajectory(nodes)
    ts = np.linspace(0, S, 101).astype(np.int64)
    pos, vel = sample(traj, ts)
    for k, t in enumerate(ts):
        assert pos[k, 0] == pytest.approx(x(t / S), abs=1e-12)
        assert vel[k, 0] == pytest.approx(dx(t / S), abs=1e-9)


def test_linear_motion_reproduced():
    traj = Trajectory(line(n=4, speed=0.8))
    ts = np.arange(0, 3 * S + 1, S // 7, dtype=np.int64)
    pos, vel = sample(traj, ts)
    assert np.allclose(pos[:, 0], 0.8 * ts / S, atol=1e-12)
    assert np.allclose(vel[:, 0], 0.8, atol=1e-9)
    assert np.allclose(pos[:, 1], 0.0)


def test_extrapolation_rejected():
    traj = Trajectory(line(n=3))
    with pytest.raises(ExtrapolationError):
        sample(traj, [-1])
    with pytest.raises(ExtrapolationError):
        sample(traj, [2 * S + 1])


def test_append_locality():
    base = Trajectory(line(n=4))
    ts = np.linspace(0, 3 * S, 200).astype(np.int64)
    before_p, before_v = sample(base, ts)
    extended = append_node(base, TrajectoryNode(4 * S, 9.9, 3.0, 0.2, 0.1))
    after_p, after_v = sample(extended, ts)
    assert np.array_equal(before_p, after_p)
    assert np.array_equal(before_v, after_v)


def test_append_requires_later_time():
    base = Trajectory(line(n=3))
    with pytest.raises(TrajectoryError):
        append_node(base, TrajectoryNode(2 * S, 0, 0, 0, 0))


def test_interpolate_scalar():
    traj = Trajectory(line(n=3))
    (x, y), (vx, vy) = interpolate(traj, S)
    assert x == pytest.approx(1.0)
    assert (y, vy) == (0.0, 0.0)
    assert vx == pytest.approx(1.0)


def test_prune_before_keeps_left_endpoint():
    traj = Trajectory(line(n=5))
    pruned = prune_before(traj, int(1.5 * S))
    # Node at 1 s kept so queries in [1.5 s, 2 s) still interpolate.
    assert pruned.t_first == S
    assert len(pruned) == 4
    assert prune_before(traj, 0).t_first == 0


def test_merge_nodes_replaces_tail():
    traj = Trajectory(line(n=4))
    batch = [TrajectoryNode(2 * S, 5.0, 5.0, 0.0, 0.0),
             TrajectoryNode(3 * S, 6.0, 5.0, 1.0, 0.0)]
    merged = merge_nodes(traj, batch)
    assert [n.t for n in merged.nodes] == [0, S, 2 * S, 3 * S]
    assert merged.nodes[2].x == 5.0  # replaced, not the old 2.0
    assert merge_nodes(traj, []) is traj
    with pytest.raises(TrajectoryError):
        merge_nodes(None, [])


def test_covers():
    traj = Trajectory(line(n=3))
    assert traj.covers(0, 2 * S)
    assert not traj.covers(-1, S)
    assert not traj.covers(0, 2 * S + 1)


def test_circle_tangency():
    # Velocities tangent to a circle; interpolated positions stay near the
    # circle (chord error only).
    r, w = 2.0, 0.5
    nodes = []
    for k in range(9):
        t = k * S // 4
        a = w * t / S
        nodes.append(TrajectoryNode(t, r * math.cos(a), r * math.sin(a),
                                    -r * w * math.sin(a), r * w * math.cos(a)))
    traj = Trajectory(nodes)
    ts = np.linspace(0, nodes[-1].t, 300).astype(np.int64)
    pos, _ = sample(traj, ts)
    radii = np.linalg.norm(pos, axis=1)
    assert np.all(np.abs(radii - r) < 1e-4)
