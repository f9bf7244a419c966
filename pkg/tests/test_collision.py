import math

import numpy as np
import pytest

from cpmsim.collision import (Footprint, collision_check, poses_collide,
                              rect_corners, rects_overlap)
from cpmsim.trajectory import Trajectory
from cpmsim.types import NS_PER_S, TrajectoryNode, VehicleParams

PARAMS = VehicleParams(vehicle_id=1)
FP = Footprint.of(PARAMS)  # 0.22 x 0.107 with 0.02 inflation


def straight(x0, y0, vx, vy, n=21, dt=NS_PER_S // 10):
    return Trajectory([TrajectoryNode(k * dt, x0 + vx * k * dt / NS_PER_S,
                                      y0 + vy * k * dt / NS_PER_S, vx, vy)
                       for k in range(n)], PARAMS)


def test_footprint_half_extents():
    he = Footprint(0.22, 0.107, 0.02).half_extents
    assert he == (pytest.approx(0.13), pytest.approx(0.0735))


def test_rect_corners_axis_aligned():
    c = rect_corners(1.0, 2.0, 0.0, 0.5, 0.25)
    assert c.shape == (4, 2)
    assert np.allclose(sorted(c[:, 0]), [0.5, 0.5, 1.5, 1.5])
    assert np.allclose(sorted(c[:, 1]), [1.75, 1.75, 2.25, 2.25])


def test_rects_overlap_oracle_cases():
    a = rect_corners(0.0, 0.0, 0.0, 0.5, 0.5)
    assert bool(rects_overlap(a, rect_corners(0.9, 0.0, 0.0, 0.5, 0.5)))
    assert not bool(rects_overlap(a, rect_corners(1.1, 0.0, 0.0, 0.5, 0.5)))
    # Rotated square slots diagonally between two axis gaps: corners at
    # distance sqrt(2)*0.5 reach into the other square.
    b = rect_corners(1.2, 0.0, math.pi / 4, 0.5, 0.5)
    assert bool(rects_overlap(a, b))


def test_poses_collide_vectorized():
    xs = np.array([0.0, 1.0, 5.0])
    hit = poses_collide(xs, np.zeros(3), np.zeros(3), FP,
                        np.zeros(3), np.zeros(3), np.zeros(3), FP)
    assert hit.tolist() == [True, False, False]


def test_identical_trajectories_conflict_at_start():
    a = straight(0, 0, 1.0, 0.0)
    assert collision_check(a, a, FP, FP) == a.t_first


def test_parallel_lanes_no_conflict():
    a = straight(0, 0.0, 1.0, 0.0)
    b = straight(0, 0.5, 1.0, 0.0)  # 0.5 m apart > width + inflation
    assert collision_check(a, b, FP, FP) is None


def test_crossing_conflict_near_analytic_time():
    # Both reach the origin at t = 1 s.
    a = straight(-1.0, 0.0, 1.0, 0.0)
    b = straight(0.0, -1.0, 0.0, 1.0)
    dt_c = 10_000_000
    t = collision_check(a, b, FP, FP, dt_c)
    assert t is not None
    # First overlap when the inflated half-lengths meet along both axes;
    # certainly within 0.2 s of the crossing, and before it.
    assert 0.8 * NS_PER_S <= t <= NS_PER_S
    # Refining dt_c can only move the detection earlier by < one step.
    t_fine = collision_check(a, b, FP, FP, dt_c // 10)
    assert 0 <= t - t_fine <= dt_c


def test_disjoint_time_ranges():
    a = straight(0, 0, 1.0, 0.0, n=3)

    def shifted():
        return Trajectory([TrajectoryNode(n.t + 10 * NS_PER_S, n.x, n.y, n.vx, n.vy)
                           for n in a.nodes], PARAMS)

    assert collision_check(a, shifted(), FP, FP) is None


def test_stationary_headings_fall_back():
    hold = Trajectory([TrajectoryNode(k * NS_PER_S // 10, 1.0, 0.0, 0.0, 0.0)
                       for k in range(21)], PARAMS)
    mover = straight(-1.0, 0.0, 1.0, 0.0)
    t = collision_check(mover, hold, FP, FP)
    assert t is not None
    # Contact when the gap 2.0 m closes to the sum of half-lengths (0.26 m).
    assert t == pytest.approx(1.74 * NS_PER_S, abs=2e7)
