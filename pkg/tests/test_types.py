import math

import pytest

from cpmsim.types import (ActuatorCommand, Pose, TrajectoryNode, VehicleParams,
                          normalize_yaw, ns_to_s, s_to_ns, validate_node)


def test_time_conversions_round_trip():
    assert s_to_ns(1.0) == 1_000_000_000
    assert s_to_ns(0.02) == 20_000_000
    assert ns_to_s(s_to_ns(3.5)) == pytest.approx(3.5)


def test_normalize_yaw_range():
    for a in (-10.0, -math.pi, 0.0, math.pi, 7.0, 100.0):
        r = normalize_yaw(a)
        assert -math.pi < r <= math.pi
        # Same angle modulo 2*pi.
        assert math.isclose(math.sin(r), math.sin(a), abs_tol=1e-12)
        assert math.isclose(math.cos(r), math.cos(a), abs_tol=1e-12)


def test_normalize_yaw_rejects_nan():
    with pytest.raises(ValueError):
        normalize_yaw(float("nan"))


def test_pose_normalizes_yaw():
    p = Pose(1.0, 2.0, 3 * math.pi)
    assert p.yaw == pytest.approx(math.pi)


def test_pose_rejects_non_finite():
    with pytest.raises(ValueError):
        Pose(float("inf"), 0.0, 0.0)


def test_vehicle_params_defaults():
    p = VehicleParams(vehicle_id=1)
    assert p.length == 0.220
    assert p.width == 0.107
    assert p.max_speed == 3.7
    # Curvature bound from wheelbase and max steering angle:
    # tan(0.44) / 0.15 = 3.1387...
    assert p.max_curvature == pytest.approx(math.tan(0.44) / 0.15)


def test_vehicle_params_validation():
    with pytest.raises(ValueError):
        VehicleParams(vehicle_id=0)
    with pytest.raises(ValueError):
        VehicleParams(vehicle_id=1, length=-1.0)
    with pytest.raises(ValueError):
        VehicleParams(vehicle_id=1, wheelbase=0.3)  # longer than the car


def test_node_speed():
    n = TrajectoryNode(0, 0.0, 0.0, 3.0, 4.0)
    assert n.speed == pytest.approx(5.0)


def test_validate_node():
    params = VehicleParams(vehicle_id=1)
    assert validate_node(TrajectoryNode(0, 0, 0, 1.0, 0.0), params) is None
    bad = validate_node(TrajectoryNode(0, 0, 0, 10.0, 0.0), params)
    assert bad is not None and bad.kind == "speed_limit"
    bad = validate_node(TrajectoryNode(-1, 0, 0, 0, 0), params)
    assert bad is not None and bad.kind == "negative_time"
    bad = validate_node(TrajectoryNode(0, float("nan"), 0, 0, 0), params)
    assert bad is not None and bad.kind == "non_finite"


def test_actuator_command_rejects_nan():
    with pytest.raises(ValueError):
        ActuatorCommand(float("nan"), 0.0)
