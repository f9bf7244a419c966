import math

import numpy as np
import pytest

from cpmsim.plant import (NoiseConfig, PlantConfig, SensorModel, VehiclePlant,
                          apply_limits, initial_state, quantize, step_dynamics)
from cpmsim.rng import stream
from cpmsim.types import ActuatorCommand, Pose, VehicleParams, VehicleState
from cpmsim.wire import StubHandle

PARAMS = VehicleParams(vehicle_id=1)


def drive(state, cmd, seconds, dt=0.001, params=PARAMS, plant=PlantConfig()):
    for _ in range(round(seconds / dt)):
        state = step_dynamics(state, cmd, dt, params, plant)
    return state


def test_apply_limits():
    c = apply_limits(ActuatorCommand(5.0, 1.0), PARAMS)
    assert c.motor_input == 1.0
    assert c.steering_angle == PARAMS.max_steering
    c = apply_limits(ActuatorCommand(-5.0, -1.0), PARAMS)
    assert c.motor_input == -1.0
    assert c.steering_angle == -PARAMS.max_steering


def test_full_throttle_steady_state_speed():
    # k_motor / k_drag = 7.4 / 2.0 = 3.7 m/s, the rated top speed.
    state = drive(initial_state(Pose(0, 0, 0)), ActuatorCommand(1.0, 0.0), 6.0)
    assert state.speed == pytest.approx(3.7, abs=1e-3)


def test_speed_convergence_time_constant():
    # First-order lag: v(t) = v_inf (1 - exp(-k_drag t)).
    state = drive(initial_state(Pose(0, 0, 0)), ActuatorCommand(1.0, 0.0), 0.5)
    expect = 3.7 * (1 - math.exp(-2.0 * 0.5))
    assert state.speed == pytest.approx(expect, rel=1e-2)


def test_straight_line_distance():
    # At steady speed v, distance = v * t.
    s0 = VehicleState(Pose(0, 0, 0), speed=2.0)
    cmd = ActuatorCommand(2.0 / 3.7, 0.0)  # duty that holds 2.0 m/s
    state = drive(s0, cmd, 3.0)
    assert state.pose.x == pytest.approx(6.0, rel=1e-3)
    assert state.pose.y == 0.0


def test_turning_radius_oracle():
    # Kinematic bicycle: radius = wheelbase / tan(steering).
    delta = 0.3
    r_expect = PARAMS.wheelbase / math.tan(delta)
    s0 = VehicleState(Pose(0, 0, 0), speed=1.0)
    cmd = ActuatorCommand(1.0 / 3.7, delta)
    xs, ys = [], []
    state = s0
    for _ in range(3000):
        state = step_dynamics(state, cmd, 0.001, PARAMS)
        xs.append(state.pose.x)
        ys.append(state.pose.y)
    pts = np.column_stack([xs, ys])
    # Fit the circle center as the mean of the (closed-ish) loop.
    center = pts.mean(axis=0)
    radii = np.linalg.norm(pts - center, axis=1)
    assert radii.mean() == pytest.approx(r_expect, rel=0.02)


def test_euler_substep_convergence():
    s0 = VehicleState(Pose(0, 0, 0), speed=1.5)
    cmd = ActuatorCommand(0.5, 0.2)
    coarse = drive(s0, cmd, 1.0, dt=0.001)
    fine = drive(s0, cmd, 1.0, dt=0.00025)
    assert coarse.pose.x == pytest.approx(fine.pose.x, abs=2e-3)
    assert coarse.pose.y == pytest.approx(fine.pose.y, abs=2e-3)
    assert coarse.speed == pytest.approx(fine.speed, abs=2e-3)


def test_quantize():
    assert quantize(0.01234, 0.005) == pytest.approx(0.01)
    assert quantize(-0.0126, 0.005) == pytest.approx(-0.015)


def test_sensor_statistics():
    noise = NoiseConfig(odometer_sigma=0.02, imu_accel_sigma=0.1,
                        imu_yaw_rate_sigma=0.01, odometer_tick=0.0001)
    model = SensorModel(noise, stream(0, 1, "sensors"), initial_speed=1.0)
    state = VehicleState(Pose(0, 0, 0), speed=1.0, yaw_rate=0.5)
    samples = [model.sample(state, 0.02, k) for k in range(4000)]
    odo = np.array([s.odometer_speed for s in samples])
    gyro = np.array([s.imu_yaw_rate for s in samples])
    assert odo.mean() == pytest.approx(1.0, abs=0.002)
    assert odo.std() == pytest.approx(0.02, rel=0.1)
    assert gyro.mean() == pytest.approx(0.5, abs=0.001)


def test_noiseless_sensors_exact():
    noise = NoiseConfig(odometer_sigma=0.0, imu_accel_sigma=0.0,
                        imu_yaw_rate_sigma=0.0, odometer_tick=1e-9)
    model = SensorModel(noise, stream(0, 1, "sensors"), initial_speed=0.0)
    state = VehicleState(Pose(0, 0, 0), speed=1.0, yaw_rate=0.25)
    s = model.sample(state, 0.02, 0)
    assert s.odometer_speed == pytest.approx(1.0, abs=1e-9)
    assert s.imu_accel == pytest.approx(1.0 / 0.02)
    assert s.imu_yaw_rate == 0.25


def test_noise_config_validation():
    with pytest.raises(ValueError):
        NoiseConfig(odometer_sigma=-0.1)
    with pytest.raises(ValueError):
        NoiseConfig(odometer_tick=0.0)


def test_vehicle_plant_participant():
    from cpmsim import payloads
    from cpmsim.middleware import Envelope
    plant = VehiclePlant(PARAMS, initial_state(Pose(1, 1, 0)), NoiseConfig(),
                         stream(0, 1, "sensors"))
    # Period 0 with no command: car stays put, sensor published.
    h = StubHandle()
    plant.step(h, 0)
    assert plant.state.pose.x == 1.0
    topics = [t for t, _ in h.published]
    assert topics == ["vehicle/1/sensors"]
    # Command applies from the period it is delivered.
    cmd = payloads.encode_command(ActuatorCommand(1.0, 0.0))
    h = StubHandle([Envelope("vehicle/1/command", "mlc-01", 0, 0, cmd)])
    plant.step(h, 1)
    assert plant.state.speed > 0.1
    assert plant.state.pose.x > 1.0


def test_vehicle_plant_determinism():
    def run():
        plant = VehiclePlant(PARAMS, initial_state(Pose(0, 0, 0.3)), NoiseConfig(),
                             stream(7, 1, "sensors"))
        out = []
        for k in range(50):
            h = StubHandle()
            plant.step(h, k)
            out.append(h.published[0][1])
        return out

    assert run() == run()
