import math

import pytest

from cpmsim import payloads
from cpmsim.middleware import Envelope
from cpmsim.mlc import (FusedState, MlcController, MpcConfig, StarvedTrajectory,
                        _rollout_cost, dead_reckon, direct_control, fuse_ips,
                        mpc_follow)
from cpmsim.plant import NoiseConfig, PlantConfig, SensorSample, VehiclePlant, \
    initial_state
from cpmsim.rng import stream
from cpmsim.trajectory import Trajectory
from cpmsim.types import NS_PER_S, ActuatorCommand, Pose, TrajectoryNode, \
    VehicleParams

PARAMS = VehicleParams(vehicle_id=1)
P = 20_000_000  # MLC period (ns)


def straight_traj(speed=1.0, t0=0, n=60, x0=0.0):
    nodes = [TrajectoryNode(t0 + k * P, x0 + speed * k * P / NS_PER_S, 0.0,
                            speed, 0.0) for k in range(n)]
    return Trajectory(nodes, PARAMS)


def test_dead_reckon_straight():
    f0 = FusedState(Pose(0, 0, 0), speed=0.0, age=0)
    s = SensorSample(odometer_speed=1.0, imu_accel=0.0, imu_yaw_rate=0.0,
                     sample_time=0)
    f1 = dead_reckon(f0, s, 0.02)
    assert f1.pose.x == pytest.approx(0.02)
    assert f1.pose.y == 0.0
    assert f1.speed == 1.0
    assert f1.age == 1


def test_dead_reckon_midpoint_heading():
    f0 = FusedState(Pose(0, 0, 0), speed=1.0, age=0)
    s = SensorSample(1.0, 0.0, imu_yaw_rate=1.0, sample_time=0)
    f1 = dead_reckon(f0, s, 0.02)
    assert f1.pose.yaw == pytest.approx(0.02)
    # Displacement heading is the midpoint yaw 0.01.
    assert math.atan2(f1.pose.y, f1.pose.x) == pytest.approx(0.01)
    with pytest.raises(ValueError):
        dead_reckon(f0, s, 0.0)


def test_fuse_ips_blend():
    f = FusedState(Pose(0, 0, 0), speed=1.0, age=5)
    obs = payloads.ObservationRecord(1, 1.0, 0.0, 0.0, 0, 0)
    out = fuse_ips(f, obs, alpha=0.3, vehicle_id=1)
    assert out.pose.x == pytest.approx(0.3)
    assert out.age == 0
    with pytest.raises(ValueError):
        fuse_ips(f, obs, alpha=0.3, vehicle_id=2)
    with pytest.raises(ValueError):
        fuse_ips(f, obs, alpha=0.0, vehicle_id=1)


def test_fuse_ips_yaw_wraps_on_circle():
    # 179 deg blended toward -179 deg must cross pi, not average to ~0.
    f = FusedState(Pose(0, 0, math.radians(179)), speed=0.0, age=1)
    obs = payloads.ObservationRecord(1, 0.0, 0.0, math.radians(-179), 0, 0)
    out = fuse_ips(f, obs, alpha=0.5, vehicle_id=1)
    assert abs(out.pose.yaw) == pytest.approx(math.pi, abs=1e-9)


def test_direct_control_clamps():
    c = direct_control(ActuatorCommand(3.0, -2.0), PARAMS)
    assert c.motor_input == 1.0
    assert c.steering_angle == -PARAMS.max_steering


def test_mpc_descent_contract():
    # The returned sequence is never worse than zero input or holding the
    # previous command.
    cfg = MpcConfig(period_ns=P)
    traj = straight_traj(1.0)
    state = FusedState(Pose(0.0, 0.05, 0.1), speed=0.5, age=0)
    prev = ActuatorCommand(0.4, -0.1)
    cmd, u = mpc_follow(state, traj, 0, cfg, PARAMS, prev_cmd=prev)
    dt = P / NS_PER_S
    refs = []
    from cpmsim.trajectory import sample
    pos, vel = sample(traj, [(k + 1) * P for k in range(cfg.horizon)])
    yaw = 0.0
    for k in range(cfg.horizon):
        refs.append((pos[k, 0], pos[k, 1], yaw))
    x0 = (state.pose.x, state.pose.y, state.pose.yaw, state.speed)
    args = (refs, dt, cfg, PARAMS, PlantConfig(), (prev.motor_input, prev.steering_angle))
    c_opt = _rollout_cost(x0, u, *args)
    c_zero = _rollout_cost(x0, [(0.0, 0.0)] * cfg.horizon, *args)
    c_hold = _rollout_cost(x0, [(prev.motor_input, prev.steering_angle)] * cfg.horizon, *args)
    assert c_opt <= c_zero + 1e-12
    assert c_opt <= c_hold + 1e-12


def test_mpc_accelerates_toward_moving_reference():
    cfg = MpcConfig(period_ns=P)
    cmd, _ = mpc_follow(FusedState(Pose(0, 0, 0), 0.0, 0), straight_traj(1.0),
                        0, cfg, PARAMS)
    assert cmd.motor_input > 0.1
    assert abs(cmd.steering_angle) < 0.05


def test_mpc_starved_when_horizon_uncovered():
    cfg = MpcConfig(period_ns=P)
    short = straight_traj(1.0, n=3)  # covers 40 ms < 8-step horizon
    with pytest.raises(StarvedTrajectory):
        mpc_follow(FusedState(Pose(0, 0, 0), 0.0, 0), short, 0, cfg, PARAMS)


def test_mpc_command_within_limits():
    cfg = MpcConfig(period_ns=P)
    state = FusedState(Pose(0.0, 1.0, -1.0), speed=2.0, age=0)
    cmd, _ = mpc_follow(state, straight_traj(1.0), 0, cfg, PARAMS)
    assert -1.0 <= cmd.motor_input <= 1.0
    assert abs(cmd.steering_angle) <= PARAMS.max_steering


def test_mpc_config_validation():
    with pytest.raises(ValueError):
        MpcConfig(horizon=0)
    with pytest.raises(ValueError):
        MpcConfig(w_pos=0.0, w_yaw=0.0)


class _H:
    def __init__(self, inputs=()):
        self.inputs = list(inputs)
        self.published = []

    def publish(self, topic, payload):
        self.published.append((topic, payload))
        return 0

    def collect_inputs(self, period=None):
        return list(self.inputs)


def test_controller_starves_without_trajectory():
    mlc = MlcController(PARAMS, Pose(0, 0, 0), MpcConfig(period_ns=P))
    h = _H()
    mlc.step(h, 0)
    topics = dict(h.published)
    fused = payloads.decode_fused(topics["vehicle/1/fused"])
    assert fused.starved
    cmd = payloads.decode_command(topics["vehicle/1/command"])
    assert cmd.motor_input == 0.0


def test_controller_ignores_wrong_mode_messages():
    mlc = MlcController(PARAMS, Pose(0, 0, 0), MpcConfig(period_ns=P),
                        mode="direct")
    nodes = payloads.encode_nodes(straight_traj().nodes)
    h = _H([Envelope("hlc/1/trajectory", "hlc", 0, 0, nodes)])
    mlc.step(h, 1)
    assert mlc.ignored_mode_msgs == 1
    assert mlc.traj is None


def test_controller_direct_mode_forwards_command():
    mlc = MlcController(PARAMS, Pose(0, 0, 0), MpcConfig(period_ns=P),
                        mode="direct")
    payload = payloads.encode_command(ActuatorCommand(0.25, 0.2))
    h = _H([Envelope("hlc/1/direct", "hlc", 0, 0, payload)])
    mlc.step(h, 1)
    cmd = payloads.decode_command(dict(h.published)["vehicle/1/command"])
    assert cmd.motor_input == 0.25
    assert cmd.steering_angle == 0.2


def test_closed_loop_tracks_straight_line():
    # Plant + MLC in a hand-rolled LET loop: noiseless sensors, perfect IPS
    # every 5th period, straight reference at 1 m/s.
    noise = NoiseConfig(odometer_sigma=0.0, imu_accel_sigma=0.0,
                        imu_yaw_rate_sigma=0.0, odometer_tick=1e-9)
    plant = VehiclePlant(PARAMS, initial_state(Pose(0, 0, 0)), noise,
                         stream(0, 1, "sensors"), tick_ns=P)
    mlc = MlcController(PARAMS, Pose(0, 0, 0), MpcConfig(period_ns=P))
    traj = straight_traj(1.0, n=600)
    prev_cmd = None
    prev_sensor = None
    errors = []
    for k in range(400):
        inputs = []
        if prev_cmd is not None:
            inputs.append(Envelope("vehicle/1/command", "mlc", k - 1, 0, prev_cmd))
        ph = _H(inputs)
        plant.step(ph, k)
        sensor = dict(ph.published)["vehicle/1/sensors"]

        inputs = [Envelope("hlc/1/trajectory", "hlc", k - 1, 0,
                           payloads.encode_nodes(traj.nodes))]
        if prev_sensor is not None:
            inputs.append(Envelope("vehicle/1/sensors", "plant", k - 1, 0,
                                   prev_sensor))
        if k % 5 == 0:
            st = plant.state
            obs = payloads.ObservationRecord(1, st.pose.x, st.pose.y,
                                             st.pose.yaw, k, k * P)
            inputs.append(Envelope("ips/poses", "ips", k - 1, 0,
                                   payloads.encode_observations([obs])))
        mh = _H(inputs)
        mlc.step(mh, k)
        prev_cmd = dict(mh.published)["vehicle/1/command"]
        prev_sensor = sensor
        if k > 150:
            errors.append(abs(plant.state.pose.y))  # lateral error
    rms = math.sqrt(sum(e * e for e in errors) / len(errors))
    assert rms < 0.03
