"""Mid-level controller: sensor fusion and the two command modes.

Fusion is a single-gain predictor-corrector: dead reckoning from odometer
and gyro, blended toward positioning-system observations with gain alpha.
Trajectory following uses a model-predictive controller over the Hermite
reference, solved by fixed-budget gradient descent with an adjoint
gradient; the returned command is never worse (in predicted cost) than
holding the previous command or applying zero input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from . import payloads
from .plant import PlantConfig, SensorSample, apply_limits
from .trajectory import ExtrapolationError, Trajectory, TrajectoryError, merge_nodes, sample
from .types import (NS_PER_S, ActuatorCommand, Pose, VehicleParams, normalize_yaw)


class StarvedTrajectory(Exception):
    """The reference does not cover the control horizon."""


@dataclass(frozen=True)
class FusedState:
    pose: Pose
    speed: float
    age: int  # periods since the last IPS correction

    def __post_init__(self):
        if self.age < 0:
            raise ValueError("confidence age must be >= 0")


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 8
    period_ns: int = 20_000_000
    w_pos: float = 40.0
    w_yaw: float = 0.5
    w_input: float = 0.02
    w_input_rate: float = 0.2
    iterations: int = 3
    line_search: int = 6

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if min(self.w_pos, self.w_yaw, self.w_input, self.w_input_rate) < 0:
            raise ValueError("weights must be >= 0")
        if self.w_pos == 0 and self.w_yaw == 0:
            raise ValueError("at least one tracking weight must be > 0")


def dead_reckon(prev: FusedState, sensor: SensorSample, dt: float) -> FusedState:
    """Advance the pose by odometer speed along the midpoint heading."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    yaw0 = prev.pose.yaw
    yaw1 = yaw0 + sensor.imu_yaw_rate * dt
    mid = yaw0 + 0.5 * sensor.imu_yaw_rate * dt
    v = sensor.odometer_speed
    return FusedState(
        pose=Pose(prev.pose.x + v * dt * math.cos(mid),
                  prev.pose.y + v * dt * math.sin(mid),
                  normalize_yaw(yaw1)),
        speed=v,
        age=prev.age + 1,
    )


def fuse_ips(state: FusedState, obs: payloads.ObservationRecord, alpha: float,
             vehicle_id: int) -> FusedState:
    """Blend the dead-reckoned pose toward an IPS observation."""
    if obs.vehicle_id != vehicle_id:
        raise ValueError(f"observation for vehicle {obs.vehicle_id}, not {vehicle_id}")
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must be in (0, 1]")
    x = (1 - alpha) * state.pose.x + alpha * obs.x
    y = (1 - alpha) * state.pose.y + alpha * obs.y
    # Yaw blends on the circle along the shortest angular difference.
    dyaw = normalize_yaw(obs.yaw - state.pose.yaw)
    yaw = normalize_yaw(state.pose.yaw + alpha * dyaw)
    return FusedState(pose=Pose(x, y, yaw), speed=state.speed, age=0)


def direct_control(cmd: ActuatorCommand, params: VehicleParams) -> ActuatorCommand:
    """Direct-control mode: clamp and forward unchanged otherwise."""
    return apply_limits(cmd, params)


# -- MPC ---------------------------------------------------------------------


def _rollout_cost(x0, u_seq, refs, dt, cfg: MpcConfig, params, plant, u_prev):
    """Predicted cost of an input sequence under the bicycle model."""
    km, kd, L = plant.k_motor, plant.k_drag, params.wheelbase
    vmax = params.max_speed
    x, y, yaw, v = x0
    cost = 0.0
    up_m, up_s = u_prev
    for k in range(cfg.horizon):
        um, us = u_seq[k]
        cost += cfg.w_input * (um * um + us * us)
        dm, ds = um - up_m, us - up_s
        cost += cfg.w_input_rate * (dm * dm + ds * ds)
        up_m, up_s = um, us
        nx = x + dt * v * math.cos(yaw)
        ny = y + dt * v * math.sin(yaw)
        nyaw = yaw + dt * v * math.tan(us) / L
        nv = v + dt * (km * um - kd * v)
        nv = min(vmax, max(-vmax, nv))
        x, y, yaw, v = nx, ny, nyaw, nv
        rx, ry, ryaw = refs[k]
        ex, ey = x - rx, y - ry
        eyaw = normalize_yaw(yaw - ryaw)
        cost += cfg.w_pos * (ex * ex + ey * ey) + cfg.w_yaw * eyaw * eyaw
    return cost


def _gradient(x0, u_seq, refs, dt, cfg: MpcConfig, params, plant, u_prev):
    """Adjoint gradient of the rollout cost w.r.t. the input sequence."""
    km, kd, L = plant.k_motor, plant.k_drag, params.wheelbase
    vmax = params.max_speed
    N = cfg.horizon
    states = [x0]
    clipped = [False] * N
    x, y, yaw, v = x0
    for k in range(N):
        um, us = u_seq[k]
        nx = x + dt * v * math.cos(yaw)
        ny = y + dt * v * math.sin(yaw)
        nyaw = yaw + dt * v * math.tan(us) / L
        nv = v + dt * (km * um - kd * v)
        if nv > vmax or nv < -vmax:
            clipped[k] = True
            nv = min(vmax, max(-vmax, nv))
        x, y, yaw, v = nx, ny, nyaw, nv
        states.append((x, y, yaw, v))

    grad = [[0.0, 0.0] for _ in range(N)]
    # Input and input-rate terms.
    seq = [u_prev] + [tuple(u) for u in u_seq]
    for k in range(N):
        um, us = seq[k + 1]
        grad[k][0] += 2 * cfg.w_input * um
        grad[k][1] += 2 * cfg.w_input * us
        dm, ds = um - seq[k][0], us - seq[k][1]
        grad[k][0] += 2 * cfg.w_input_rate * dm
        grad[k][1] += 2 * cfg.w_input_rate * ds
        if k + 1 < N:
            dm2 = seq[k + 2][0] - um
            ds2 = seq[k + 2][1] - us
            grad[k][0] -= 2 * cfg.w_input_rate * dm2
            grad[k][1] -= 2 * cfg.w_input_rate * ds2

    lx = ly = lyaw = lv = 0.0  # adjoint of the state after stage k
    for k in range(N - 1, -1, -1):
        xs, ys, yaws, vs = states[k + 1]
        rx, ry, ryaw = refs[k]
        lx += 2 * cfg.w_pos * (xs - rx)
        ly += 2 * cfg.w_pos * (ys - ry)
        lyaw += 2 * cfg.w_yaw * normalize_yaw(yaws - ryaw)
        x, y, yaw, v = states[k]
        um, us = u_seq[k]
        tan_us = math.tan(us)
        dv_dv = 0.0 if clipped[k] else 1.0 - dt * kd
        dv_du = 0.0 if clipped[k] else dt * km
        grad[k][0] += lv * dv_du
        grad[k][1] += lyaw * dt * v * (1.0 + tan_us * tan_us) / L
        nlx = lx
        nly = ly
        nlyaw = lyaw + lx * (-dt * v * math.sin(yaw)) + ly * (dt * v * math.cos(yaw))
        nlv = (lv * dv_dv + lx * dt * math.cos(yaw) + ly * dt * math.sin(yaw)
               + lyaw * dt * tan_us / L)
        lx, ly, lyaw, lv = nlx, nly, nlyaw, nlv
    return grad


def _clip_seq(u_seq, params):
    out = []
    for um, us in u_seq:
        out.append((min(1.0, max(-1.0, um)),
                    min(params.max_steering, max(-params.max_steering, us))))
    return out


def mpc_follow(state: FusedState, traj: Trajectory, now: int, cfg: MpcConfig,
               params: VehicleParams, plant: PlantConfig = PlantConfig(),
               prev_cmd: ActuatorCommand = ActuatorCommand(),
               warm_start=None):
    """One MPC solve; returns (command, optimized input sequence).

    Raises StarvedTrajectory when the reference does not cover the horizon.
    """
    dt = cfg.period_ns / NS_PER_S
    ts = [now + (k + 1) * cfg.period_ns for k in range(cfg.horizon)]
    if len(traj) < 2 or not traj.covers(min(now, ts[0]), ts[-1]):
        raise StarvedTrajectory(
            f"reference covers [{traj.t_first}, {traj.t_last}], "
            f"horizon needs [{now}, {ts[-1]}]")
    pos, vel = sample(traj, ts)
    refs = []
    last_yaw = state.pose.yaw
    for k in range(cfg.horizon):
        vx, vy = vel[k]
        if math.hypot(vx, vy) > 1e-6:
            last_yaw = math.atan2(vy, vx)
        refs.append((pos[k, 0], pos[k, 1], last_yaw))

    x0 = (state.pose.x, state.pose.y, state.pose.yaw, state.speed)
    u_prev = (prev_cmd.motor_input, prev_cmd.steering_angle)

    if warm_start is not None and len(warm_start) == cfg.horizon:
        u = _clip_seq(warm_start, params)
    else:
        u = [u_prev] * cfg.horizon

    args = (refs, dt, cfg, params, plant, u_prev)
    cost = _rollout_cost(x0, u, *args)
    for _ in range(cfg.iterations):
        g = _gradient(x0, u, *args)
        gmax = max(max(abs(gm), abs(gs)) for gm, gs in g)
        if gmax < 1e-12:
            break
        eta = 0.5 / gmax
        for _ in range(cfg.line_search):
            cand = _clip_seq([(um - eta * gm, us - eta * gs)
                              for (um, us), (gm, gs) in zip(u, g)], params)
            c = _rollout_cost(x0, cand, *args)
            if c < cost:
                u, cost = cand, c
                break
            eta *= 0.25

    # Descent contract: never worse than zero input or holding the previous
    # command over the whole horizon.
    for alt in ([(0.0, 0.0)] * cfg.horizon, [u_prev] * cfg.horizon):
        alt = _clip_seq(alt, params)
        c = _rollout_cost(x0, alt, *args)
        if c < cost:
            u, cost = alt, c
    cmd = apply_limits(ActuatorCommand(u[0][0], u[0][1]), params)
    return cmd, u


class MlcController:
    """Per-vehicle MLC middleware participant.

    Per period: fold LET-frozen inputs (sensors, IPS observations, HLC
    trajectory nodes or direct commands) into the fused state, run the
    active mode, publish the command and fused state.
    """

    def __init__(self, params: VehicleParams, initial_pose: Pose,
                 cfg: MpcConfig = MpcConfig(), alpha: float = 0.3,
                 mode: str = "trajectory", plant: PlantConfig = PlantConfig()):
        if mode not in ("trajectory", "direct"):
            raise ValueError(f"unknown MLC mode {mode!r}")
        vid = params.vehicle_id
        self.params = params
        self.cfg = cfg
        self.alpha = alpha
        self.mode = mode
        self.plant = plant
        self.fused = FusedState(pose=initial_pose, speed=0.0, age=0)
        self.traj: Trajectory | None = None
        self.prev_cmd = ActuatorCommand()
        self.u_seq = None
        self.starved = False
        self.ignored_mode_msgs = 0
        self.ref_point = (initial_pose.x, initial_pose.y)
        self.sensor_topic = f"vehicle/{vid}/sensors"
        self.traj_topic = f"hlc/{vid}/trajectory"
        self.direct_topic = f"hlc/{vid}/direct"
        self.command_topic = f"vehicle/{vid}/command"
        self.fused_topic = f"vehicle/{vid}/fused"

    @property
    def subscriptions(self):
        return (self.sensor_topic, "ips/poses", self.traj_topic, self.direct_topic)

    def step(self, handle, period: int):
        now = period * self.cfg.period_ns
        sensor = None
        obs = None
        direct = None
        node_batches = []
        for env in handle.collect_inputs():
            if env.topic == self.sensor_topic:
                t, odo, acc, gyro = payloads.decode_sensor_fields(env.payload)
                sensor = SensorSample(odo, acc, gyro, t)
            elif env.topic == "ips/poses":
                for rec in payloads.decode_observations(env.payload):
                    if rec.vehicle_id == self.params.vehicle_id:
                        obs = rec
            elif env.topic == self.traj_topic:
                if self.mode == "trajectory":
                    node_batches.append(payloads.decode_nodes(env.payload))
                else:
                    self.ignored_mode_msgs += 1
            elif env.topic == self.direct_topic:
                if self.mode == "direct":
                    direct = payloads.decode_command(env.payload)
                else:
                    self.ignored_mode_msgs += 1

        dt = self.cfg.period_ns / NS_PER_S
        if sensor is not None:
            self.fused = dead_reckon(self.fused, sensor, dt)
        else:
            self.fused = replace(self.fused, age=self.fused.age + 1)
        if obs is not None:
            self.fused = fuse_ips(self.fused, obs, self.alpha, self.params.vehicle_id)

        for nodes in node_batches:
            self.traj = merge_nodes(self.traj, nodes, self.params)

        cmd = self.prev_cmd
        self.starved = False
        if self.mode == "direct":
            if direct is not None:
                cmd = direct_control(direct, self.params)
        else:
            try:
                if self.traj is None:
                    raise StarvedTrajectory("no trajectory received yet")
                # Commands act one period later; predict across the gap with
                # the previously issued command before solving.
                pred = self._predict(self.fused, self.prev_cmd, dt)
                cmd, self.u_seq = mpc_follow(
                    pred, self.traj, now + self.cfg.period_ns, self.cfg, self.params,
                    self.plant, self.prev_cmd, warm_start=self._shifted())
                p, _ = sample(self.traj, [min(max(now, self.traj.t_first), self.traj.t_last)])
                self.ref_point = (p[0, 0], p[0, 1])
            except (StarvedTrajectory, TrajectoryError, ExtrapolationError):
                self.starved = True

        self.prev_cmd = cmd
        handle.publish(self.command_topic, payloads.encode_command(cmd))
        handle.publish(self.fused_topic, payloads.encode_fused(payloads.FusedPayload(
            self.fused.pose.x, self.fused.pose.y, self.fused.pose.yaw, self.fused.speed,
            self.fused.age, self.starved, self.ref_point[0], self.ref_point[1])))

    def _predict(self, fused: FusedState, cmd: ActuatorCommand, dt: float) -> FusedState:
        x, y, yaw, v = fused.pose.x, fused.pose.y, fused.pose.yaw, fused.speed
        nx = x + dt * v * math.cos(yaw)
        ny = y + dt * v * math.sin(yaw)
        nyaw = yaw + dt * v * math.tan(cmd.steering_angle) / self.params.wheelbase
        nv = v + dt * (self.plant.k_motor * cmd.motor_input - self.plant.k_drag * v)
        nv = min(self.params.max_speed, max(-self.params.max_speed, nv))
        return FusedState(Pose(nx, ny, normalize_yaw(nyaw)), nv, fused.age)

    def _shifted(self):
        if self.u_seq is None:
            return None
        return list(self.u_seq[1:]) + [self.u_seq[-1]]
