"""Vehicle plant and low-level control: the physical car in software.

Kinematic bicycle dynamics with a first-order motor lag, actuator clamping,
and odometer/IMU synthesis. The motor gains are calibrated so that
steady-state full-throttle speed equals the real vehicle's 3.7 m/s top
speed. The plant integrates at 1 ms sub-steps inside each 20 ms control
period with an explicit Euler scheme.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import payloads
from .types import (NS_PER_S, ActuatorCommand, Pose, VehicleParams, VehicleState,
                    normalize_yaw)


@dataclass(frozen=True)
class PlantConfig:
    k_drag: float = 2.0          # 1/s
    k_motor: float = 7.4         # m/s^2 at full duty; k_motor/k_drag = 3.7 m/s
    substep_ns: int = 1_000_000  # 1 ms


@dataclass(frozen=True)
class NoiseConfig:
    odometer_sigma: float = 0.02
    imu_accel_sigma: float = 0.1
    imu_yaw_rate_sigma: float = 0.01
    odometer_tick: float = 0.005
    stream: str = "sensors"

    def __post_init__(self):
        if min(self.odometer_sigma, self.imu_accel_sigma, self.imu_yaw_rate_sigma) < 0:
            raise ValueError("noise sigmas must be >= 0")
        if self.odometer_tick <= 0:
            raise ValueError("odometer tick must be > 0")


@dataclass(frozen=True)
class SensorSample:
    odometer_speed: float
    imu_accel: float
    imu_yaw_rate: float
    sample_time: int


def apply_limits(cmd: ActuatorCommand, params: VehicleParams) -> ActuatorCommand:
    """Clamp a command to what the actuators can do."""
    motor = min(1.0, max(-1.0, cmd.motor_input))
    steer = min(params.max_steering, max(-params.max_steering, cmd.steering_angle))
    return ActuatorCommand(motor, steer)


def step_dynamics(state: VehicleState, cmd: ActuatorCommand, dt: float,
                  params: VehicleParams, plant: PlantConfig = PlantConfig()) -> VehicleState:
    """One explicit-Euler step of the kinematic bicycle with motor lag."""
    v = state.speed
    yaw = state.pose.yaw
    tan_d = math.tan(cmd.steering_angle)
    yaw_rate = v * tan_d / params.wheelbase
    new_v = v + dt * (plant.k_motor * cmd.motor_input - plant.k_drag * v)
    new_v = min(params.max_speed, max(-params.max_speed, new_v))
    return VehicleState(
        pose=Pose(
            x=state.pose.x + dt * v * math.cos(yaw),
            y=state.pose.y + dt * v * math.sin(yaw),
            yaw=normalize_yaw(yaw + dt * yaw_rate),
        ),
        speed=new_v,
        yaw_rate=yaw_rate,
        steering_angle=cmd.steering_angle,
    )


def quantize(value: float, tick: float) -> float:
    return round(value / tick) * tick


class SensorModel:
    """Odometer/IMU synthesis; keeps the previous speed for the accelerometer."""

    def __init__(self, noise: NoiseConfig, rng, initial_speed: float = 0.0):
        self.noise = noise
        self.rng = rng
        self.prev_speed = initial_speed

    def sample(self, state: VehicleState, dt: float, sample_time: int) -> SensorSample:
        n = self.noise
        odo = state.speed
        if n.odometer_sigma > 0:
            odo += n.odometer_sigma * self.rng.standard_normal()
        accel = (state.speed - self.prev_speed) / dt
        if n.imu_accel_sigma > 0:
            accel += n.imu_accel_sigma * self.rng.standard_normal()
        gyro = state.yaw_rate
        if n.imu_yaw_rate_sigma > 0:
            gyro += n.imu_yaw_rate_sigma * self.rng.standard_normal()
        self.prev_speed = state.speed
        return SensorSample(
            odometer_speed=quantize(odo, n.odometer_tick),
            imu_accel=accel,
            imu_yaw_rate=gyro,
            sample_time=sample_time,
        )


def sample_sensors(state: VehicleState, noise: NoiseConfig, rng,
                   dt: float = 0.02, prev_speed: float | None = None,
                   sample_time: int = 0) -> SensorSample:
    """One-shot sensor synthesis (stateless convenience around SensorModel)."""
    model = SensorModel(noise, rng, state.speed if prev_speed is None else prev_speed)
    return model.sample(state, dt, sample_time)


class VehiclePlant:
    """LLC middleware participant owning one vehicle's ground-truth state.

    Per period: read the latest LET-frozen MLC command (zero-hold when
    absent), clamp it, integrate the plant at sub-step resolution, publish a
    sensor sample.
    """

    def __init__(self, params: VehicleParams, initial: VehicleState, noise: NoiseConfig,
                 rng, tick_ns: int = 20_000_000, plant: PlantConfig = PlantConfig()):
        self.params = params
        self.state = initial
        self.tick_ns = tick_ns
        self.plant = plant
        self.sensors = SensorModel(noise, rng, initial.speed)
        self.command = ActuatorCommand()
        self.command_topic = f"vehicle/{params.vehicle_id}/command"
        self.sensor_topic = f"vehicle/{params.vehicle_id}/sensors"

    @property
    def subscriptions(self):
        return (self.command_topic,)

    def step(self, handle, period: int):
        latest = None
        for env in handle.collect_inputs():
            if env.topic == self.command_topic:
                latest = env
        if latest is not None:
            self.command = apply_limits(payloads.decode_command(latest.payload), self.params)
        n_sub = max(1, self.tick_ns // self.plant.substep_ns)
        dt = self.tick_ns / n_sub / NS_PER_S
        state = self.state
        for _ in range(n_sub):
            state = step_dynamics(state, self.command, dt, self.params, self.plant)
        self.state = state
        sample = self.sensors.sample(state, self.tick_ns / NS_PER_S,
                                     sample_time=(period + 1) * self.tick_ns)
        handle.publish(self.sensor_topic, payloads.encode_sensor(sample))


def initial_state(pose: Pose) -> VehicleState:
    return VehicleState(pose=pose)
