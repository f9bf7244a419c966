"""Shared physical and planning types.

Units: meters, seconds, radians. Time is an integer nanosecond count from
experiment start so that period boundaries are exact and replays are
bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

NS_PER_S = 1_000_000_000


def s_to_ns(seconds: float) -> int:
    return round(seconds * NS_PER_S)


def ns_to_s(ns: int) -> float:
    return ns / NS_PER_S


def normalize_yaw(angle: float) -> float:
    """Reduce an angle to the half-open interval (-pi, pi]."""
    if not math.isfinite(angle):
        raise ValueError(f"non-finite yaw: {angle!r}")
    r = math.remainder(angle, math.tau)
    if r <= -math.pi:
        r += math.tau
    return r


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    yaw: float

    def __post_init__(self):
        for name in ("x", "y", "yaw"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"non-finite pose field {name}: {v!r}")
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))


@dataclass(frozen=True)
class TrajectoryNode:
    """Timed waypoint [t, x, y, vx, vy]; the HLC-to-MLC planning currency."""

    t: int  # ns
    x: float
    y: float
    vx: float
    vy: float

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)


@dataclass(frozen=True)
class VehicleParams:
    vehicle_id: int
    length: float = 0.220
    width: float = 0.107
    height: float = 0.070
    max_speed: float = 3.7
    wheelbase: float = 0.150
    max_steering: float = 0.44

    def __post_init__(self):
        if self.vehicle_id <= 0:
            raise ValueError("vehicle_id must be a positive integer")
        for name in ("length", "width", "height", "max_speed", "wheelbase", "max_steering"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.wheelbase >= self.length:
            raise ValueError("wheelbase must be smaller than vehicle length")

    @property
    def max_curvature(self) -> float:
        return math.tan(self.max_steering) / self.wheelbase


DEFAULT_PARAMS = VehicleParams(vehicle_id=1)


@dataclass(frozen=True)
class VehicleState:
    pose: Pose
    speed: float = 0.0  # signed, along body x-axis
    yaw_rate: float = 0.0
    steering_angle: float = 0.0


@dataclass(frozen=True)
class ActuatorCommand:
    motor_input: float = 0.0  # normalized duty in [-1, 1]
    steering_angle: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.motor_input) and math.isfinite(self.steering_angle)):
            raise ValueError("non-finite actuator command")


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str

    def __str__(self):
        return f"{self.kind}: {self.detail}"


def validate_node(node: TrajectoryNode, params: VehicleParams = DEFAULT_PARAMS) -> Violation | None:
    """Check a trajectory node against its invariants.

    Returns None when the node is valid, otherwise the first violated
    invariant.
    """
    for name in ("x", "y", "vx", "vy"):
        v = getattr(node, name)
        if not math.isfinite(v):
            return Violation("non_finite", f"field {name} is {v!r}")
    if node.t < 0:
        return Violation("negative_time", f"t = {node.t} ns")
    speed = node.speed
    if speed > params.max_speed:
        return Violation("speed_limit", f"speed {speed:.3f} > {params.max_speed} m/s")
    return None
