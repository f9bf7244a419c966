"""Fixed-width little-endian payload codecs for the middleware topics."""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .types import ActuatorCommand, Pose, TrajectoryNode

_NODE = struct.Struct("<q4d")
_CMD = struct.Struct("<2d")
_SENSOR = struct.Struct("<q3d")
_FUSED = struct.Struct("<4dI B 2d")
_OBS_HEAD = struct.Struct("<I")
_OBS = struct.Struct("<I3dQq")
_TRUTH = struct.Struct("<6d")


def encode_nodes(nodes) -> bytes:
    return b"".join(_NODE.pack(n.t, n.x, n.y, n.vx, n.vy) for n in nodes)


def decode_nodes(data: bytes) -> list[TrajectoryNode]:
    if len(data) % _NODE.size:
        raise ValueError(f"node payload length {len(data)} not a multiple of {_NODE.size}")
    return [TrajectoryNode(*_NODE.unpack_from(data, off))
            for off in range(0, len(data), _NODE.size)]


def encode_command(cmd: ActuatorCommand) -> bytes:
    return _CMD.pack(cmd.motor_input, cmd.steering_angle)


def decode_command(data: bytes) -> ActuatorCommand:
    return ActuatorCommand(*_CMD.unpack(data))


def encode_sensor(sample) -> bytes:
    return _SENSOR.pack(sample.sample_time, sample.odometer_speed,
                        sample.imu_accel, sample.imu_yaw_rate)


def decode_sensor_fields(data: bytes) -> tuple[int, float, float, float]:
    return _SENSOR.unpack(data)


@dataclass(frozen=True)
class FusedPayload:
    x: float
    y: float
    yaw: float
    speed: float
    age: int
    starved: bool
    ref_x: float
    ref_y: float


def encode_fused(f: FusedPayload) -> bytes:
    return _FUSED.pack(f.x, f.y, f.yaw, f.speed, f.age, int(f.starved), f.ref_x, f.ref_y)


def decode_fused(data: bytes) -> FusedPayload:
    x, y, yaw, speed, age, starved, rx, ry = _FUSED.unpack(data)
    return FusedPayload(x, y, yaw, speed, age, bool(starved), rx, ry)


@dataclass(frozen=True)
class ObservationRecord:
    vehicle_id: int
    x: float
    y: float
    yaw: float
    frame_index: int
    frame_time: int


def encode_observations(records) -> bytes:
    out = [_OBS_HEAD.pack(len(records))]
    for r in records:
        out.append(_OBS.pack(r.vehicle_id, r.x, r.y, r.yaw, r.frame_index, r.frame_time))
    return b"".join(out)


def decode_observations(data: bytes) -> list[ObservationRecord]:
    (count,) = _OBS_HEAD.unpack_from(data, 0)
    out = []
    off = _OBS_HEAD.size
    for _ in range(count):
        out.append(ObservationRecord(*_OBS.unpack_from(data, off)))
        off += _OBS.size
    return out


def encode_truth(pose: Pose, speed: float, yaw_rate: float, steering: float) -> bytes:
    return _TRUTH.pack(pose.x, pose.y, pose.yaw, speed, yaw_rate, steering)


def decode_truth(data: bytes) -> tuple[Pose, float, float, float]:
    x, y, yaw, speed, yaw_rate, steering = _TRUTH.unpack(data)
    return Pose(x, y, yaw), speed, yaw_rate, steering
