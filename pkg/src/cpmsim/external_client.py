"""Reference external-vehicle client.

Hosts the plant and mid-level controller for one or more vehicles in a
separate process, joined to a running experiment over the wire protocol.
The client reuses the exact library components an internal vehicle uses and
mirrors the in-process dataflow: the plant consumes the command the MLC
published one period earlier, the MLC consumes the sensor sample from one
period earlier plus whatever the hub forwarded, so behavior matches an
internal vehicle without code changes on either side.
"""

from __future__ import annotations

import argparse
import logging
import socket
import struct
import sys

from . import payloads, wire
from .middleware import Envelope
from .mlc import MlcController, MpcConfig
from .plant import VehiclePlant, initial_state
from .rng import stream
from .scenario import resolve_scenario

log = logging.getLogger("cpmsim.client")


class _HostedVehicle:
    """One vehicle's plant + MLC pair plus its one-period mailboxes."""

    def __init__(self, spec, vehicle_id: int, seed: int):
        veh = spec.vehicle(vehicle_id)
        params = spec.params_for(vehicle_id)
        pose = spec.initial_pose(veh)
        mode = "direct" if spec.kind == "direct" else "trajectory"
        self.vehicle_id = vehicle_id
        self.plant = VehiclePlant(params, initial_state(pose), spec.noise,
                                  stream(seed, vehicle_id, spec.noise.stream),
                                  tick_ns=spec.mlc_period_ns)
        self.mlc = MlcController(params, pose,
                                 MpcConfig(period_ns=spec.mlc_period_ns),
                                 alpha=spec.alpha, mode=mode)
        self.prev_command: bytes | None = None
        self.prev_sensor: bytes | None = None
        self.seq: dict[str, int] = {}

    def next_seq(self, topic: str) -> int:
        n = self.seq.get(topic, 0)
        self.seq[topic] = n + 1
        return n

    def step(self, period: int, forwarded: list[Envelope]):
        """Run one LET period; returns (topic, payload) pairs to publish."""
        vid = self.vehicle_id
        plant_inputs = []
        if self.prev_command is not None:
            plant_inputs.append(Envelope(
                f"vehicle/{vid}/command", f"mlc-{vid:02d}", period - 1, 0,
                self.prev_command))
        plant_handle = wire.StubHandle(plant_inputs)
        self.plant.step(plant_handle, period)
        sensor_payload = dict(plant_handle.published)[f"vehicle/{vid}/sensors"]

        mlc_inputs = list(forwarded)
        if self.prev_sensor is not None:
            mlc_inputs.append(Envelope(
                f"vehicle/{vid}/sensors", f"plant-{vid:02d}", period - 1, 0,
                self.prev_sensor))
        mlc_inputs.sort(key=Envelope.sort_key)
        mlc_handle = wire.StubHandle(mlc_inputs)
        self.mlc.step(mlc_handle, period)

        out = list(mlc_handle.published)
        state = self.plant.state
        out.append((f"vehicle/{vid}/truth", payloads.encode_truth(
            state.pose, state.speed, state.yaw_rate, state.steering_angle)))
        self.prev_command = dict(mlc_handle.published)[f"vehicle/{vid}/command"]
        self.prev_sensor = sensor_payload
        return out


def run_client(connect: str, scenario_ref: str, vehicle_ids, seed: int | None = None,
               leave_after: int | None = None, idle_timeout_s: float = 60.0) -> int:
    spec = resolve_scenario(scenario_ref)
    addr = wire.parse_endpoint(connect)
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sock.settimeout(idle_timeout_s)

    effective_seed = spec.seed if seed is None else seed
    for vid in vehicle_ids:
        sock.sendto(wire.encode_datagram(wire.Datagram(wire.HELLO, 0, vid)), addr)
        data, _ = sock.recvfrom(65536)
        d = wire.decode_datagram(data)
        if d.kind != wire.WELCOME:
            raise wire.WireError(f"expected WELCOME, got kind {d.kind}")
        if seed is None and len(d.payload) == 8:
            (effective_seed,) = struct.unpack("<q", d.payload)
    log.info("joined %s with vehicles %s (seed %d)",
             connect, list(vehicle_ids), effective_seed)

    hosted = {vid: _HostedVehicle(spec, vid, effective_seed) for vid in vehicle_ids}
    steps_done = {vid: 0 for vid in vehicle_ids}
    while hosted:
        try:
            data, _ = sock.recvfrom(65536)
        except socket.timeout:
            log.warning("idle for %.0f s, leaving", idle_timeout_s)
            return 1
        d = wire.decode_datagram(data)
        if d.kind == wire.BYE:
            hosted.pop(d.sender, None)
            if d.sender == 0:
                break
            continue
        if d.kind != wire.STEP or d.sender not in hosted:
            continue
        vid = d.sender
        if leave_after is not None and steps_done[vid] >= leave_after:
            sock.sendto(wire.encode_datagram(
                wire.Datagram(wire.BYE, d.period, vid)), addr)
            del hosted[vid]
            continue
        veh = hosted[vid]
        forwarded = wire.decode_envelopes(d.payload)
        for topic, payload in veh.step(d.period, forwarded):
            sock.sendto(wire.encode_datagram(wire.Datagram(
                wire.PUBLISH, d.period, vid, topic,
                veh.next_seq(topic), payload)), addr)
        sock.sendto(wire.encode_datagram(
            wire.Datagram(wire.STEP, d.period, vid)), addr)
        steps_done[vid] += 1
    return 0


def add_arguments(parser: argparse.ArgumentParser):
    parser.add_argument("--connect", required=True, metavar="HOST:PORT",
                        help="hub endpoint of the running experiment")
    parser.add_argument("--scenario", required=True,
                        help="fixture name or scenario file (must match the run)")
    parser.add_argument("--vehicle", required=True, action="append", type=int,
                        dest="vehicles", metavar="ID",
                        help="vehicle id to host (repeatable)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the seed (default: taken from WELCOME)")
    parser.add_argument("--leave-after", type=int, default=None, metavar="N",
                        help="send BYE after N periods (for leave testing)")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cpmsim-client", description="external vehicle client")
    add_arguments(parser)
    args = parser.parse_args(argv)
    return run_client(args.connect, args.scenario, args.vehicles,
                      seed=args.seed, leave_after=args.leave_after)


if __name__ == "__main__":
    sys.exit(main())
