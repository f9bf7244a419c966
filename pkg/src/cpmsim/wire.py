"""Datagram protocol for external-process vehicles.

An external vehicle joins the experiment over UDP: it sends HELLO, gets a
WELCOME, and then receives one STEP datagram per scheduler period carrying
its LET-frozen input envelopes. It answers with zero or more PUBLISH
datagrams followed by a STEP acknowledgement for the same period. A BYE in
either direction ends participation. Causality is identical to in-process
participants: everything the client publishes during period k is released
at the period-k barrier and delivered no earlier than period k + 1.

Datagram layout (little endian):
  magic u32 ("CPM1"), version u8, kind u8, period u64, sender u32,
  topic (u16 length + UTF-8 bytes), sequence u64,
  payload (u32 length + bytes).
"""

from __future__ import annotations

import socket
import struct
import time
from dataclasses import dataclass, field

from .middleware import Envelope

MAGIC = 0x43504D31  # "1MPC" little endian, i.e. b"CPM1" on the wire
VERSION = 1

HELLO = 0
WELCOME = 1
STEP = 2
PUBLISH = 3
BYE = 4

_KINDS = (HELLO, WELCOME, STEP, PUBLISH, BYE)

_HEAD = struct.Struct("<IBBQI")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")

MAX_DATAGRAM = 60000


class WireError(Exception):
    pass


class WireTimeout(WireError):
    pass


@dataclass(frozen=True)
class Datagram:
    kind: int
    period: int
    sender: int  # vehicle id (0 for the hub itself)
    topic: str = ""
    sequence: int = 0
    payload: bytes = b""


def encode_datagram(d: Datagram) -> bytes:
    if d.kind not in _KINDS:
        raise WireError(f"unknown datagram kind {d.kind}")
    topic = d.topic.encode()
    out = [_HEAD.pack(MAGIC, VERSION, d.kind, d.period, d.sender),
           _U16.pack(len(topic)), topic,
           _U64.pack(d.sequence),
           _U32.pack(len(d.payload)), d.payload]
    data = b"".join(out)
    if len(data) > MAX_DATAGRAM:
        raise WireError(f"datagram of {len(data)} bytes exceeds {MAX_DATAGRAM}")
    return data


def decode_datagram(data: bytes) -> Datagram:
    if len(data) < _HEAD.size:
        raise WireError(f"short datagram: {len(data)} bytes")
    magic, version, kind, period, sender = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise WireError(f"bad magic 0x{magic:08x}")
    if version != VERSION:
        raise WireError(f"unsupported protocol version {version}")
    if kind not in _KINDS:
        raise WireError(f"unknown datagram kind {kind}")
    off = _HEAD.size
    try:
        (tlen,) = _U16.unpack_from(data, off)
        off += _U16.size
        topic = data[off:off + tlen].decode()
        if len(data[off:off + tlen]) != tlen:
            raise WireError("truncated topic")
        off += tlen
        (sequence,) = _U64.unpack_from(data, off)
        off += _U64.size
        (plen,) = _U32.unpack_from(data, off)
        off += _U32.size
        payload = data[off:off + plen]
        if len(payload) != plen:
            raise WireError("truncated payload")
    except struct.error as exc:
        raise WireError(f"truncated datagram: {exc}") from None
    return Datagram(kind, period, sender, topic, sequence, payload)


def encode_envelopes(envelopes) -> bytes:
    """STEP payload: the LET-frozen input envelopes for one participant."""
    out = [_U32.pack(len(envelopes))]
    for e in envelopes:
        topic = e.topic.encode()
        sender = e.sender_id.encode()
        out += [_U16.pack(len(topic)), topic,
                _U16.pack(len(sender)), sender,
                _U64.pack(e.publish_period), _U64.pack(e.sequence),
                _U32.pack(len(e.payload)), e.payload]
    return b"".join(out)


def decode_envelopes(data: bytes) -> list[Envelope]:
    (count,) = _U32.unpack_from(data, 0)
    off = _U32.size
    out = []
    try:
        for _ in range(count):
            (tlen,) = _U16.unpack_from(data, off)
            off += _U16.size
            topic = data[off:off + tlen].decode()
            off += tlen
            (slen,) = _U16.unpack_from(data, off)
            off += _U16.size
            sender = data[off:off + slen].decode()
            off += slen
            (period,) = _U64.unpack_from(data, off)
            off += _U64.size
            (sequence,) = _U64.unpack_from(data, off)
            off += _U64.size
            (plen,) = _U32.unpack_from(data, off)
            off += _U32.size
            payload = data[off:off + plen]
            if len(payload) != plen:
                raise WireError("truncated envelope payload")
            off += plen
            out.append(Envelope(topic, sender, period, sequence, payload))
    except struct.error as exc:
        raise WireError(f"truncated envelope list: {exc}") from None
    return out


def parse_endpoint(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise WireError(f"endpoint must be host:port, got {addr!r}")
    return host, int(port)


class StubHandle:
    """Minimal stand-in for a middleware ParticipantHandle.

    Used by the external client (and tests) to run participant objects
    outside a scheduler: inputs are preset, publishes are collected.
    """

    def __init__(self, inputs=()):
        self.inputs = list(inputs)
        self.published: list[tuple[str, bytes]] = []

    def publish(self, topic: str, payload: bytes) -> int:
        self.published.append((topic, bytes(payload)))
        return len(self.published) - 1

    def collect_inputs(self, period=None):
        return list(self.inputs)


@dataclass
class _Client:
    vehicle_id: int
    addr: tuple
    backlog: list = field(default_factory=list)  # out-of-turn datagrams


class ExternalHub:
    """Hub side of the wire protocol; owned by the experiment runner.

    One UDP socket serves every external vehicle. The hub is driven by the
    per-vehicle adapter participants: step_vehicle performs the
    STEP/PUBLISH exchange for one vehicle within the wall-clock deadline.
    """

    def __init__(self, endpoint, deadline_ms: int = 200, seed: int = 0):
        if isinstance(endpoint, str):
            endpoint = parse_endpoint(endpoint)
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind(endpoint)
        self.deadline_s = deadline_ms / 1000.0
        self.seed = seed
        self.clients: dict[int, _Client] = {}

    @property
    def endpoint(self) -> tuple[str, int]:
        return self.sock.getsockname()

    def close(self):
        self.sock.close()

    def _recv(self, timeout: float) -> Datagram | None:
        self.sock.settimeout(max(timeout, 1e-4))
        try:
            data, addr = self.sock.recvfrom(65536)
        except socket.timeout:
            return None
        d = decode_datagram(data)
        if d.kind == HELLO:
            self.clients[d.sender] = _Client(d.sender, addr)
            # The WELCOME carries the effective seed so a client stays in
            # sync when the run was started with a seed override.
            self.sock.sendto(encode_datagram(
                Datagram(WELCOME, 0, d.sender,
                         payload=struct.pack("<q", self.seed))), addr)
            return None
        client = self.clients.get(d.sender)
        if client is not None:
            client.addr = addr
        return d

    def wait_for_clients(self, vehicle_ids, timeout_s: float = 30.0):
        """Block until every listed vehicle has said HELLO."""
        deadline = time.monotonic() + timeout_s
        missing = set(vehicle_ids) - set(self.clients)
        while missing:
            left = deadline - time.monotonic()
            if left <= 0:
                raise WireTimeout(
                    f"no HELLO from external vehicles {sorted(missing)} "
                    f"within {timeout_s} s")
            d = self._recv(min(left, 0.2))
            if d is not None and d.sender in self.clients:
                self.clients[d.sender].backlog.append(d)
            missing = set(vehicle_ids) - set(self.clients)

    def step_vehicle(self, vehicle_id: int, period: int, envelopes):
        """One STEP round trip; returns publishes, or None after a BYE.

        Raises WireTimeout when the client misses the deadline; the caller
        treats that period's outputs as absent.
        """
        client = self.clients.get(vehicle_id)
        if client is None:
            raise WireError(f"external vehicle {vehicle_id} never joined")
        self.sock.sendto(encode_datagram(Datagram(
            STEP, period, vehicle_id, payload=encode_envelopes(envelopes))),
            client.addr)
        published: list[tuple[str, bytes]] = []
        deadline = time.monotonic() + self.deadline_s
        pending = client.backlog
        client.backlog = []
        while True:
            d = pending.pop(0) if pending else self._recv(deadline - time.monotonic())
            if d is None:
                if time.monotonic() >= deadline:
                    raise WireTimeout(
                        f"vehicle {vehicle_id} missed the STEP deadline "
                        f"in period {period}")
                continue
            if d.sender != vehicle_id:
                other = self.clients.get(d.sender)
                if other is not None:
                    other.backlog.append(d)
                continue
            if d.kind == BYE:
                del self.clients[vehicle_id]
                return None
            if d.kind == PUBLISH and d.period == period:
                published.append((d.topic, d.payload))
            elif d.kind == STEP and d.period == period:
                return published
            # Stale datagrams from earlier periods are dropped.

    def shutdown(self):
        for client in list(self.clients.values()):
            try:
                self.sock.sendto(encode_datagram(
                    Datagram(BYE, 0, client.vehicle_id)), client.addr)
            except OSError:
                pass
        self.close()


class ExternalVehicleAdapter:
    """Middleware participant bridging one external vehicle.

    Relays the frozen inputs as a STEP, republishes the client's PUBLISH
    replies on the bus, and counts deadline misses. A BYE deregisters the
    vehicle; the run continues without it.
    """

    def __init__(self, hub: ExternalHub, vehicle_id: int, scheduler=None,
                 pid: str | None = None):
        self.hub = hub
        self.vehicle_id = vehicle_id
        self.scheduler = scheduler
        self.pid = pid
        self.missed = 0
        self.left = False
        vid = vehicle_id
        self.subscriptions = ("ips/poses", f"hlc/{vid}/trajectory",
                              f"hlc/{vid}/direct")

    def step(self, handle, period: int):
        if self.left:
            return
        try:
            published = self.hub.step_vehicle(
                self.vehicle_id, period, handle.collect_inputs())
        except WireTimeout:
            self.missed += 1
            return
        if published is None:
            self.left = True
            if self.scheduler is not None and self.pid is not None:
                self.scheduler.deregister_participant(self.pid)
            return
        for topic, payload in published:
            handle.publish(topic, payload)
