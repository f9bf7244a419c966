"""Publish-subscribe bus with logical-execution-time scheduling.

Inputs are frozen at period start and outputs released at the period end:
a message published during period k becomes visible to subscribers no
earlier than their step of period k+1. Delivery is deterministic for a
fixed seed regardless of the order participant steps execute in, because
publications are buffered until the period barrier, delivery sets are
totally ordered, and fault decisions are stateless hashes of message
identity.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field

from .rng import int_hash, unit_hash


class MiddlewareError(Exception):
    pass


class StepFailure(MiddlewareError):
    def __init__(self, period: int, participant, cause: BaseException):
        super().__init__(f"step of participant {participant!r} failed in period {period}")
        self.period = period
        self.participant = participant
        self.cause = cause


@dataclass(frozen=True)
class Envelope:
    topic: str
    sender_id: str
    publish_period: int
    sequence: int
    payload: bytes

    def sort_key(self):
        return (self.publish_period, self.sender_id, self.topic, self.sequence)


@dataclass(frozen=True)
class LetConfig:
    period_ns: int = 100_000_000  # 100 ms
    offsets: dict = field(default_factory=dict)  # participant id -> phase (periods)

    def __post_init__(self):
        if self.period_ns <= 0:
            raise ValueError("period must be positive")
        for pid, off in self.offsets.items():
            if off < 0:
                raise ValueError(f"negative offset for {pid!r}")


@dataclass(frozen=True)
class FaultModel:
    loss_probability: float = 0.0
    extra_delay_periods: int = 0
    rng_stream: str = "net"

    def __post_init__(self):
        if not 0.0 <= self.loss_probability <= 1.0:
            raise ValueError("loss_probability outside [0, 1]")
        if self.extra_delay_periods < 0:
            raise ValueError("extra_delay_periods must be >= 0")


@dataclass
class PeriodStats:
    period: int
    published: int = 0
    delivered: int = 0
    dropped: int = 0
    deadline_misses: int = 0
    delivery_digest: int = 0
    wall_ns: int = 0


@dataclass
class TickReport:
    steps_executed: int = 0
    messages_published: int = 0
    messages_delivered: int = 0
    messages_dropped: int = 0
    deadline_misses: list = field(default_factory=list)  # (period, participant)
    per_period: list = field(default_factory=list)


def match_topic(pattern: str, topic: str) -> bool:
    """Exact match, or prefix match when the pattern ends in '*'."""
    if pattern.endswith("*"):
        return topic.startswith(pattern[:-1])
    return pattern == topic


class ParticipantHandle:
    def __init__(self, bus: "Scheduler", pid: str):
        self.bus = bus
        self.id = pid
        self._in_step = False
        self._frozen_inputs: list[Envelope] = []

    def publish(self, topic: str, payload: bytes) -> int:
        """Publish during the current step; released at the period barrier."""
        return self.bus._publish(self, topic, payload)

    def collect_inputs(self, period: int | None = None) -> list[Envelope]:
        """The LET-frozen input set for the current step."""
        if not self._in_step:
            raise MiddlewareError(f"collect_inputs outside a step of {self.id!r}")
        return list(self._frozen_inputs)


class _Participant:
    __slots__ = ("pid", "subscriptions", "step", "every", "phase", "first_period",
                 "handle", "pending", "seq")

    def __init__(self, pid, subscriptions, step, every, phase, first_period, handle):
        self.pid = pid
        self.subscriptions = tuple(subscriptions)
        self.step = step
        self.every = every
        self.phase = phase
        self.first_period = first_period
        self.handle = handle
        self.pending: list[tuple[int, Envelope]] = []  # (arrival period, envelope)
        self.seq: dict[str, int] = {}

    def due(self, period: int) -> bool:
        return period >= self.first_period and (period - self.phase) % self.every == 0


class Scheduler:
    """LET scheduler and in-process message bus."""

    def __init__(self, config: LetConfig = LetConfig(), fault: FaultModel = FaultModel(),
                 seed: int = 0):
        self.config = config
        self.fault = fault
        self.seed = seed
        self.period = 0  # next period to execute
        self._participants: dict[str, _Participant] = {}
        self._match_cache: dict[str, list[str]] = {}  # topic -> subscriber pids
        self._outbox: list[Envelope] = []
        self._taps: list = []  # called with (period, published, stats) at each barrier
        self._running = False

    # -- registration -----------------------------------------------------

    def register_participant(self, pid: str, subscriptions, step_callback,
                             every: int = 1, phase: int | None = None) -> ParticipantHandle:
        if pid in self._participants:
            raise MiddlewareError(f"duplicate participant id {pid!r}")
        if every < 1:
            raise ValueError("every must be >= 1")
        if phase is None:
            phase = self.config.offsets.get(pid, 0)
        first = self.period + 1 if self._running else self.period
        handle = ParticipantHandle(self, pid)
        self._participants[pid] = _Participant(
            pid, subscriptions, step_callback, every, phase, first, handle)
        self._match_cache.clear()
        return handle

    def deregister_participant(self, pid: str) -> int:
        if pid not in self._participants:
            raise MiddlewareError(f"unknown participant id {pid!r}")
        del self._participants[pid]
        self._match_cache.clear()
        # No step at or after the returned period index.
        return self.period + 1 if self._running else self.period

    # -- publication and delivery -----------------------------------------

    def _publish(self, handle: ParticipantHandle, topic: str, payload: bytes) -> int:
        if not handle._in_step:
            raise MiddlewareError(f"publish outside a step of {handle.id!r}")
        part = self._participants.get(handle.id)
        if part is None or part.handle is not handle:
            raise MiddlewareError(f"stale handle for {handle.id!r}")
        seq = part.seq.get(topic, 0)
        part.seq[topic] = seq + 1
        env = Envelope(topic, handle.id, self.period, seq, bytes(payload))
        self._outbox.append(env)
        return seq

    def _route(self, stats: PeriodStats):
        # Stable order for counters/logs; fault decisions are per-message
        # hashes, so routing order never matters for outcomes.
        out = sorted(self._outbox, key=Envelope.sort_key)
        self._outbox = []
        stats.published += len(out)
        loss = self.fault.loss_probability
        delay_max = self.fault.extra_delay_periods
        for env in out:
            pids = self._match_cache.get(env.topic)
            if pids is None:
                pids = [p.pid for p in self._participants.values()
                        if any(match_topic(pat, env.topic)
                               for pat in p.subscriptions)]
                self._match_cache[env.topic] = pids
            for pid in pids:
                part = self._participants[pid]
                key = (self.fault.rng_stream, env.sender_id, env.topic, env.sequence,
                       env.publish_period, part.pid)
                if loss > 0.0 and unit_hash(self.seed, "loss", *key) < loss:
                    stats.dropped += 1
                    continue
                delay = int_hash(self.seed, delay_max + 1, "delay", *key)
                part.pending.append((self.period + 1 + delay, env))

    def _frozen_inputs_for(self, part: _Participant, period: int) -> list[Envelope]:
        ready = [(a, e) for (a, e) in part.pending if a <= period]
        part.pending = [(a, e) for (a, e) in part.pending if a > period]
        ready.sort(key=lambda ae: ae[1].sort_key())
        return [e for _, e in ready]

    def add_tap(self, fn):
        """fn(period, published_envelopes, stats) called at each barrier."""
        self._taps.append(fn)

    # -- execution ---------------------------------------------------------

    def run_periods(self, n: int) -> TickReport:
        report = TickReport()
        for _ in range(n):
            if not self._participants:
                raise MiddlewareError("no participants registered")
            k = self.period
            stats = PeriodStats(period=k)
            due = sorted(
                (p for p in self._participants.values() if p.due(k)),
                key=lambda p: p.pid)
            digest = hashlib.blake2b(digest_size=8)
            delivery_records = []
            self._running = True
            for part in due:
                inputs = self._frozen_inputs_for(part, k)
                stats.delivered += len(inputs)
                for env in inputs:
                    delivery_records.append((part.pid,) + env.sort_key())
                part.handle._frozen_inputs = inputs
                part.handle._in_step = True
                t0 = time.perf_counter_ns()
                try:
                    part.step(part.handle, k)
                except Exception as exc:  # noqa: BLE001 - contract: abort with period
                    part.handle._in_step = False
                    self._running = False
                    raise StepFailure(k, part.pid, exc) from exc
                wall = time.perf_counter_ns() - t0
                part.handle._in_step = False
                stats.wall_ns += wall
                if wall > part.every * self.config.period_ns:
                    stats.deadline_misses += 1
                    report.deadline_misses.append((k, part.pid))
            for rec in sorted(delivery_records):
                digest.update(repr(rec).encode())
            stats.delivery_digest = int.from_bytes(digest.digest(), "little")
            published = sorted(self._outbox, key=Envelope.sort_key)
            self._route(stats)
            self.period = k + 1
            for tap in self._taps:
                tap(k, published, stats)
            report.steps_executed += len(due)
            report.messages_published += stats.published
            report.messages_delivered += stats.delivered
            report.messages_dropped += stats.dropped
            report.per_period.append(stats)
        self._running = False
        return report

    def time_ns(self, period: int | None = None) -> int:
        return (self.period if period is None else period) * self.config.period_ns

    def pending_count(self) -> int:
        return sum(len(p.pending) for p in self._participants.values())
