"""Deterministic discrete-event engine with serialized point-to-point links.

Time is kept in integer nanoseconds. Events are ordered by ``(time, seq)``
where ``seq`` is a global insertion counter, so two runs of the same
configuration process events in exactly the same order.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, NamedTuple

log = logging.getLogger(__name__)

NS_PER_S = 1_000_000_000
DEFAULT_CONTROL_BYTES = 168
DEFAULT_MAX_EVENTS = 50_000_000


def seconds(value: float) -> int:
    """Convert seconds to integer nanoseconds (round half away from zero)."""
    ns = value * NS_PER_S
    return int(ns + 0.5) if ns >= 0 else -int(-ns + 0.5)


def to_seconds(ns: int) -> float:
    return ns / NS_PER_S


class SimError(Exception):
    """Base class for simulator errors."""


class RoutingError(SimError):
    pass


class SchedulingError(SimError):
    pass


class LivelockError(SimError):
    pass


class MessageKind:
    DATA = "data-tuple"
    CONTROL = "control"
    STATE = "state-chunk"

    ALL = (DATA, CONTROL, STATE)


@dataclass(slots=True)
class NetMessage:
    kind: str
    size: int
    payload: Any = None
    src: str = ""
    dst: str = ""

    def __post_init__(self) -> None:
        if self.kind not in MessageKind.ALL:
            raise ValueError(f"unknown message kind {self.kind!r}")
        if self.size < 0:
            raise ValueError("message size must be >= 0")

    @classmethod
    def control(cls, payload: Any = None, size: int = DEFAULT_CONTROL_BYTES) -> "NetMessage":
        return cls(MessageKind.CONTROL, size, payload)


@dataclass
class Link:
    """One direction of a point-to-point channel.

    Transmissions are serialized: a message starts transmitting only after
    the previous one on the same link has finished.
    """

    src: str
    dst: str
    bandwidth: int  # bits per second
    latency: int  # ns
    busy_until: int = 0
    down: tuple[tuple[int, int], ...] = ()
    bytes_sent: dict[str, int] = field(default_factory=dict)
    messages_sent: int = 0

    def __post_init__(self) -> None:
        if self.bandwidth <= 0:
            raise ValueError(f"link {self.src}->{self.dst}: bandwidth must be > 0")
        if self.latency < 0:
            raise ValueError(f"link {self.src}->{self.dst}: latency must be >= 0")
        self.bandwidth = int(self.bandwidth)

    def transmission_ns(self, size: int) -> int:
        return (size * 8 * NS_PER_S + self.bandwidth // 2) // self.bandwidth

    def is_down(self, time: int) -> bool:
        if not self.down:
            return False
        return any(lo <= time < hi for lo, hi in self.down)

    def transmit(self, size: int, send_time: int) -> int:
        """Reserve the link for ``size`` bytes and return the arrival time."""
        start = max(send_time, self.busy_until)
        done = start + self.transmission_ns(size)
        self.busy_until = done
        return done + self.latency


def deliver(msg: NetMessage, link: Link, send_time: int) -> int:
    """Arrival time of ``msg`` sent on ``link`` at ``send_time``.

    Updates the link's serialization state, so successive calls on one link
    model FIFO queueing.
    """
    arrival = link.transmit(msg.size, send_time)
    link.messages_sent += 1
    link.bytes_sent[msg.kind] = link.bytes_sent.get(msg.kind, 0) + msg.size
    return arrival


class Event(NamedTuple):
    time: int
    seq: int
    target: str
    payload: Any


class LogRecord(NamedTuple):
    time: int
    kind: str
    node: str
    data: dict


class Simulator:
    """Single-threaded event loop.

    Handlers are registered per target id; each receives the event payload.
    An append-only ``log`` collects domain records written via ``record``.
    """

    def __init__(self, max_events: int = DEFAULT_MAX_EVENTS, trace: bool = False):
        self.now = 0
        self._queue: list[Event] = []
        self._seq = 0
        self._handlers: dict[str, Callable[[Any], None]] = {}
        self.max_events = max_events
        self.events_processed = 0
        self.log: list[LogRecord] = []
        self.trace = trace
        self.event_trace: list[tuple[int, int, str, str]] = []

    def register(self, target: str, handler: Callable[[Any], None]) -> None:
        if target in self._handlers:
            raise SimError(f"duplicate handler for {target!r}")
        self._handlers[target] = handler

    def schedule(self, time: int, target: str, payload: Any) -> int:
        if time < self.now:
            raise SchedulingError(f"cannot schedule at {time} ns, now is {self.now} ns")
        if target not in self._handlers:
            raise RoutingError(f"no handler for target {target!r}")
        seq = self._seq
        self._seq += 1
        heapq.heappush(self._queue, Event(time, seq, target, payload))
        return seq

    def record(self, kind: str, node: str, **data: Any) -> None:
        self.log.append(LogRecord(self.now, kind, node, data))

    def pending(self) -> int:
        return len(self._queue)

    def step(self) -> bool:
        if not self._queue:
            return False
        ev = heapq.heappop(self._queue)
        self.now = ev.time
        self.events_processed += 1
        if self.events_processed > self.max_events:
            raise LivelockError(f"event limit {self.max_events} exceeded at t={ev.time} ns")
        if self.trace:
            self.event_trace.append((ev.time, ev.seq, ev.target, type(ev.payload).__name__))
        self._handlers[ev.target](ev.payload)
        return True

    def run_until_quiescent(self) -> int:
        while self.step():
            pass
        return self.now

    def run_until(self, time: int) -> int:
        while self._queue and self._queue[0].time <= time:
            self.step()
        self.now = max(self.now, time)
        return self.now


@dataclass
class NodeSpec:
    id: str
    role: str = "host"


class Network:
    """Directed links keyed by ``(src, dst)``; delivers messages as events."""

    def __init__(self, sim: Simulator, control_message_bytes: int = DEFAULT_CONTROL_BYTES):
        self.sim = sim
        self.links: dict[tuple[str, str], Link] = {}
        self.control_message_bytes = control_message_bytes
        self.dropped: list[NetMessage] = []
        self.sent_count = 0

    def add_link(
        self,
        src: str,
        dst: str,
        bandwidth_bps: float,
        latency_s: float,
        bidirectional: bool = True,
        down: Iterable[tuple[float, float]] = (),
    ) -> None:
        down_ns = tuple((seconds(a), seconds(b)) for a, b in down)
        pairs = [(src, dst), (dst, src)] if bidirectional else [(src, dst)]
        for a, b in pairs:
            self.links[(a, b)] = Link(a, b, int(bandwidth_bps), seconds(latency_s), down=down_ns)

    def link(self, src: str, dst: str) -> Link:
        try:
            return self.links[(src, dst)]
        except KeyError:
            raise RoutingError(f"no link {src}->{dst}") from None

    def send(self, src: str, dst: str, msg: NetMessage) -> int | None:
        """Send ``msg``; returns its arrival time, or None if the link dropped it."""
        link = self.link(src, dst)
        msg.src, msg.dst = src, dst
        self.sent_count += 1
        if link.is_down(self.sim.now):
            self.dropped.append(msg)
            self.sim.record("drop", src, dst=dst, msg_kind=msg.kind, size=msg.size)
            return None
        arrival = deliver(msg, link, self.sim.now)
        self.sim.schedule(arrival, dst, msg)
        return arrival
