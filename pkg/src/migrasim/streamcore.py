"""Minimal stream engine: tuples, routing tables and operators.

Operators keep their state as a collection of stored input tuples so that
state extraction, incremental checkpoints and loading can all be expressed
as operations over tuples (see :mod:`migrasim.statemgmt`).
"""

from __future__ import annotations

import heapq
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Iterable

from .simnet import MessageKind, NetMessage

log = logging.getLogger(__name__)

RECORD_HEADER_BYTES = 32

PERSON = "person"
AUCTION = "auction"


class StreamError(Exception):
    pass


class WatermarkError(StreamError):
    pass


@dataclass(frozen=True, slots=True)
class Tuple:
    """A data record. ``timestamp`` is event time in ns.

    ``lineage`` identifies an output by the inputs that caused it; it is the
    key used for duplicate filtering and for comparing output multisets.
    """

    stream: str
    key: int
    timestamp: int
    seq: int
    payload_bytes: int = 0
    lineage: Any = None

    @property
    def wire_bytes(self) -> int:
        return self.payload_bytes + RECORD_HEADER_BYTES

    @property
    def ident(self) -> tuple[str, int]:
        return (self.stream, self.seq)


class StreamRoute:
    """stream-id -> ordered next hops, without duplicates."""

    def __init__(self, routes: dict[str, Iterable[str]] | None = None):
        self._routes: dict[str, list[str]] = {}
        for stream, hops in (routes or {}).items():
            for hop in hops:
                self.add(stream, hop)

    def __contains__(self, stream: str) -> bool:
        return stream in self._routes

    def hops(self, stream: str) -> tuple[str, ...]:
        return tuple(self._routes.get(stream, ()))

    def streams(self) -> list[str]:
        return list(self._routes)

    def add(self, stream: str, hop: str) -> bool:
        hops = self._routes.setdefault(stream, [])
        if hop in hops:
            return False
        hops.append(hop)
        return True

    def remove(self, stream: str, hop: str) -> bool:
        hops = self._routes.get(stream)
        if not hops or hop not in hops:
            return False
        hops.remove(hop)
        return True

    def redirect(self, stream: str, old: str, new: str) -> bool:
        """Swap ``old`` for ``new`` in place. Returns False if ``old`` is absent."""
        hops = self._routes.get(stream)
        if not hops or old not in hops:
            return False
        idx = hops.index(old)
        if new in hops:
            hops.pop(idx)
        else:
            hops[idx] = new
        return True

    def as_dict(self) -> dict[str, list[str]]:
        return {k: list(v) for k, v in self._routes.items()}


def route(t: Tuple, routes: StreamRoute) -> list[tuple[str, NetMessage]]:
    """One data message per next hop of ``t.stream``.

    An unknown stream or an empty hop set yields no messages; callers count
    such tuples as dropped.
    """
    if t.stream not in routes:
        log.warning("unroutable tuple on stream %s (seq %d)", t.stream, t.seq)
        return []
    return [(hop, NetMessage(MessageKind.DATA, t.wire_bytes, t)) for hop in routes.hops(t.stream)]


# -- operators ---------------------------------------------------------------


class Operator:
    """Shared bookkeeping: watermark, per-stream progress, selectivity counters."""

    kind = "operator"
    stateful = True
    output_stream = "out"

    def __init__(self, output_bytes: int = 64):
        self.output_bytes = output_bytes
        self.watermark = 0
        self.applied_high: dict[str, int] = {}
        self.applied_low: dict[str, int] = {}
        self.inputs = 0
        self.outputs = 0
        self._out_seq = 0

    @property
    def input_streams(self) -> tuple[str, ...]:
        raise NotImplementedError

    @property
    def window_extent(self) -> int | None:
        """Extent in ns of the state's time horizon, or None if unbounded."""
        return None

    @property
    def window_slide(self) -> int | None:
        return None

    def selectivity(self) -> float:
        return self.outputs / self.inputs if self.inputs else 0.0

    def _note_input(self, t: Tuple) -> None:
        if t.stream not in self.input_streams:
            raise StreamError(f"{self.kind}: unexpected stream {t.stream!r}")
        self.inputs += 1
        self.applied_high[t.stream] = t.seq
        self.applied_low.setdefault(t.stream, t.seq)
        if t.timestamp > self.watermark:
            self.watermark = t.timestamp

    def _emit(self, key: int, timestamp: int, lineage: Any) -> Tuple:
        out = Tuple(self.output_stream, key, timestamp, self._out_seq, self.output_bytes, lineage)
        self._out_seq += 1
        self.outputs += 1
        return out

    def process(self, t: Tuple) -> list[Tuple]:
        raise NotImplementedError

    # state-as-tuples interface used by statemgmt
    def stored_tuples(self) -> list[Tuple]:
        return []

    def evict_horizon(self) -> int | None:
        """Stored tuples with timestamp below this are gone for good."""
        return None

    def restore(self, tuples: Iterable[Tuple], evict_before: int | None) -> None:
        """Add ``tuples`` to the stored state, then evict by ``evict_before``."""

    def clear(self) -> None:
        self.watermark = 0
        self.applied_high.clear()
        self.applied_low.clear()


class JoinOperator(Operator):
    """Person ⋈ Auction on person.id = auction.seller.

    Auctions are stored per seller; a person emits one output per stored
    auction of that seller, in stored order. Persons are not stored. With
    ``retention`` set, auctions older than ``watermark - retention`` are
    evicted.
    """

    kind = "join"
    output_stream = "join_out"

    def __init__(self, output_bytes: int = 64, retention: int | None = None):
        super().__init__(output_bytes)
        self.retention = retention
        self.state: dict[int, list[Tuple]] = defaultdict(list)
        self._by_time: list[tuple[int, int, int]] = []  # (timestamp, seq, key)

    @property
    def input_streams(self) -> tuple[str, ...]:
        return (PERSON, AUCTION)

    @property
    def window_extent(self) -> int | None:
        return self.retention

    def process(self, t: Tuple) -> list[Tuple]:
        self._note_input(t)
        if t.stream == AUCTION:
            self.state[t.key].append(t)
            if self.retention is not None:
                heapq.heappush(self._by_time, (t.timestamp, t.seq, t.key))
            self._evict()
            return []
        self._evict()
        return [self._emit(t.key, t.timestamp, (t.seq, a.seq)) for a in self.state.get(t.key, ())]

    def _evict(self) -> None:
        horizon = self.evict_horizon()
        if horizon is None:
            return
        while self._by_time and self._by_time[0][0] < horizon:
            _, seq, key = heapq.heappop(self._by_time)
            kept = [a for a in self.state.get(key, ()) if a.seq != seq]
            if kept:
                self.state[key] = kept
            else:
                self.state.pop(key, None)

    def evict_horizon(self) -> int | None:
        if self.retention is None:
            return None
        return self.watermark - self.retention

    def stored_tuples(self) -> list[Tuple]:
        return [a for key in self.state for a in self.state[key]]

    def restore(self, tuples: Iterable[Tuple], evict_before: int | None) -> None:
        touched = set()
        for a in tuples:
            if evict_before is not None and a.timestamp < evict_before:
                continue
            self.state[a.key].append(a)
            touched.add(a.key)
            if self.retention is not None:
                heapq.heappush(self._by_time, (a.timestamp, a.seq, a.key))
        for key in touched:
            self.state[key].sort(key=lambda a: a.seq)
        if evict_before is not None:
            for key in list(self.state):
                kept = [a for a in self.state[key] if a.timestamp >= evict_before]
                if kept:
                    self.state[key] = kept
                else:
                    del self.state[key]
            self._by_time = [e for e in self._by_time if e[0] >= evict_before]
            heapq.heapify(self._by_time)

    def clear(self) -> None:
        super().clear()
        self.state.clear()
        self._by_time.clear()


class FilterOperator(Operator):
    """Stateless: passes tuples whose ``key % modulus`` is in ``keep``."""

    kind = "filter"
    stateful = False
    output_stream = "filter_out"

    def __init__(self, stream: str = AUCTION, modulus: int = 1, keep: Iterable[int] = (0,),
                 output_bytes: int = 64):
        super().__init__(output_bytes)
        self.stream = stream
        self.modulus = modulus
        self.keep = frozenset(keep)

    @property
    def input_streams(self) -> tuple[str, ...]:
        return (self.stream,)

    def process(self, t: Tuple) -> list[Tuple]:
        self._note_input(t)
        if t.key % self.modulus in self.keep:
            return [self._emit(t.key, t.timestamp, (t.stream, t.seq))]
        return []


@dataclass
class Aggregate:
    key: int
    window_start: int
    window_end: int
    count: int
    payload_bytes: int


class WindowAggregate(Operator):
    """Per-key count and byte sum over tumbling or sliding windows.

    Windows start at multiples of ``slide`` and span ``extent``. A window is
    emitted once the watermark reaches its end. ``emit_range`` restricts
    which window starts may be emitted (used during handovers).
    """

    kind = "aggregate"
    output_stream = "agg_out"

    def __init__(self, extent: int, slide: int | None = None, stream: str = AUCTION,
                 output_bytes: int = 64):
        super().__init__(output_bytes)
        if extent <= 0:
            raise ValueError("window extent must be > 0")
        self.extent = extent
        self.slide = slide or extent
        if self.slide <= 0 or self.slide > self.extent:
            raise ValueError("window slide must be in (0, extent]")
        self.stream = stream
        self.buffer: list[Tuple] = []
        self.emitted_until = 0  # watermark up to which windows were closed
        self.emit_from: int | None = None
        self.emit_before: int | None = None

    @property
    def input_streams(self) -> tuple[str, ...]:
        return (self.stream,)

    @property
    def window_extent(self) -> int | None:
        return self.extent

    @property
    def window_slide(self) -> int | None:
        return self.slide

    def windows_of(self, ts: int) -> range:
        """Start times of every window containing ``ts``."""
        last = ts - ts % self.slide
        first = max(0, self.align_up(ts - self.extent + 1))
        return range(first, last + 1, self.slide)

    def align_up(self, ts: int) -> int:
        return -(-ts // self.slide) * self.slide

    def insert(self, t: Tuple) -> None:
        self._note_input(t)
        if t.timestamp + self.extent <= self.emitted_until:
            log.debug("late tuple %s dropped", t.ident)
            return
        self.buffer.append(t)

    def process(self, t: Tuple) -> list[Tuple]:
        self.insert(t)
        return self._outputs(self.advance_window(self.watermark))

    def _outputs(self, aggs: list[Aggregate]) -> list[Tuple]:
        return [self._emit(a.key, a.window_end, (a.key, a.window_start)) for a in aggs]

    def flush_to(self, watermark: int) -> list[Tuple]:
        """Advance to ``watermark`` and return emitted output tuples."""
        if watermark > self.watermark:
            self.watermark = watermark
        return self._outputs(self.advance_window(self.watermark))

    def advance_window(self, watermark: int) -> list[Aggregate]:
        if watermark < self.emitted_until:
            raise WatermarkError(f"watermark regressed: {watermark} < {self.emitted_until}")
        prev = self.emitted_until
        self.emitted_until = watermark
        # window ends are k * slide + extent; nothing to do unless one is crossed
        k = max(0, (prev - self.extent) // self.slide + 1)
        if k * self.slide + self.extent > watermark:
            return []
        closing: dict[int, dict[int, list[int]]] = defaultdict(dict)
        for t in self.buffer:
            for ws in self.windows_of(t.timestamp):
                we = ws + self.extent
                if prev < we <= watermark:
                    acc = closing[ws].setdefault(t.key, [0, 0])
                    acc[0] += 1
                    acc[1] += t.payload_bytes
        out = []
        for ws in sorted(closing):
            if self.emit_from is not None and ws < self.emit_from:
                continue
            if self.emit_before is not None and ws >= self.emit_before:
                continue
            for key in sorted(closing[ws]):
                count, nbytes = closing[ws][key]
                out.append(Aggregate(key, ws, ws + self.extent, count, nbytes))
        self._evict()
        return out

    def evict_horizon(self) -> int | None:
        # oldest window that can still close
        return self.emitted_until - self.extent + 1 if self.emitted_until else None

    def _evict(self) -> None:
        horizon = self.evict_horizon()
        if horizon is not None:
            self.buffer = [t for t in self.buffer if t.timestamp >= horizon]

    def stored_tuples(self) -> list[Tuple]:
        return list(self.buffer)

    def restore(self, tuples: Iterable[Tuple], evict_before: int | None) -> None:
        self.buffer.extend(tuples)
        self.buffer.sort(key=lambda t: (t.timestamp, t.stream, t.seq))
        if evict_before is not None:
            self.buffer = [t for t in self.buffer if t.timestamp >= evict_before]

    def clear(self) -> None:
        super().clear()
        self.buffer.clear()
        self.emitted_until = 0


def make_operator(spec: dict) -> Operator:
    """Build an operator from the ``query`` section of a scenario."""
    from .simnet import seconds

    kind = spec.get("kind", "join")
    out_bytes = spec.get("output_bytes", 64)
    if kind == "join":
        retention = spec.get("retention_s")
        return JoinOperator(out_bytes, seconds(retention) if retention is not None else None)
    if kind == "aggregate":
        w = spec.get("window", {})
        extent = seconds(w.get("extent_s", 10.0))
        slide = w.get("slide_s")
        if w.get("kind", "tumbling") == "tumbling":
            slide = None
        return WindowAggregate(extent, seconds(slide) if slide else None,
                               spec.get("stream", AUCTION), out_bytes)
    if kind == "filter":
        return FilterOperator(spec.get("stream", AUCTION), spec.get("modulus", 1),
                              spec.get("keep", [0]), out_bytes)
    raise StreamError(f"unknown operator kind {kind!r}")
