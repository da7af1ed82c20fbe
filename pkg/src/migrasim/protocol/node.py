"""Node runtime: executes control task trees carried in stream messages.

Every node runs the same code; what a task does depends on what the node
holds. A node that produces or forwards a stream treats stream tasks as
routing changes; a node that runs the query treats them as changes to its
input handling. Tasks in one control message run in order, and a task that
waits (a nested ControlMessage awaiting acknowledgments, a state move
awaiting the load acknowledgment) suspends only that message's task list.

Nodes share no mutable state; they read the static deployment (query
catalog, topology, cost rates) from :class:`Cluster`.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Generator, Iterable

from ..simnet import NS_PER_S, MessageKind, NetMessage, Network, Simulator, seconds
from ..statemgmt import (
    FULL, IMMUTABLE, INCREMENTAL, Checkpoint, ConsistencyError, StateBlob, StateError,
    apply_blob, extract_incremental, extract_state, partition_state, state_bytes,
)
from ..streamcore import Operator, StreamRoute, Tuple, WindowAggregate, make_operator
from .tasks import MOVE_TASKS, Ref, Task, canonical_role

log = logging.getLogger(__name__)


class ProtocolError(Exception):
    pass


# -- messages ----------------------------------------------------------------


@dataclass(frozen=True)
class Migration:
    """Descriptor carried by every control message of one migration."""

    id: str
    query: str
    roles: dict[str, tuple[str, ...]]
    variant: str = "custom"
    track: str = "single"  # single | parallel
    handover: str | None = None  # None | "state" | "window"
    state_moves: tuple[str, ...] = ()  # moves the new host must load before it runs
    margin_ns: int | None = None
    phase: str = "migration"

    def role(self, name: str) -> tuple[str, ...]:
        r = canonical_role(name)
        if r in self.roles:
            return self.roles[r]
        return (name,)

    def one(self, name: str) -> str:
        nodes = self.role(name)
        if len(nodes) != 1:
            raise ProtocolError(f"role {name} resolves to {len(nodes)} nodes")
        return nodes[0]


@dataclass(frozen=True)
class Envelope:
    mig: Migration
    path: tuple[int, ...]
    tasks: tuple[Task, ...]
    sender: str
    fanout: int
    expected: int


@dataclass(frozen=True)
class Ack:
    mig_id: str
    path: tuple[Any, ...]
    sender: str


@dataclass(frozen=True)
class CloseMarker:
    stream: str
    query: str
    sender: str
    removal_ts: int | None
    mig_id: str


@dataclass(frozen=True)
class StateChunk:
    mig: Migration
    transfer: str
    move: str
    blob: StateBlob
    sender: str


@dataclass(frozen=True)
class Takeover:
    handover: int
    removal: int


@dataclass
class Waiter:
    remaining: int
    on_done: Callable[[], None] | None = None

    def hit(self) -> None:
        self.remaining -= 1
        if self.remaining == 0 and self.on_done is not None:
            cb, self.on_done = self.on_done, None
            cb()


@dataclass
class _Wake:
    waiter: Waiter


@dataclass
class _Call:
    fn: Callable[[], None]


@dataclass
class _Emit:
    pass


# -- static deployment -------------------------------------------------------


@dataclass
class QuerySpec:
    id: str
    config: dict
    producers: dict[str, str]  # input stream -> producing node
    sinks: tuple[str, ...]

    def make_operator(self) -> Operator:
        return make_operator(self.config)

    @property
    def input_streams(self) -> tuple[str, ...]:
        return tuple(self.producers)

    @property
    def upstream_nodes(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.producers.values())))


@dataclass
class Costs:
    extract_rate: float = 1e9  # bytes/s
    load_rate: float = 1e9
    max_chunk_bytes: int | None = None
    checkpoint_interval: int = 10 * NS_PER_S

    def extract_ns(self, nbytes: int) -> int:
        return seconds(nbytes / self.extract_rate) if self.extract_rate else 0

    def load_ns(self, nbytes: int) -> int:
        return seconds(nbytes / self.load_rate) if self.load_rate else 0


class Cluster:
    """Simulator, network, nodes and the read-only deployment they share."""

    def __init__(self, sim: Simulator, net: Network, queries: dict[str, QuerySpec],
                 costs: Costs | None = None):
        self.sim = sim
        self.net = net
        self.queries = queries
        self.costs = costs or Costs()
        self.nodes: dict[str, Node] = {}

    def add_node(self, node_id: str, role: str = "host") -> "Node":
        node = Node(self, node_id, role)
        self.nodes[node_id] = node
        return node

    @property
    def control_bytes(self) -> int:
        return self.net.control_message_bytes


# -- query runtime on a host ---------------------------------------------------


class QueryRuntime:
    """One query's operator on one node plus its input gating."""

    def __init__(self, node: "Node", spec: QuerySpec, op: Operator | None = None):
        self.node = node
        self.spec = spec
        self.op = op if op is not None else spec.make_operator()
        self.instantiated = op is not None
        self.awaiting: set[str] = set()
        self.loaded_moves: set[str] = set()
        self.stopped = False
        self.buffering = True
        self.buffer: deque[Tuple] = deque()
        self.enabled = False
        self.retired = False
        self.forward_to: str | None = None
        self.mig: Migration | None = None
        # handover gates
        self.accept_before: int | None = None  # old host: ignore inputs ts >= this
        self.output_from: int | None = None  # new host: outputs for inputs ts >= this
        self.fill_mode = False
        self.first_input_ts: int | None = None
        self.closes: set[str] = set()
        self.schedules: list[tuple[int, Task, Migration]] = []
        self.replicating_to: set[str] = set()
        self.dup_inputs = 0

    @property
    def sim(self) -> Simulator:
        return self.node.sim

    def try_enable(self) -> None:
        if self.enabled or self.retired:
            return
        if not self.instantiated or self.awaiting or self.stopped:
            return
        self.enabled = True
        self.node.sim.record("op_start", self.node.id, query=self.spec.id,
                             mig=self.mig.id if self.mig else None)
        while self.buffer and self.enabled:
            self._process(self.buffer.popleft())

    def retire(self, forward_to: str | None = None) -> None:
        if self.retired:
            return
        self.retired = True
        self.enabled = False
        self.forward_to = forward_to
        self.replicating_to.clear()
        self.node.sim.record("op_stop", self.node.id, query=self.spec.id,
                             mig=self.mig.id if self.mig else None)
        pending, self.buffer = self.buffer, deque()
        for t in pending:
            self.on_input(t, arrived=False)

    def on_input(self, t: Tuple, arrived: bool = True) -> None:
        node = self.node
        if arrived:
            node.sim.record("arrive", node.id, stream=t.stream, seq=t.seq)
        hops = node.routes.hops(t.stream)
        for hop in hops:
            node.send_data(hop, t)
        if self.retired:
            if self.forward_to is not None and self.forward_to not in hops:
                node.sim.record("forward", node.id, stream=t.stream, seq=t.seq, to=self.forward_to)
                node.send_data(self.forward_to, t)
            else:
                node.sim.record("discard", node.id, stream=t.stream, seq=t.seq)
            return
        if self.accept_before is not None and t.timestamp >= self.accept_before:
            node.sim.record("discard", node.id, stream=t.stream, seq=t.seq)
            return
        if not self.enabled:
            if self.stopped and not self.buffering:
                node.sim.record("discard", node.id, stream=t.stream, seq=t.seq)
            else:
                self.buffer.append(t)
            return
        self._process(t)

    def _fire_schedules(self, ts: int) -> None:
        due = [s for s in self.schedules if s[0] <= ts]
        if due:
            self.schedules = [s for s in self.schedules if s[0] > ts]
            for fire_ts, task, mig in due:
                self.node.fire_scheduled(task, mig)

    def _process(self, t: Tuple) -> None:
        op = self.op
        if t.seq <= op.applied_high.get(t.stream, -1):
            self.dup_inputs += 1
            self.node.sim.record("dup_input", self.node.id, stream=t.stream, seq=t.seq)
            return
        self._fire_schedules(t.timestamp)
        if self.first_input_ts is None:
            self.first_input_ts = t.timestamp
            if self.fill_mode and isinstance(op, WindowAggregate):
                op.emit_from = op.align_up(t.timestamp)
        outputs = op.process(t)
        counted = True
        gate = self.output_from
        if self.fill_mode and op.window_extent is not None and not isinstance(op, WindowAggregate):
            # window-recreation: outputs only once the retention window is refilled
            gate = self.first_input_ts + op.window_extent
        if gate is not None and not isinstance(op, WindowAggregate):
            if t.timestamp < gate:
                outputs = []
                counted = False
        if isinstance(op, WindowAggregate) and op.emit_from is not None:
            counted = t.timestamp >= op.emit_from
        self.node.sim.record("proc", self.node.id, stream=t.stream, seq=t.seq, counted=counted)
        self.emit(outputs)

    def emit(self, outputs: Iterable[Tuple]) -> None:
        for out in outputs:
            for sink in self.spec.sinks:
                self.node.send_data(sink, out)

    def on_close(self, marker: CloseMarker) -> None:
        self.closes.add(marker.sender)
        if set(self.spec.upstream_nodes) - self.closes:
            return
        if self.retired:
            return
        if marker.removal_ts is not None and isinstance(self.op, WindowAggregate) and self.enabled:
            self.emit(self.op.flush_to(marker.removal_ts))
        self.retire(forward_to=None)


# -- node ----------------------------------------------------------------------


class Node:
    def __init__(self, cluster: Cluster, node_id: str, role: str = "host"):
        self.cluster = cluster
        self.sim: Simulator = cluster.sim
        self.net: Network = cluster.net
        self.id = node_id
        self.role = role
        self.routes = StreamRoute()
        self.runtimes: dict[str, QueryRuntime] = {}
        self.standby: dict[str, Operator] = {}
        self.ckpt_sent: dict[tuple[str, str], Checkpoint] = {}
        # router state
        self.source: list[Tuple] = []
        self._src_idx = 0
        self.stopped_streams: set[str] = set()
        self.buffered_streams: set[str] = set()
        self.out_buffer: dict[str, deque[Tuple]] = {}
        self.router_schedules: list[tuple[int, Task, Migration, int]] = []
        self.removal_ts: dict[tuple[str, str], int] = {}
        # sink state
        self.seen_outputs: set[Any] = set()
        self.accepted: list[Tuple] = []
        self.duplicates_dropped = 0
        # protocol bookkeeping
        self._align: dict[tuple[str, tuple], list[str]] = {}
        self._acks: dict[tuple[str, tuple], Waiter] = {}
        self._takeover: dict[str, Takeover] = {}
        self._incoming: dict[str, list[StateChunk]] = {}
        self._load_queue: deque[tuple[StateChunk, list[StateBlob]]] = deque()
        self._loading = False
        self._transfers = 0
        self.sim.register(node_id, self.on_event)

    def __repr__(self) -> str:
        return f"Node({self.id!r})"

    # ---- plumbing

    def on_event(self, ev: Any) -> None:
        if isinstance(ev, NetMessage):
            self._on_message(ev)
        elif isinstance(ev, _Emit):
            self._emit_next()
        elif isinstance(ev, _Wake):
            ev.waiter.hit()
        elif isinstance(ev, _Call):
            ev.fn()
        else:
            raise ProtocolError(f"{self.id}: unknown event {ev!r}")

    def _on_message(self, msg: NetMessage) -> None:
        p = msg.payload
        if msg.kind == MessageKind.DATA:
            self.on_data(p)
        elif isinstance(p, Envelope):
            self._on_envelope(p)
        elif isinstance(p, Ack):
            self._on_ack(p)
        elif isinstance(p, CloseMarker):
            rt = self.runtimes.get(p.query)
            self.sim.record("close", self.id, stream=p.stream, sender=p.sender, mig=p.mig_id)
            if rt is not None:
                rt.on_close(p)
        elif isinstance(p, StateChunk):
            self._on_chunk(p)
        else:
            raise ProtocolError(f"{self.id}: unknown message {p!r}")

    def send_data(self, dst: str, t: Tuple) -> None:
        self.net.send(self.id, dst, NetMessage(MessageKind.DATA, t.wire_bytes, t))

    def send_control(self, dst: str, payload: Any, mig: Migration, counted: str) -> None:
        """``counted`` is "program" for program messages, "ack" for protocol overhead."""
        self.sim.record("ctrl_send", self.id, dst=dst, mig=mig.id, phase=mig.phase, cls=counted)
        self.net.send(self.id, dst, NetMessage(MessageKind.CONTROL, self.cluster.control_bytes,
                                               payload))

    def call_at(self, time: int, fn: Callable[[], None]) -> None:
        self.sim.schedule(time, self.id, _Call(fn))

    def sleep(self, ns: int) -> Waiter:
        w = Waiter(1)
        self.sim.schedule(self.sim.now + ns, self.id, _Wake(w))
        return w

    def spawn(self, gen: Generator[Waiter, None, None], on_error: Callable[[Exception], None]
              | None = None) -> None:
        def drive() -> None:
            while True:
                try:
                    w = next(gen)
                except StopIteration:
                    return
                except (ProtocolError, StateError) as exc:
                    if on_error is None:
                        raise
                    on_error(exc)
                    return
                if w.remaining > 0:
                    w.on_done = drive
                    return
        drive()

    # ---- sources and routing

    def set_source(self, tuples: list[Tuple]) -> None:
        self.source = tuples
        self._src_idx = 0
        if tuples:
            self.sim.schedule(tuples[0].timestamp, self.id, _Emit())

    def _emit_next(self) -> None:
        t = self.source[self._src_idx]
        self._src_idx += 1
        if self._src_idx < len(self.source):
            self.sim.schedule(self.source[self._src_idx].timestamp, self.id, _Emit())
        self.sim.record("emit", self.id, stream=t.stream, seq=t.seq)
        self.forward(t)

    def _fire_router_schedules(self, ts: int) -> None:
        due = [s for s in self.router_schedules if s[0] <= ts]
        if due:
            self.router_schedules = [s for s in self.router_schedules if s[0] > ts]
            for fire_ts, task, mig, _ in due:
                self.fire_scheduled(task, mig, fire_ts)

    def forward(self, t: Tuple) -> None:
        """Route a produced tuple, honouring stop/buffer state."""
        self._fire_router_schedules(t.timestamp)
        if t.stream in self.stopped_streams:
            if t.stream in self.buffered_streams:
                self.out_buffer.setdefault(t.stream, deque()).append(t)
            else:
                self.sim.record("discard", self.id, stream=t.stream, seq=t.seq)
            return
        hops = self.routes.hops(t.stream)
        if not hops:
            self.sim.record("unroutable", self.id, stream=t.stream, seq=t.seq)
            return
        if len(hops) > 1:
            self.sim.record("dup_route", self.id, stream=t.stream, seq=t.seq,
                            bytes=(len(hops) - 1) * t.wire_bytes)
        for hop in hops:
            self.send_data(hop, t)

    def on_data(self, t: Tuple) -> None:
        rt = self._runtime_for_stream(t.stream)
        if rt is not None:
            rt.on_input(t)
            return
        if self.role == "sink" or self._is_sink_for(t.stream):
            self.dedup_at_downstream(t)
            return
        if t.stream in self.routes:
            self.forward(t)
            return
        spec = self._query_for_stream(t.stream)
        if spec is not None:
            # data for a query this node does not run yet: hold it
            rt = self.runtimes[spec.id] = QueryRuntime(self, spec)
            rt.on_input(t)
            return
        self.sim.record("unroutable", self.id, stream=t.stream, seq=t.seq)

    def _query_for_stream(self, stream: str) -> QuerySpec | None:
        for spec in self.cluster.queries.values():
            if stream in spec.producers:
                return spec
        return None

    def _runtime_for_stream(self, stream: str) -> QueryRuntime | None:
        for rt in self.runtimes.values():
            if stream in rt.spec.producers:
                return rt
        return None

    def _is_sink_for(self, stream: str) -> bool:
        return any(self.id in q.sinks for q in self.cluster.queries.values())

    def dedup_at_downstream(self, t: Tuple) -> bool:
        """Accept the first occurrence of an output, drop later ones."""
        ident = (t.stream, t.lineage)
        if ident in self.seen_outputs:
            self.duplicates_dropped += 1
            self.sim.record("sink", self.id, lineage=t.lineage, accepted=False)
            return False
        self.seen_outputs.add(ident)
        self.accepted.append(t)
        self.sim.record("sink", self.id, lineage=t.lineage, accepted=True)
        return True

    # ---- hosting

    def host_query(self, spec: QuerySpec) -> QueryRuntime:
        rt = QueryRuntime(self, spec, spec.make_operator())
        self.runtimes[spec.id] = rt
        rt.try_enable()
        return rt

    def _runtime(self, query: str, create: bool = False) -> QueryRuntime:
        rt = self.runtimes.get(query)
        if rt is None:
            if not create:
                raise ProtocolError(f"{self.id}: query {query!r} not hosted here")
            rt = self.runtimes[query] = QueryRuntime(self, self.cluster.queries[query])
        return rt

    # ---- control messages

    def _on_envelope(self, env: Envelope) -> None:
        key = (env.mig.id, env.path)
        senders = self._align.setdefault(key, [])
        senders.append(env.sender)
        self.sim.record("ctrl_recv", self.id, sender=env.sender, mig=env.mig.id,
                        path=env.path, copies=len(senders), expected=env.expected)
        if len(senders) < env.expected:
            return
        del self._align[key]

        def body() -> Generator[Waiter, None, None]:
            yield from self.run_tasks(env.mig, env.tasks, env.path, env.fanout)
            for s in senders:
                self.send_control(s, Ack(env.mig.id, env.path, self.id), env.mig, "ack")

        self.spawn(body(), lambda exc: self.abort(env.mig, exc))

    def _on_ack(self, ack: Ack) -> None:
        w = self._acks.get((ack.mig_id, ack.path))
        if w is None:
            raise ProtocolError(f"{self.id}: unexpected ack {ack}")
        w.hit()
        if w.remaining <= 0:
            self._acks.pop((ack.mig_id, ack.path), None)

    def abort(self, mig: Migration, exc: Exception) -> None:
        log.warning("%s: migration %s aborted: %s", self.id, mig.id, exc)
        self.sim.record("abort", self.id, mig=mig.id, reason=str(exc))

    def run_program(self, mig: Migration, tasks: Iterable[Task]) -> None:
        """Execute top-level tasks here (normally at the coordinator)."""
        tasks = tuple(tasks)

        def body() -> Generator[Waiter, None, None]:
            self.sim.record("program_start", self.id, mig=mig.id, phase=mig.phase)
            yield from self.run_tasks(mig, tasks, (), 1)
            self.sim.record("program_done", self.id, mig=mig.id, phase=mig.phase)

        self.spawn(body(), lambda exc: self.abort(mig, exc))

    def run_tasks(self, mig: Migration, tasks: Iterable[Task], path: tuple, peers: int
                  ) -> Generator[Waiter, None, None]:
        for i, task in enumerate(tasks):
            yield from self.execute_task(mig, task, path + (i,), peers)

    def execute_task(self, mig: Migration, task: Task, path: tuple = (), peers: int = 1
                     ) -> Generator[Waiter, None, None]:
        """Run one task here; yields while waiting on other nodes."""
        self.sim.record("task", self.id, mig=mig.id, task=task.name)
        name = task.name
        if task.is_control:
            yield from self._control_message(mig, task, path, peers)
        elif name == "Schedule":
            self._schedule(mig, task)
        elif name in ("BufferStreams", "StopStreams", "StartStreams", "Resume"):
            self._stream_flow(mig, task)
        elif name == "Redirect":
            streams, old, new = task.args
            old, new = mig.one(old), mig.one(new)
            for s in self._streams(mig, streams):
                if not self.routes.redirect(s, old, new):
                    log.warning("%s: Redirect %s: %s is not a next hop", self.id, s, old)
                    self.sim.record("redirect_noop", self.id, stream=s, mig=mig.id)
        elif name == "AddNextHop":
            streams, dst = task.args
            for hop in mig.role(dst):
                for s in self._streams(mig, streams):
                    self.routes.add(s, hop)
        elif name == "RemoveNextHop":
            streams, dst = task.args
            for hop in mig.role(dst):
                for s in self._streams(mig, streams):
                    if self.routes.remove(s, hop):
                        ts = self.removal_ts.pop((s, hop), None)
                        self.send_control(hop, CloseMarker(s, mig.query, self.id, ts, mig.id),
                                          mig, "ack")
        elif name == "StartQuery":
            rt = self._runtime(mig.query, create=True)
            rt.mig = mig
            rt.instantiated = True
            rt.awaiting = {m for m in mig.state_moves} - rt.loaded_moves
            if mig.handover == "window":
                rt.fill_mode = True
            rt.try_enable()
        elif name == "RequestMigration":
            rt = self._runtime(mig.query, create=True)
            rt.mig = mig
            rt.instantiated = True
            rt.awaiting = {m for m in mig.state_moves} - rt.loaded_moves
            rt.try_enable()
        elif name == "StopQuery":
            rt = self._runtime(mig.query)
            rt.mig = rt.mig or mig
            nh = mig.roles.get("NH", (None,))[0]
            rt.retire(forward_to=nh if nh != self.id else None)
        elif name in MOVE_TASKS:
            yield from self._move(mig, task)
        elif name == "ReplicateCheckpoint":
            yield from self._replicate(mig, task)
        else:
            raise ProtocolError(f"unsupported task {name}")

    def _streams(self, mig: Migration, ref: Any) -> list[str]:
        spec = self.cluster.queries[mig.query]
        if isinstance(ref, Ref):
            if ref.name == "OutputStreams":
                return [spec.make_operator().output_stream]
            own = [s for s, p in spec.producers.items() if p == self.id]
            if own or canonical_role(ref.arg) == "US":
                return own
            return list(spec.input_streams)
        return [ref]

    def _control_message(self, mig: Migration, task: Task, path: tuple, peers: int
                         ) -> Generator[Waiter, None, None]:
        targets = mig.role(task.target)
        sub = task.subtasks
        rt = self.runtimes.get(mig.query)
        if rt is not None and rt.instantiated and not rt.retired:
            # only the node running the query can pick the takeover time
            sub = tuple(self._resolve_refs(mig, t) for t in sub)
        w = Waiter(len(targets))
        self._acks[(mig.id, path)] = w
        for dst in targets:
            env = Envelope(mig, path, sub, self.id, len(targets), peers)
            if dst == self.id:
                raise ProtocolError(f"{self.id}: ControlMessage addressed to itself")
            self.send_control(dst, env, mig, "program")
        yield w

    def _resolve_refs(self, mig: Migration, task: Task) -> Task:
        changed = False
        args = []
        for a in task.args:
            if isinstance(a, Ref) and a.name == "TakeoverTime" and a.value is None:
                a = replace(a, value=self.takeover_time(mig))
                changed = True
            elif isinstance(a, Task):
                b = self._resolve_refs(mig, a)
                changed |= b is not a
                a = b
            args.append(a)
        return Task(task.name, tuple(args)) if changed else task

    def takeover_time(self, mig: Migration) -> Takeover:
        """Handover timestamp chosen by the old host.

        now + expected state arrival (state-recreation only) + margin, aligned
        to the window slide for windowed operators.
        """
        if mig.id in self._takeover:
            return self._takeover[mig.id]
        rt = self._runtime(mig.query)
        op = rt.op
        nh = mig.one("NH")
        link = self.net.link(self.id, nh)
        ctrl = link.transmission_ns(self.cluster.control_bytes) + link.latency
        margin = mig.margin_ns if mig.margin_ns is not None else 2 * (2 * ctrl)
        est = 0
        if mig.handover == "window" and not isinstance(op, WindowAggregate):
            est = op.window_extent or 0
        elif mig.handover == "state":
            nbytes = state_bytes(op)
            costs = self.cluster.costs
            est = (link.transmission_ns(nbytes) + link.latency + costs.extract_ns(nbytes)
                   + costs.load_ns(nbytes) + 2 * ctrl)
        handover = max(self.sim.now, op.watermark) + est + margin
        removal = handover
        if isinstance(op, WindowAggregate):
            handover = op.align_up(handover)
            removal = handover + op.extent - op.slide
            op.emit_before = handover
        else:
            rt.accept_before = handover
        rt.mig = rt.mig or mig
        tk = Takeover(handover, removal)
        self._takeover[mig.id] = tk
        self.sim.record("takeover", self.id, mig=mig.id, handover=handover, removal=removal)
        return tk

    def _schedule(self, mig: Migration, task: Task) -> None:
        refs = [a for a in task.args if isinstance(a, Ref)]
        inner = [a for a in task.args if isinstance(a, Task)]
        if len(refs) != 1 or len(inner) != 1 or refs[0].value is None:
            raise ProtocolError("Schedule needs one task and a resolved TakeoverTime")
        tk: Takeover = refs[0].value
        inner_task = inner[0]
        fire = tk.removal if inner_task.name == "RemoveNextHop" else tk.handover
        self.sim.record("schedule", self.id, mig=mig.id, task=inner_task.name, at=fire)
        rt = self.runtimes.get(mig.query)
        if rt is not None and inner_task.name == "StartStreams":
            # outputs of inputs before the handover belong to the old host
            rt.mig = rt.mig or mig
            if isinstance(rt.op, WindowAggregate):
                rt.op.emit_from = tk.handover
            else:
                rt.output_from = tk.handover
            rt.schedules.append((fire, inner_task, mig))
        else:
            if inner_task.name == "RemoveNextHop":
                for s in self._streams(mig, inner_task.args[0]):
                    for hop in mig.role(inner_task.args[1]):
                        self.removal_ts[(s, hop)] = fire
            self.router_schedules.append((fire, inner_task, mig, fire))
        # timer fallback when no tuple crosses the timestamp
        self.call_at(max(fire, self.sim.now), lambda: self._fire_due(fire))

    def _fire_due(self, ts: int) -> None:
        self._fire_router_schedules(ts)
        for rt in self.runtimes.values():
            rt._fire_schedules(ts)

    def fire_scheduled(self, task: Task, mig: Migration, fire_ts: int | None = None) -> None:
        self.sim.record("schedule_fire", self.id, mig=mig.id, task=task.name)
        self.spawn(self.execute_task(mig, task), lambda exc: self.abort(mig, exc))

    def _stream_flow(self, mig: Migration, task: Task) -> None:
        refs = [a for a in task.args if isinstance(a, Ref)]
        names = [a for a in task.args if isinstance(a, str)]
        ref = refs[0] if refs else (names[-1] if names else None)
        if ref is None:
            raise ProtocolError(f"{task.name} needs streams")
        if isinstance(ref, Ref) and ref.name == "OutputStreams":
            # output gating is configured by the scheduled StartStreams
            return
        streams = self._streams(mig, ref)
        rt = self.runtimes.get(mig.query)
        produces = any(self.cluster.queries[mig.query].producers.get(s) == self.id
                       for s in streams)
        if produces:
            for s in streams:
                if task.name == "BufferStreams":
                    self.buffered_streams.add(s)
                elif task.name == "StopStreams":
                    self.stopped_streams.add(s)
                else:
                    self.stopped_streams.discard(s)
                    self.buffered_streams.discard(s)
                    pending = self.out_buffer.pop(s, deque())
                    for t in pending:
                        self.forward(t)
            return
        if rt is None:
            rt = self._runtime(mig.query, create=True)
        rt.mig = rt.mig or mig
        if task.name == "BufferStreams":
            rt.buffering = True
        elif task.name == "StopStreams":
            rt.stopped = True
        else:
            rt.stopped = False
            rt.try_enable()

    # ---- state movement

    def _next_transfer(self) -> str:
        self._transfers += 1
        return f"{self.id}#{self._transfers}"

    def _blob_for(self, mig: Migration, move: str, op: Operator, dst: str) -> StateBlob:
        ck = self.ckpt_sent.get((mig.query, dst))
        if move == "MoveState":
            return extract_state(op, mig.query, FULL)
        if move == "MoveImmutableState":
            if ck is not None:
                return extract_incremental(op, ck, mig.query)
            return extract_state(op, mig.query, IMMUTABLE)
        return extract_incremental(op, ck, mig.query)

    def _note_sent(self, query: str, dst: str, blob: StateBlob) -> None:
        if blob.is_base:
            self.ckpt_sent[(query, dst)] = Checkpoint(blob, replicated_on={dst})
        else:
            self.ckpt_sent[(query, dst)].add(blob)

    def _ship(self, mig: Migration, move: str, blob: StateBlob, dst: str,
              paused: bool = False) -> str:
        transfer = self._next_transfer()
        max_chunk = self.cluster.costs.max_chunk_bytes
        chunks = partition_state(blob, max_chunk) if max_chunk else [blob]
        self._note_sent(mig.query, dst, blob)
        for ch in chunks:
            self.sim.record("state_send", self.id, mig=mig.id, phase=mig.phase, move=move,
                            transfer=transfer, bytes=ch.bytes, dst=dst, paused=paused)
            self.net.send(self.id, dst, NetMessage(MessageKind.STATE, ch.bytes,
                                                   StateChunk(mig, transfer, move, ch, self.id)))
        return transfer

    def _move(self, mig: Migration, task: Task) -> Generator[Waiter, None, None]:
        move = task.name
        query, dst = task.args[0], task.args[1]
        query = mig.query if query == "query" else query
        dst = mig.one(dst)
        rt = self.runtimes.get(query)
        if rt is None or rt.retired:
            raise ProtocolError(f"{self.id}: {move}: query {query!r} not running here")
        rt.mig = rt.mig or mig
        pause = mig.track == "single" and move != "MoveImmutableState"
        if pause:
            rt.retire(forward_to=dst)
        blob = self._blob_for(mig, move, rt.op, dst)
        dur = self.cluster.costs.extract_ns(blob.bytes)
        self.sim.record("state_extract", self.id, mig=mig.id, phase=mig.phase, move=move,
                        bytes=blob.bytes, dur=dur)
        if dur:
            yield self.sleep(dur)
        transfer = self._ship(mig, move, blob, dst, paused=pause)
        w = Waiter(1)
        self._acks[(mig.id, ("load", transfer))] = w
        yield w

    def _replicate(self, mig: Migration, task: Task) -> Generator[Waiter, None, None]:
        dst = mig.one(task.args[0])
        rt = self.runtimes.get(mig.query)
        if rt is None or rt.retired:
            raise ProtocolError(f"{self.id}: ReplicateCheckpoint: query not running here")
        rt.replicating_to.add(dst)
        rep = replace(mig, phase="replication" if mig.phase == "bootstrap" else mig.phase)
        transfer = yield from self._replicate_once(rep, rt, dst)
        w = Waiter(1)
        self._acks[(rep.id, ("load", transfer))] = w
        yield w
        interval = self.cluster.costs.checkpoint_interval
        if interval > 0:
            self.call_at(self.sim.now + interval, lambda: self._periodic(rep, rt, dst))

    def _replicate_once(self, mig: Migration, rt: QueryRuntime, dst: str
                        ) -> Generator[Waiter, None, str]:
        ck = self.ckpt_sent.get((mig.query, dst))
        if ck is None:
            blob = extract_state(rt.op, mig.query, FULL)
        else:
            blob = extract_incremental(rt.op, ck, mig.query)
        dur = self.cluster.costs.extract_ns(blob.bytes)
        self.sim.record("state_extract", self.id, mig=mig.id, phase=mig.phase,
                        move="ReplicateCheckpoint", bytes=blob.bytes, dur=dur)
        # the snapshot is taken now; extraction time delays only the send
        self._note_sent(mig.query, dst, blob)
        if dur:
            yield self.sleep(dur)
        transfer = self._next_transfer()
        self.sim.record("state_send", self.id, mig=mig.id, phase=mig.phase,
                        move="ReplicateCheckpoint", transfer=transfer, bytes=blob.bytes, dst=dst)
        self.net.send(self.id, dst, NetMessage(
            MessageKind.STATE, blob.bytes,
            StateChunk(mig, transfer, "ReplicateCheckpoint", blob, self.id)))
        return transfer

    def _periodic(self, mig: Migration, rt: QueryRuntime, dst: str) -> None:
        if rt.retired or dst not in rt.replicating_to or self.sim.pending() == 0:
            return
        interval = self.cluster.costs.checkpoint_interval

        def body() -> Generator[Waiter, None, None]:
            transfer = yield from self._replicate_once(mig, rt, dst)
            self._acks[(mig.id, ("load", transfer))] = Waiter(1)

        self.spawn(body(), lambda exc: self.abort(mig, exc))
        self.call_at(self.sim.now + interval, lambda: self._periodic(mig, rt, dst))

    def _on_chunk(self, ch: StateChunk) -> None:
        parts = self._incoming.setdefault(ch.transfer, [])
        parts.append(ch)
        if len(parts) < ch.blob.chunk_count:
            return
        del self._incoming[ch.transfer]
        self.sim.record("state_recv", self.id, mig=ch.mig.id, phase=ch.mig.phase, move=ch.move,
                        transfer=ch.transfer, bytes=sum(p.blob.bytes for p in parts))
        self._load_queue.append((ch, [p.blob for p in parts]))
        if not self._loading:
            self._loading = True
            self.spawn(self._loader(), lambda exc: self._load_failed(exc))

    def _load_failed(self, exc: Exception) -> None:
        self._loading = False
        ch, _ = self._load_queue.popleft() if self._load_queue else (None, None)
        if ch is not None:
            self.abort(ch.mig, exc)

    def _loader(self) -> Generator[Waiter, None, None]:
        while self._load_queue:
            ch, blobs = self._load_queue[0]
            nbytes = sum(b.bytes for b in blobs)
            dur = self.cluster.costs.load_ns(nbytes)
            if dur:
                yield self.sleep(dur)
            self._install(ch, blobs)
            self.sim.record("state_load", self.id, mig=ch.mig.id, phase=ch.mig.phase,
                            move=ch.move, transfer=ch.transfer, bytes=nbytes, dur=dur)
            self._load_queue.popleft()
            self.send_control(ch.sender, Ack(ch.mig.id, ("load", ch.transfer), self.id),
                              ch.mig, "ack")
        self._loading = False

    def _install(self, ch: StateChunk, blobs: list[StateBlob]) -> None:
        query = ch.mig.query
        spec = self.cluster.queries[query]
        if ch.move == "ReplicateCheckpoint" or ch.move == "MoveImmutableState":
            op = self.standby.get(query)
            if op is None or blobs[0].is_base:
                op = spec.make_operator()
                self.standby[query] = op
            apply_blob(op, blobs)
            if ch.move == "MoveImmutableState":
                self._final_move(ch, op)
            return
        if ch.move == "MoveState":
            op = spec.make_operator()
            apply_blob(op, blobs)
        else:
            op = self.standby.get(query)
            if op is None:
                raise ConsistencyError(f"{self.id}: increment for {query!r} without a base")
            apply_blob(op, blobs)
        self._final_move(ch, op)

    def _final_move(self, ch: StateChunk, op: Operator) -> None:
        if ch.move not in ch.mig.state_moves:
            return
        rt = self._runtime(ch.mig.query, create=True)
        rt.mig = rt.mig or ch.mig
        rt.instantiated = True
        rt.loaded_moves.add(ch.move)
        rt.awaiting.discard(ch.move)
        if isinstance(op, WindowAggregate) and isinstance(rt.op, WindowAggregate):
            # keep handover gates configured before the state arrived
            op.emit_from, op.emit_before = rt.op.emit_from, rt.op.emit_before
        if not rt.awaiting:
            rt.op = op
            self.standby.pop(ch.mig.query, None)
            if ch.mig.track == "single":
                rt.stopped = False
            rt.try_enable()
        else:
            rt.op = op
