"""The seven built-in migration algorithms and the simulation wiring.

Each variant generates a control-task program in the protocol vocabulary.
``simulate`` builds a cluster from a scenario, runs the workload, and
injects the program at the trigger time.
"""

from __future__ import annotations

import enum
import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Any

from .metrics import MetricsRecord, measure
from .protocol.node import Cluster, Costs, Migration, Node, ProtocolError, QuerySpec
from .protocol.tasks import (
    ControlMessage, OutputStreams, Streams, T, TakeoverTime, Task, program_from_json,
)
from .scenario import DEFAULT_LINK
from .simnet import DEFAULT_CONTROL_BYTES, Network, Simulator, seconds
from .streamcore import make_operator
from .workload import by_producer, from_dict

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Taxonomy:
    track: str  # single | parallel
    moves_state: bool
    movement: str | None  # direct | None
    granularity: str | None  # all-at-once | partial | None
    dcr: bool
    listing: str


class AlgorithmVariant(enum.Enum):
    PauseDrainResume = Taxonomy("single", False, None, None, False, "pause-drain-resume")
    SingleTrackAllAtOnce = Taxonomy("single", True, "direct", "all-at-once", False, "6")
    SingleTrackPartial = Taxonomy("single", True, "direct", "partial", False, "7")
    CheckpointAssistedSingleTrack = Taxonomy("single", True, "direct", "partial", True, "4")
    WindowRecreation = Taxonomy("parallel", False, None, None, False, "2")
    StateRecreation = Taxonomy("parallel", True, "direct", "all-at-once", False, "3")
    CheckpointAssistedParallelTrack = Taxonomy("parallel", True, "direct", "partial", True, "5")

    @property
    def taxonomy(self) -> Taxonomy:
        return self.value

    @property
    def kebab(self) -> str:
        out = "".join("-" + c.lower() if c.isupper() else c for c in self.name)
        return out.lstrip("-")

    @classmethod
    def parse(cls, name: str) -> "AlgorithmVariant":
        for v in cls:
            if name in (v.name, v.kebab):
                return v
        aliases = {"all-at-once": cls.SingleTrackAllAtOnce, "partial": cls.SingleTrackPartial}
        if name in aliases:
            return aliases[name]
        raise ValueError(f"unknown variant {name!r}; expected one of "
                         + ", ".join(v.name for v in cls))


class VariantRejected(ValueError):
    pass


@dataclass
class MigrationRequest:
    query: str
    old_host: str
    new_host: str
    variant: AlgorithmVariant
    trigger_s: float = 1.0
    coordinator: str = "L"
    buffer_location: str | None = None
    takeover_margin_s: float | None = None
    allow_inconsistency: bool = False
    dcr: bool = False  # checkpoints already replicated to the new host

    def __post_init__(self) -> None:
        if self.old_host == self.new_host:
            raise ValueError("old and new host must differ")


@dataclass
class Program:
    variant: AlgorithmVariant | None
    migration: list[Task]
    bootstrap: list[Task] = field(default_factory=list)
    state_moves: tuple[str, ...] = ()
    track: str = "single"
    handover: str | None = None

    @property
    def label(self) -> str:
        if self.variant is None:
            return "custom"
        if self.variant.taxonomy.dcr and not self.bootstrap:
            return f"{self.variant.name} (no-DCR)"
        return self.variant.name


def _bootstrap() -> list[Task]:
    return [ControlMessage("OH", T("ReplicateCheckpoint", "NH"))]


def build_program(req: MigrationRequest, query_config: dict | None = None) -> Program:
    """Control program for ``req``; rejects variants that would lose state."""
    v = req.variant
    q = "query"
    op = make_operator(query_config or {"kind": "join"})
    if not req.allow_inconsistency:
        if v is AlgorithmVariant.PauseDrainResume and op.stateful:
            raise VariantRejected("PauseDrainResume needs a stateless operator "
                                  "(or allow_inconsistency)")
        if v is AlgorithmVariant.WindowRecreation and op.stateful and op.window_extent is None:
            raise VariantRejected("WindowRecreation needs a finite window extent "
                                  "(or allow_inconsistency)")
    S = Streams(q)
    if v is AlgorithmVariant.PauseDrainResume:
        tasks = [ControlMessage("OH",
                                ControlMessage("NH", T("StartQuery", q)),
                                ControlMessage("Upstream", T("Redirect", S, "OH", "NH")),
                                T("StopQuery", q))]
        return Program(v, tasks)
    if v is AlgorithmVariant.SingleTrackAllAtOnce:
        if req.buffer_location == "upstream":
            tasks = [ControlMessage("OH", ControlMessage(
                "Upstream",
                T("BufferStreams", S), T("StopStreams", S), T("Redirect", S, "OH", "NH"),
                ControlMessage("OH", T("MoveState", q, "NH")),
                T("Resume", S)))]
        else:
            tasks = [ControlMessage(
                "OH",
                ControlMessage("NH", T("RequestMigration", q), T("BufferStreams", S),
                               T("StopStreams", S)),
                ControlMessage("Upstream", T("Redirect", S, "OH", "NH")),
                T("MoveState", q, "NH"),
                T("AddNextHop", S, "NH"))]
        return Program(v, tasks, state_moves=("MoveState",))
    if v is AlgorithmVariant.SingleTrackPartial:
        tasks = [ControlMessage(
            "OH",
            ControlMessage("NH", T("RequestMigration", q), T("BufferStreams", S),
                           T("StopStreams", S)),
            T("MoveImmutableState", q, "NH"),
            ControlMessage("Upstream", T("Redirect", S, "OH", "NH")),
            T("MoveIncrementalState", q, "NH"),
            T("AddNextHop", S, "NH"))]
        return Program(v, tasks, state_moves=("MoveImmutableState", "MoveIncrementalState"))
    if v is AlgorithmVariant.CheckpointAssistedSingleTrack:
        tasks = [ControlMessage(
            "Upstream",
            ControlMessage("NH", T("BufferStreams", "NH", S), T("StopStreams", "NH", S)),
            T("Redirect", S, "OH", "NH"),
            ControlMessage("OH", T("MoveIncrementalState", q, "NH"),
                           ControlMessage("NH", T("StartStreams", S))))]
        boot = _bootstrap()
        if not req.dcr:
            return Program(v, boot + tasks, [], ("MoveIncrementalState",))
        return Program(v, tasks, boot, ("MoveIncrementalState",))
    if v is AlgorithmVariant.WindowRecreation:
        tasks = [ControlMessage(
            "Upstream",
            ControlMessage("NH", T("StartQuery", q)),
            ControlMessage("OH", ControlMessage(
                "Upstream",
                T("Schedule", T("RemoveNextHop", S, "OH"), TakeoverTime(q)),
                T("AddNextHop", Streams("Upstream"), "NH"))))]
        return Program(v, tasks, track="parallel", handover="window")
    if v is AlgorithmVariant.StateRecreation:
        tasks = [ControlMessage("Upstream", ControlMessage(
            "OH",
            ControlMessage("NH", T("StopStreams", OutputStreams(q)), T("StartQuery", q),
                           T("Schedule", TakeoverTime(q), T("StartStreams", S))),
            ControlMessage("Upstream",
                           T("Schedule", T("RemoveNextHop", S, "OH"), TakeoverTime(q)),
                           T("AddNextHop", Streams("Upstream"), "NH")),
            T("MoveState", q, "NH")))]
        return Program(v, tasks, state_moves=("MoveState",), track="parallel",
                       handover="state")
    if v is AlgorithmVariant.CheckpointAssistedParallelTrack:
        tasks = [ControlMessage("US", T("AddNextHop", S, "NH"),
                                ControlMessage("OH", T("MoveImmutableState", q, "NH")),
                                T("RemoveNextHop", S, "OH")),
                 ControlMessage("OH", T("StopQuery", q))]
        boot = _bootstrap()
        if not req.dcr:
            return Program(v, boot + tasks, [], ("MoveImmutableState",), track="parallel")
        return Program(v, tasks, boot, ("MoveImmutableState",), track="parallel")
    raise ValueError(f"unsupported variant {v}")


# -- simulation wiring ---------------------------------------------------------

_mig_ids = itertools.count(1)


@dataclass
class RunResult:
    doc: dict
    sim: Simulator
    cluster: Cluster
    spec: QuerySpec
    migration: Migration | None = None
    program: Program | None = None
    bootstrap_mig: Migration | None = None

    @property
    def log(self):
        return self.sim.log

    def sink_outputs(self) -> list:
        return [t for s in self.spec.sinks for t in self.cluster.nodes[s].accepted]


def _coordinator(doc: dict) -> str:
    m = doc.get("migration") or {}
    if "coordinator" in m:
        return m["coordinator"]
    for n in doc["topology"]["nodes"]:
        if n.get("role") == "coordinator":
            return n["id"]
    return "coordinator"


def build_cluster(doc: dict) -> tuple[Cluster, QuerySpec]:
    topo = doc["topology"]
    sim = Simulator(max_events=doc.get("run", {}).get("max_events", 50_000_000))
    net = Network(sim, topo.get("control_message_bytes", DEFAULT_CONTROL_BYTES))
    ck = doc.get("checkpoint", {})
    costs_doc = doc.get("costs", {})
    costs = Costs(
        extract_rate=costs_doc.get("extract_rate_Bps", 1e9),
        load_rate=costs_doc.get("load_rate_Bps", 1e9),
        max_chunk_bytes=ck.get("max_chunk_bytes"),
        checkpoint_interval=seconds(ck.get("interval_s", 10.0)) if "replicate_to" in ck else 0,
    )
    workload = from_dict(doc["workload"], doc.get("seed", 0))
    qdoc = doc["query"]
    op = make_operator(qdoc)
    producers = {s.name: s.producer for s in workload.streams if s.name in op.input_streams}
    spec = QuerySpec(qdoc.get("id", "q"), qdoc, producers, tuple(qdoc["sinks"]))
    cluster = Cluster(sim, net, {spec.id: spec}, costs)

    roles = {n["id"]: n.get("role", "host") for n in topo["nodes"]}
    coord = _coordinator(doc)
    roles.setdefault(coord, "coordinator")
    for nid, role in roles.items():
        cluster.add_node(nid, role)
    dl = {**DEFAULT_LINK, **topo.get("default_link", {})}
    for link in topo.get("links", []):
        net.add_link(link["src"], link["dst"], link.get("bandwidth_bps", dl["bandwidth_bps"]),
                     link.get("latency_s", dl["latency_s"]), link.get("bidirectional", True),
                     link.get("down", ()))
    ids = list(roles)
    for a in ids:
        for b in ids:
            if a != b and (a, b) not in net.links:
                net.add_link(a, b, dl["bandwidth_bps"], dl["latency_s"], bidirectional=False)

    host = cluster.nodes[qdoc["host"]]
    host.host_query(spec)
    for node_id, tuples in by_producer(workload).items():
        node = cluster.nodes[node_id]
        for stream in {t.stream for t in tuples}:
            if stream in producers:
                node.routes.add(stream, host.id)
        node.set_source(tuples)
    return cluster, spec


def request_from(doc: dict) -> MigrationRequest:
    m = doc["migration"]
    ck = doc.get("checkpoint", {})
    margin = m.get("takeover_margin_s")
    return MigrationRequest(
        query=doc["query"].get("id", "q"),
        old_host=doc["query"]["host"],
        new_host=m["new_host"],
        variant=AlgorithmVariant.parse(m.get("variant", "SingleTrackAllAtOnce")),
        trigger_s=m.get("trigger_s", 1.0),
        coordinator=_coordinator(doc),
        buffer_location=m.get("buffer_location"),
        takeover_margin_s=margin,
        allow_inconsistency=m.get("allow_inconsistency", False),
        dcr=ck.get("replicate_to") == m["new_host"],
    )


def program_for(doc: dict) -> Program:
    m = doc["migration"]
    req = request_from(doc)
    if m.get("program") is not None:
        boot = program_from_json(m["bootstrap"]) if m.get("bootstrap") is not None else []
        prog = build_program(req, doc["query"]) if "variant" in m else None
        return Program(
            req.variant if "variant" in m else None,
            program_from_json(m["program"]), boot,
            prog.state_moves if prog else (), prog.track if prog else "single",
            prog.handover if prog else None)
    return build_program(req, doc["query"])


def simulate(doc: dict, migrate: bool = True) -> RunResult:
    """Run the scenario; with ``migrate`` the migration program is injected."""
    cluster, spec = build_cluster(doc)
    sim = cluster.sim
    result = RunResult(doc, sim, cluster, spec)
    m = doc.get("migration")
    if migrate and m and m.get("enabled", True):
        prog = program_for(doc)
        req = request_from(doc)
        roles = {
            "OH": (req.old_host,), "NH": (req.new_host,), "US": spec.upstream_nodes,
            "DS": spec.sinks, "C": (req.coordinator,),
        }
        mid = f"m{next(_mig_ids)}"
        margin = seconds(req.takeover_margin_s) if req.takeover_margin_s is not None else None
        mig = Migration(mid, spec.id, roles, prog.label, prog.track, prog.handover,
                        prog.state_moves, margin)
        coord: Node = cluster.nodes[req.coordinator]
        trigger = seconds(req.trigger_s)
        if prog.bootstrap:
            boot = Migration(mid + "/boot", spec.id, roles, prog.label, prog.track,
                             prog.handover, (), margin, phase="bootstrap")
            start = seconds(doc.get("checkpoint", {}).get("start_s", 0.0))
            if start >= trigger:
                raise ProtocolError("checkpoint bootstrap must start before the trigger")
            coord.call_at(start, lambda: coord.run_program(boot, prog.bootstrap))
            result.bootstrap_mig = boot
        coord.call_at(trigger, lambda: coord.run_program(mig, prog.migration))
        result.migration = mig
        result.program = prog
    sim.run_until_quiescent()
    return result


_BASELINES: dict[str, RunResult] = {}
_BASELINE_CACHE_SIZE = 8


def baseline(doc: dict) -> RunResult:
    """Migration-free twin of ``doc`` (same topology, workload and seed), cached."""
    key = json.dumps({k: v for k, v in doc.items() if k not in ("migration", "checkpoint",
                                                                 "name")}, sort_keys=True)
    if key not in _BASELINES:
        if len(_BASELINES) >= _BASELINE_CACHE_SIZE:
            _BASELINES.pop(next(iter(_BASELINES)))
        _BASELINES[key] = simulate(doc, migrate=False)
    return _BASELINES[key]


def run_migration(doc: dict) -> tuple[MetricsRecord, RunResult]:
    """Run the scenario with its migration and measure it against the baseline."""
    result = simulate(doc, migrate=True)
    base = baseline(doc)
    if result.migration is None:
        raise ValueError("scenario has no enabled migration")
    rec = measure(result.log, base.log, result.migration.id,
                  scenario=doc.get("name", ""), variant=result.program.label,
                  seed=doc.get("seed", 0))
    return rec, result
