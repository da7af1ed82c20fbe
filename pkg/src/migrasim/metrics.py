"""Migration cost metrics, computed after the fact from the event log.

Every value here is a pure function of ``Simulator.log`` (plus the log of a
migration-free twin run for latency and correctness), so results can be
audited by replaying the log.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
from collections import Counter
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

from .simnet import LogRecord, to_seconds


class MetricsError(Exception):
    pass


class IncompleteMigrationError(MetricsError):
    """The old host stopped but the new host never started."""


class CorrectnessError(MetricsError):
    """Sink output differs from the migration-free baseline."""


def _of(log: Iterable[LogRecord], kind: str, mig: str | None = None) -> list[LogRecord]:
    return [r for r in log if r.kind == kind and (mig is None or r.data.get("mig") == mig)]


def stop_start(log: Sequence[LogRecord], mig: str | None = None) -> tuple[int | None, int | None]:
    """``(t_stop, t_start)`` in ns for a migration (markers tagged with a migration id)."""
    stops = [r.time for r in _of(log, "op_stop", mig) if r.data.get("mig")]
    starts = [r.time for r in _of(log, "op_start", mig) if r.data.get("mig")]
    return (min(stops) if stops else None, max(starts) if starts else None)


def freeze_time(log: Sequence[LogRecord], mig: str | None = None) -> float:
    """``t_start - t_stop`` in seconds; 0 when the operator never stopped early."""
    t_stop, t_start = stop_start(log, mig)
    if t_stop is None:
        return 0.0
    if t_start is None:
        raise IncompleteMigrationError("old host stopped but new host never started")
    return to_seconds(max(0, t_start - t_stop))


def _transfers(log: Sequence[LogRecord], mig: str | None, phase: str = "migration"):
    sends = [r for r in _of(log, "state_send", mig) if r.data.get("phase") == phase]
    recvs = {r.data["transfer"]: r.time for r in _of(log, "state_recv", mig)
             if r.data.get("phase") == phase}
    return sends, recvs


def _span(sends: list[LogRecord], recvs: dict[str, int]) -> float:
    if not sends:
        return 0.0
    ids = {r.data["transfer"] for r in sends}
    if not ids <= set(recvs):
        raise IncompleteMigrationError("state transfer never fully received")
    return to_seconds(max(recvs[i] for i in ids) - min(r.time for r in sends))


def state_movement_time(log: Sequence[LogRecord], mig: str | None = None) -> float:
    """Seconds from the first send to the last full receipt of state moved
    while processing is paused; all migration transfers when nothing pauses.
    """
    sends, recvs = _transfers(log, mig)
    paused = [r for r in sends if r.data.get("paused")]
    return _span(paused or sends, recvs)


def transfer_span(log: Sequence[LogRecord], mig: str | None = None) -> float:
    """First send to last receipt over every migration-phase transfer."""
    return _span(*_transfers(log, mig))


def _first_times(log: Sequence[LogRecord], kind: str, counted_only: bool = False
                 ) -> dict[tuple[str, int], int]:
    out: dict[tuple[str, int], int] = {}
    for r in log:
        if r.kind != kind:
            continue
        if counted_only and not r.data.get("counted", True):
            continue
        key = (r.data["stream"], r.data["seq"])
        if key not in out:
            out[key] = r.time
    return out


def sink_multiset(log: Sequence[LogRecord]) -> Counter:
    return Counter(r.data["lineage"] for r in log if r.kind == "sink" and r.data["accepted"])


def check_outputs(log: Sequence[LogRecord], baseline_log: Sequence[LogRecord]) -> None:
    got, want = sink_multiset(log), sink_multiset(baseline_log)
    if got != want:
        missing = sum((want - got).values())
        extra = sum((got - want).values())
        raise CorrectnessError(f"sink output differs from baseline: {missing} missing, "
                               f"{extra} extra")


def affected(log: Sequence[LogRecord], mig: str | None = None,
             baseline_log: Sequence[LogRecord] | None = None) -> set[tuple[str, int]]:
    """Inputs the migration-free run processes in ``[t_stop, t_start)``.

    Using the baseline's processing time makes the set independent of where
    the migration buffers tuples (new host, old host or upstream). Without a
    baseline, source emission time is the fallback.
    """
    t_stop, t_start = stop_start(log, mig)
    if t_stop is None or t_start is None:
        return set()
    if baseline_log is not None:
        times = _first_times(baseline_log, "proc", counted_only=True)
    else:
        times = _first_times(log, "emit")
    return {k for k, t in times.items() if t_stop <= t < t_start}


def latency_spike_stats(log: Sequence[LogRecord], baseline_log: Sequence[LogRecord],
                        mig: str | None = None, check: bool = True) -> tuple[float, float]:
    """``(max, mean)`` added processing latency in seconds versus the baseline.

    The max is over all inputs; the mean is over the inputs affected by the
    freeze, or over all inputs when none were.
    """
    if check:
        check_outputs(log, baseline_log)
    mine = _first_times(log, "proc", counted_only=True)
    base = _first_times(baseline_log, "proc", counted_only=True)
    deltas = {k: mine[k] - base[k] for k in base if k in mine}
    if not deltas:
        return 0.0, 0.0
    hit = affected(log, mig, baseline_log)
    pool = [deltas[k] for k in hit if k in deltas] or list(deltas.values())
    return to_seconds(max(0, max(deltas.values()))), to_seconds(sum(pool) / len(pool))


@dataclass
class MetricsRecord:
    scenario: str = ""
    variant: str = ""
    seed: int = 0
    status: str = "complete"
    correct: bool = True
    freeze_time: float = 0.0
    state_movement_time: float = 0.0
    transfer_span: float = 0.0
    extraction_time: float = 0.0
    loading_time: float = 0.0
    state_size_bytes: int = 0
    bytes_state_moved: int = 0
    bytes_replicated: int = 0
    bytes_duplicated_upstream: int = 0
    control_messages: int = 0
    acks: int = 0
    affected_tuples: int = 0
    duplicate_outputs_dropped: int = 0
    latency_max: float = 0.0
    latency_mean: float = 0.0
    migration_span: float = 0.0
    sink_outputs: int = 0
    baseline_outputs: int = 0
    error: str = ""

    def as_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


COLUMNS = [f.name for f in dataclasses.fields(MetricsRecord)]
SECONDS_COLUMNS = {"freeze_time", "state_movement_time", "transfer_span", "extraction_time",
                   "loading_time", "latency_max", "latency_mean", "migration_span"}


def status_of(log: Sequence[LogRecord], mig: str) -> str:
    if _of(log, "abort", mig):
        return "aborted"
    done = _of(log, "program_done", mig)
    t_stop = [r for r in _of(log, "op_stop", mig)]
    t_start = [r for r in _of(log, "op_start", mig)]
    if done and t_stop and t_start:
        return "complete"
    return "incomplete"


def measure(log: Sequence[LogRecord], baseline_log: Sequence[LogRecord], mig: str,
            **labels: Any) -> MetricsRecord:
    rec = MetricsRecord(**labels)
    rec.status = status_of(log, mig)
    rec.sink_outputs = sum(1 for r in log if r.kind == "sink" and r.data["accepted"])
    rec.baseline_outputs = sum(1 for r in baseline_log if r.kind == "sink" and r.data["accepted"])
    rec.duplicate_outputs_dropped = sum(1 for r in log if r.kind == "sink"
                                        and not r.data["accepted"])
    try:
        check_outputs(log, baseline_log)
    except CorrectnessError as exc:
        rec.correct = False
        rec.error = str(exc)
    if rec.status != "complete":
        rec.correct = False
        aborts = _of(log, "abort", mig)
        rec.error = rec.error or (aborts[0].data["reason"] if aborts else "migration incomplete")
    try:
        rec.freeze_time = freeze_time(log, mig)
        rec.state_movement_time = state_movement_time(log, mig)
        rec.transfer_span = transfer_span(log, mig)
    except IncompleteMigrationError as exc:
        rec.correct = False
        rec.error = rec.error or str(exc)
    ext = [r for r in _of(log, "state_extract", mig) if r.data.get("phase") == "migration"]
    lod = [r for r in _of(log, "state_load", mig) if r.data.get("phase") == "migration"]
    rec.extraction_time = to_seconds(sum(r.data["dur"] for r in ext))
    rec.loading_time = to_seconds(sum(r.data["dur"] for r in lod))
    rec.state_size_bytes = sum(r.data["bytes"] for r in ext)
    sends = [r for r in _of(log, "state_send") if r.data.get("mig", "").startswith(mig)]
    rec.bytes_state_moved = sum(r.data["bytes"] for r in sends
                                if r.data.get("phase") == "migration")
    rec.bytes_replicated = sum(r.data["bytes"] for r in sends
                               if r.data.get("phase") == "replication")
    rec.bytes_duplicated_upstream = sum(r.data["bytes"] for r in log if r.kind == "dup_route")
    ctrl = _of(log, "ctrl_send", mig)
    rec.control_messages = sum(1 for r in ctrl if r.data["cls"] == "program")
    rec.acks = sum(1 for r in ctrl if r.data["cls"] == "ack")
    rec.affected_tuples = len(affected(log, mig, baseline_log))
    rec.latency_max, rec.latency_mean = latency_spike_stats(log, baseline_log, mig, check=False)
    start, done = _of(log, "program_start", mig), _of(log, "program_done", mig)
    if start and done:
        rec.migration_span = to_seconds(done[0].time - start[0].time)
    return rec


# -- export --------------------------------------------------------------------


def _cell(name: str, value: Any) -> str:
    if name in SECONDS_COLUMNS:
        return f"{value:.6f}"
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def to_csv(records: Iterable[MetricsRecord], columns: Sequence[str] = COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for rec in records:
        d = rec.as_dict()
        w.writerow([_cell(c, d[c]) for c in columns])
    return buf.getvalue()


def to_json(records: Iterable[MetricsRecord]) -> str:
    rows = []
    for rec in records:
        d = rec.as_dict()
        rows.append({k: round(v, 6) if k in SECONDS_COLUMNS else v for k, v in d.items()})
    return json.dumps(rows, indent=2, sort_keys=False) + "\n"


def trace_json(log: Sequence[LogRecord]) -> str:
    """Full event log as JSON lines-in-a-list, times in seconds."""
    rows = [{"time_s": round(to_seconds(r.time), 9), "kind": r.kind, "node": r.node, **r.data}
            for r in log]
    return json.dumps(rows, default=str) + "\n"
