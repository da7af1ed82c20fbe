import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from migrasim.algorithms import (
    AlgorithmVariant, MigrationRequest, build_program, run_migration, simulate,
)
from migrasim.metrics import sink_multiset
from migrasim.presets import experiment_doc, random_doc
from migrasim.protocol.tasks import (
    STATE_TASKS, STREAM_TASKS, ControlMessage, Ref, Streams, T, TakeoverTime, Task,
    TaskSyntaxError, canonical_role, count_control_messages, format_program, format_task,
    from_json, parse, parse_program, program_from_json, task_names, to_json, walk,
)

LISTING = """
ControlMessage(OH
  ControlMessage(Upstream,
    Redirect(Streams(query), OH, NH))
  MoveState(query, NH))
"""


def test_parse_listing_text():
    t = parse(LISTING)
    assert t.is_control and t.target == "OH"
    inner, move = t.subtasks
    assert inner.target == "Upstream"
    assert inner.subtasks[0].args == (Streams(), "OH", "NH")
    assert move == T("MoveState", "query", "NH")


def test_format_then_parse_is_identity():
    t = parse(LISTING)
    assert parse(format_task(t)) == t
    assert parse(str(t)) == t
    assert parse_program(format_program([t, t])) == [t, t]


def test_comments_and_commas_optional():
    assert parse("StopQuery(q)  # done") == parse("StopQuery(q,)") == T("StopQuery", "q")


@pytest.mark.parametrize("text", ["Teleport(q)", "MoveState(q", "MoveState q)", ""])
def test_bad_text_rejected(text):
    with pytest.raises(TaskSyntaxError):
        parse(text)


def test_json_round_trip_and_program_forms():
    t = parse(LISTING)
    assert from_json(to_json(t)) == t
    assert program_from_json(LISTING) == [t]
    assert program_from_json(to_json(t)) == [t]
    assert program_from_json([to_json(t), "StopQuery(q)"]) == [t, T("StopQuery", "q")]
    with pytest.raises(TaskSyntaxError):
        from_json({"neither": 1})


def test_roles_and_walk():
    assert canonical_role("Upstream") == canonical_role("US") == "US"
    assert canonical_role("X") == "X"
    t = parse(LISTING)
    assert [x.name for x in walk(t)] == ["ControlMessage", "ControlMessage", "Redirect",
                                         "MoveState"]
    assert task_names([t]).count("ControlMessage") == 2


def test_control_message_count_scales_with_fanout():
    t = parse(LISTING)
    assert count_control_messages([t], {}) == 2
    # two upstream nodes: the old host sends one message to each
    assert count_control_messages([t], {"US": 2}) == 3
    nested = ControlMessage("US", ControlMessage("NH", T("StartQuery", "q")))
    # each of 3 upstreams sends to the new host
    assert count_control_messages([nested], {"US": 3}) == 6
    sched = T("Schedule", ControlMessage("NH", T("Resume", Streams())), TakeoverTime())
    assert count_control_messages([sched], {}) == 1


leaf = st.sampled_from(STREAM_TASKS + STATE_TASKS).flatmap(
    lambda n: st.lists(st.one_of(st.sampled_from(["q", "NH", "OH"]),
                                 st.builds(Ref, st.sampled_from(["Streams", "TakeoverTime"]),
                                           st.just("query"))),
                       max_size=3).map(lambda a: Task(n, tuple(a))))
trees = st.recursive(leaf, lambda kids: st.builds(
    lambda tgt, ks: ControlMessage(tgt, *ks), st.sampled_from(["OH", "NH", "US", "C"]),
    st.lists(kids, min_size=1, max_size=3)), max_leaves=12)


@settings(max_examples=200, deadline=None)
@given(trees)
def test_text_and_json_round_trip_property(t):
    assert parse(format_task(t)) == t
    assert parse(format_task(t, indent=None)) == t
    assert from_json(to_json(t)) == t


def _req(v, **kw):
    return MigrationRequest("q", "C", "D", AlgorithmVariant.parse(v), **kw)


def test_unsafe_variants_rejected_without_waiver():
    from migrasim.algorithms import VariantRejected
    with pytest.raises(VariantRejected):
        build_program(_req("PauseDrainResume"), {"kind": "join"})
    with pytest.raises(VariantRejected):
        build_program(_req("WindowRecreation"), {"kind": "join"})
    build_program(_req("WindowRecreation"), {"kind": "join", "retention_s": 1})
    build_program(_req("PauseDrainResume"), {"kind": "filter"})
    build_program(_req("PauseDrainResume", allow_inconsistency=True), {"kind": "join"})


def test_variant_names():
    v = AlgorithmVariant.parse("single-track-partial")
    assert v is AlgorithmVariant.SingleTrackPartial is AlgorithmVariant.parse("partial")
    assert AlgorithmVariant.CheckpointAssistedParallelTrack.kebab == \
        "checkpoint-assisted-parallel-track"
    with pytest.raises(ValueError):
        AlgorithmVariant.parse("teleport")


def test_dcr_label_and_bootstrap():
    with_dcr = build_program(_req("CheckpointAssistedSingleTrack", dcr=True))
    without = build_program(_req("CheckpointAssistedSingleTrack"))
    assert with_dcr.bootstrap and with_dcr.label == "CheckpointAssistedSingleTrack"
    assert not without.bootstrap and without.label.endswith("(no-DCR)")
    assert "ReplicateCheckpoint" in task_names(without.migration)


SAFE = [v.name for v in AlgorithmVariant if v.name not in ("PauseDrainResume",
                                                           "WindowRecreation")]


@pytest.mark.parametrize("variant", SAFE)
def test_small_experiment_is_exact(variant):
    rec, res = run_migration(experiment_doc(variant, 300))
    assert rec.status == "complete", rec.error
    assert rec.correct and rec.sink_outputs == 300
    assert all(c == 1 for c in sink_multiset(res.log).values())


def test_static_and_dynamic_control_counts_agree():
    doc = experiment_doc("SingleTrackAllAtOnce", 200)
    rec, res = run_migration(doc)
    fanout = {"US": 2, "DS": 1}
    assert rec.control_messages == count_control_messages(res.program.migration, fanout)


def test_old_host_is_frozen_during_all_at_once():
    rec, res = run_migration(experiment_doc("SingleTrackAllAtOnce", 2000))
    # 2000 tuples of 1056 B on 200 Mbit/s
    wire = 2000 * 1056 * 8 / 200e6
    assert rec.freeze_time >= rec.state_movement_time >= wire
    procs_on_old = [r for r in res.log if r.kind == "proc" and r.node == "C"
                    and r.data.get("counted")]
    stops = [r.time for r in res.log if r.kind == "op_stop" and r.data.get("mig")]
    assert all(r.time <= min(stops) for r in procs_on_old)


def test_window_recreation_does_not_freeze():
    doc = random_doc(np.random.default_rng(3), "WindowRecreation",
                     {"kind": "join", "retention_s": 0.2})
    rec, _ = run_migration(doc)
    assert rec.correct and rec.sink_outputs > 0
    assert rec.freeze_time == 0.0 and rec.bytes_state_moved == 0
    assert rec.bytes_duplicated_upstream > 0


def test_pause_drain_resume_on_filter():
    doc = experiment_doc("PauseDrainResume", 400)
    doc["query"] = {"id": "q8", "kind": "filter", "modulus": 1, "keep": [0], "host": "C",
                    "sinks": ["F"]}
    doc["migration"]["allow_inconsistency"] = False
    rec, _ = run_migration(doc)
    assert rec.correct and rec.bytes_state_moved == 0


def test_no_migration_run_matches_baseline():
    doc = experiment_doc("SingleTrackAllAtOnce", 100)
    a = simulate(doc, migrate=False)
    b = simulate(doc, migrate=False)
    assert sink_multiset(a.log) == sink_multiset(b.log)
    assert [r[:2] for r in a.log] == [r[:2] for r in b.log]
