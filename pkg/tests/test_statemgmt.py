from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from migrasim.statemgmt import (
    BLOB_HEADER_BYTES, FULL, IMMUTABLE, INCREMENTAL, Checkpoint, CheckpointStore,
    ConsistencyError, NoCheckpointError, StateError, apply_blob, extract_incremental,
    extract_state, load_state, partition_state, state_bytes, validate_chain,
)
from migrasim.streamcore import AUCTION, PERSON, JoinOperator, Tuple, WindowAggregate


def auctions(lo, hi, key_mod=7, size=100):
    return [Tuple(AUCTION, i % key_mod, i, i, size) for i in range(lo, hi)]


def fed(op, tuples):
    for t in tuples:
        op.process(t)
    return op


def idents(op):
    return sorted(t.ident for t in op.stored_tuples())


def test_blob_size_arithmetic():
    op = fed(JoinOperator(), auctions(0, 10))
    blob = extract_state(op)
    assert blob.bytes == BLOB_HEADER_BYTES + 10 * 132 == state_bytes(op)


def test_base_plus_increment_equals_full():
    op = fed(JoinOperator(), auctions(0, 50))
    ck = Checkpoint(extract_state(op, kind=IMMUTABLE))
    fed(op, auctions(50, 80))
    inc = extract_incremental(op, ck)
    assert inc.kind == INCREMENTAL and len(inc.tuples) == 30
    assert inc.covered[AUCTION] == (50, 79)

    rebuilt = JoinOperator()
    load_state(rebuilt, [ck.base, inc])
    assert idents(rebuilt) == idents(op)
    probe = Tuple(PERSON, 3, 100, 0)
    assert Counter(t.lineage for t in rebuilt.process(probe)) == \
        Counter(t.lineage for t in op.process(probe))


def test_increment_without_base_fails():
    with pytest.raises(NoCheckpointError):
        extract_incremental(JoinOperator(), None)
    with pytest.raises(NoCheckpointError):
        CheckpointStore().put("q", "C", extract_incremental(
            fed(JoinOperator(), auctions(0, 2)), Checkpoint(extract_state(JoinOperator()))))


def test_chain_gap_and_overlap_detected():
    op = fed(JoinOperator(), auctions(0, 10))
    ck = Checkpoint(extract_state(op))
    fed(op, auctions(10, 20))
    inc1 = extract_incremental(op, ck)
    ck.add(inc1)
    fed(op, auctions(20, 30))
    inc2 = extract_incremental(op, ck)
    with pytest.raises(ConsistencyError, match="gap"):
        validate_chain([ck.base, inc2])
    with pytest.raises(ConsistencyError, match="start"):
        validate_chain([inc1])
    target = JoinOperator()
    load_state(target, [ck.base, inc1])
    with pytest.raises(ConsistencyError, match="overlap"):
        apply_blob(target, [inc1])


def test_apply_blob_rejects_mixed_chunks():
    op = fed(JoinOperator(), auctions(0, 5))
    with pytest.raises(StateError):
        apply_blob(JoinOperator(), [extract_state(op), extract_state(op)])


def test_missing_chunk_detected():
    op = fed(JoinOperator(), auctions(0, 40, key_mod=40))
    chunks = partition_state(extract_state(op), 600)
    assert len(chunks) > 2
    with pytest.raises(ConsistencyError):
        load_state(JoinOperator(), chunks[1:])


def test_partition_respects_limit_and_keys():
    op = fed(JoinOperator(), auctions(0, 100, key_mod=20))
    blob = extract_state(op)
    chunks = partition_state(blob, 1000)
    assert all(c.bytes <= 1000 for c in chunks)
    assert sum(len(c.tuples) for c in chunks) == 100
    owners = {}
    for c in chunks:
        for t in c.tuples:
            assert owners.setdefault(t.key, c.chunk_index) == c.chunk_index
    with pytest.raises(ValueError):
        partition_state(blob, 0)


def test_oversized_key_gets_its_own_chunk():
    op = fed(JoinOperator(), auctions(0, 10, key_mod=1))
    chunks = partition_state(extract_state(op), 200)
    assert len(chunks) == 1 and chunks[0].bytes > 200


def test_checkpoint_store_extends_and_replaces():
    store = CheckpointStore()
    op = fed(JoinOperator(), auctions(0, 5))
    ck = store.put("q", "C", extract_state(op), holder="D")
    fed(op, auctions(5, 9))
    store.put("q", "C", extract_incremental(op, ck))
    assert store.get("q", "C").high() == {PERSON: -1, AUCTION: 8}
    assert store.get("q", "C").replicated_on == {"D"}
    store.put("q", "C", extract_state(op))
    assert store.get("q", "C").increments == []
    store.drop("q", "C")
    assert store.get("q", "C") is None


def test_window_state_round_trip_keeps_progress():
    op = WindowAggregate(extent=10, slide=5)
    fed(op, auctions(0, 23, key_mod=3))
    blob = extract_state(op, kind=FULL)
    rebuilt = WindowAggregate(extent=10, slide=5)
    load_state(rebuilt, [blob])
    assert rebuilt.emitted_until == op.emitted_until
    a = [(x.key, x.window_start, x.count) for x in op.advance_window(40)]
    b = [(x.key, x.window_start, x.count) for x in rebuilt.advance_window(40)]
    assert a == b


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 60), min_size=1, max_size=5), st.integers(1, 20),
       st.one_of(st.none(), st.integers(5, 50)), st.integers(200, 5000))
def test_chain_reconstruction_property(batches, key_mod, retention, chunk):
    op = JoinOperator(retention=retention)
    seq = 0
    ck = None
    for n in batches:
        fed(op, auctions(seq, seq + n, key_mod))
        seq += n
        if ck is None:
            ck = Checkpoint(extract_state(op, kind=IMMUTABLE))
        else:
            ck.add(extract_incremental(op, ck))
    pieces = [c for b in ck.blobs for c in partition_state(b, chunk)]
    rebuilt = JoinOperator(retention=retention)
    load_state(rebuilt, list(reversed(pieces)))
    assert idents(rebuilt) == idents(op)
