"""Operator state extraction, loading, incremental checkpoints and chunking.

Size model: a blob costs ``64`` header bytes plus ``payload + 32`` bytes per
stored tuple. Blob sizes feed the network model directly, so there are no
hidden bytes anywhere in a transfer.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable

from .streamcore import RECORD_HEADER_BYTES, Operator, Tuple

BLOB_HEADER_BYTES = 64

FULL = "full"
IMMUTABLE = "immutable"
INCREMENTAL = "incremental"

_blob_ids = itertools.count()


class StateError(Exception):
    pass


class ConsistencyError(StateError):
    """Blobs do not form a gap-free, non-overlapping chain."""


class NoCheckpointError(StateError):
    pass


def record_bytes(tuples: Iterable[Tuple]) -> int:
    return sum(t.payload_bytes + RECORD_HEADER_BYTES for t in tuples)


def state_bytes(op: Operator) -> int:
    """Size a full extraction of ``op`` would have."""
    return BLOB_HEADER_BYTES + record_bytes(op.stored_tuples())


@dataclass(frozen=True)
class StateBlob:
    query: str
    kind: str
    tuples: tuple[Tuple, ...]
    covered: dict[str, tuple[int, int]]
    watermark: int = 0
    emitted_until: int = 0
    evict_before: int | None = None
    generation: int = 0
    blob_id: int = field(default_factory=lambda: next(_blob_ids))
    chunk_index: int = 0
    chunk_count: int = 1
    key_range: tuple[int, int] | None = None

    @property
    def bytes(self) -> int:
        return BLOB_HEADER_BYTES + record_bytes(self.tuples)

    @property
    def is_base(self) -> bool:
        return self.kind in (FULL, IMMUTABLE)

    def high(self) -> dict[str, int]:
        return {s: hi for s, (lo, hi) in self.covered.items()}


@dataclass
class Checkpoint:
    """A base blob plus ordered increments, and where it is replicated."""

    base: StateBlob
    increments: list[StateBlob] = field(default_factory=list)
    replicated_on: set[str] = field(default_factory=set)

    @property
    def blobs(self) -> list[StateBlob]:
        return [self.base, *self.increments]

    def high(self) -> dict[str, int]:
        marks = dict(self.base.high())
        for inc in self.increments:
            for s, (lo, hi) in inc.covered.items():
                if hi >= lo:
                    marks[s] = hi
        return marks

    @property
    def next_generation(self) -> int:
        return len(self.increments) + 1

    def add(self, inc: StateBlob) -> None:
        if inc.kind != INCREMENTAL:
            raise StateError("only incremental blobs extend a checkpoint")
        self.increments.append(inc)


def _covered(op: Operator, since: dict[str, int] | None = None) -> dict[str, tuple[int, int]]:
    out = {}
    for s in op.input_streams:
        hi = op.applied_high.get(s, -1)
        if since is None:
            lo = op.applied_low.get(s, 0)
        else:
            lo = since.get(s, -1) + 1
        out[s] = (lo, hi)
    return out


def _emitted(op: Operator) -> int:
    return getattr(op, "emitted_until", 0)


def extract_state(op: Operator, query: str = "q", kind: str = FULL) -> StateBlob:
    """Snapshot everything ``op`` stores. ``op`` is left unchanged."""
    if kind not in (FULL, IMMUTABLE):
        raise StateError(f"not a base blob kind: {kind}")
    return StateBlob(query, kind, tuple(op.stored_tuples()), _covered(op), op.watermark,
                     _emitted(op), op.evict_horizon(), generation=0)


def extract_incremental(op: Operator, since: Checkpoint | None, query: str = "q") -> StateBlob:
    """Tuples stored since ``since``'s high marks, plus the eviction horizon."""
    if since is None:
        raise NoCheckpointError(f"no base checkpoint for query {query!r}")
    marks = since.high()
    new = tuple(t for t in op.stored_tuples() if t.seq > marks.get(t.stream, -1))
    return StateBlob(query, INCREMENTAL, new, _covered(op, marks), op.watermark, _emitted(op),
                     op.evict_horizon(), generation=since.next_generation)


def _group(blobs: Iterable[StateBlob]) -> list[list[StateBlob]]:
    groups: dict[int, list[StateBlob]] = {}
    for b in blobs:
        groups.setdefault(b.blob_id, []).append(b)
    ordered = sorted(groups.values(), key=lambda g: (g[0].generation, g[0].blob_id))
    for g in ordered:
        n = g[0].chunk_count
        idx = sorted(b.chunk_index for b in g)
        if idx != list(range(n)):
            raise ConsistencyError(f"blob {g[0].blob_id}: chunks {idx} of {n}")
    return ordered


def validate_chain(blobs: Iterable[StateBlob]) -> list[list[StateBlob]]:
    groups = _group(blobs)
    if not groups:
        return groups
    if not groups[0][0].is_base:
        raise ConsistencyError("chain must start with a full or immutable blob")
    marks = groups[0][0].high()
    for g in groups[1:]:
        head = g[0]
        if head.is_base:
            raise ConsistencyError("second base blob in chain")
        for s, (lo, hi) in head.covered.items():
            if hi < lo:
                continue
            expected = marks.get(s, -1) + 1
            if lo != expected:
                kind = "gap" if lo > expected else "overlap"
                raise ConsistencyError(f"{kind} on stream {s}: increment starts at {lo}, "
                                       f"expected {expected}")
            marks[s] = hi
    return groups


def load_state(op: Operator, blobs: Iterable[StateBlob]) -> None:
    """Replace ``op``'s state with the reconstruction of ``blobs``.

    ``blobs`` may be chunks in any order; they are grouped by logical blob
    and applied base first.
    """
    groups = validate_chain(blobs)
    op.clear()
    for g in groups:
        apply_blob(op, g)


def apply_blob(op: Operator, chunks: Iterable[StateBlob]) -> None:
    """Apply one logical blob (all its chunks) on top of ``op``'s state.

    A base blob replaces the state; an increment must continue exactly where
    ``op``'s applied marks end.
    """
    groups = _group(chunks)
    if len(groups) != 1:
        raise StateError(f"expected chunks of one blob, got {len(groups)} blobs")
    group = groups[0]
    head = group[0]
    if head.is_base:
        op.clear()
    else:
        for s, (lo, hi) in head.covered.items():
            if hi < lo:
                continue
            expected = op.applied_high.get(s, -1) + 1
            if lo != expected:
                kind = "gap" if lo > expected else "overlap"
                raise ConsistencyError(f"{kind} on stream {s}: increment starts at {lo}, "
                                       f"expected {expected}")
    op.restore([t for b in group for t in b.tuples], head.evict_before)
    for s, (lo, hi) in head.covered.items():
        if hi < lo:
            continue
        if head.is_base:
            op.applied_low[s] = lo
        op.applied_high[s] = hi
    op.watermark = max(op.watermark, head.watermark)
    if hasattr(op, "emitted_until"):
        op.emitted_until = max(op.emitted_until, head.emitted_until)


def _key_hash(key: int) -> int:
    # Knuth multiplicative hash; stable across runs
    return (key * 2654435761) % (1 << 32)


def partition_state(blob: StateBlob, max_chunk_bytes: int) -> list[StateBlob]:
    """Split ``blob`` by key-hash ranges into chunks of at most ``max_chunk_bytes``.

    A key's tuples are never split, so a chunk exceeds the limit only when a
    single key does.
    """
    if max_chunk_bytes <= 0:
        raise ValueError("max_chunk_bytes must be > 0")
    by_key: dict[int, list[Tuple]] = {}
    for t in blob.tuples:
        by_key.setdefault(t.key, []).append(t)
    keys = sorted(by_key, key=lambda k: (_key_hash(k), k))
    chunks: list[tuple[list[Tuple], int, int]] = []
    cur: list[Tuple] = []
    cur_bytes = BLOB_HEADER_BYTES
    lo = hi = None
    for k in keys:
        grp = by_key[k]
        size = record_bytes(grp)
        if cur and cur_bytes + size > max_chunk_bytes:
            chunks.append((cur, lo, hi))
            cur, cur_bytes, lo = [], BLOB_HEADER_BYTES, None
        cur.extend(grp)
        cur_bytes += size
        h = _key_hash(k)
        lo = h if lo is None else lo
        hi = h
    if cur or not chunks:
        chunks.append((cur, lo if lo is not None else 0, hi if hi is not None else 0))
    n = len(chunks)
    return [
        StateBlob(blob.query, blob.kind, tuple(ts), blob.covered, blob.watermark,
                  blob.emitted_until, blob.evict_before, blob.generation, blob.blob_id,
                  i, n, (klo, khi))
        for i, (ts, klo, khi) in enumerate(chunks)
    ]


class CheckpointStore:
    """Checkpoints held by a node, keyed by ``(query, owner)``."""

    def __init__(self) -> None:
        self._ckpts: dict[tuple[str, str], Checkpoint] = {}

    def get(self, query: str, owner: str) -> Checkpoint | None:
        return self._ckpts.get((query, owner))

    def put(self, query: str, owner: str, blob: StateBlob, holder: str | None = None) -> Checkpoint:
        """Record ``blob``: a base starts a new checkpoint, an increment extends it."""
        if blob.is_base:
            ck = Checkpoint(blob)
            self._ckpts[(query, owner)] = ck
        else:
            ck = self._ckpts.get((query, owner))
            if ck is None:
                raise NoCheckpointError(f"increment for {query!r} without a base")
            ck.add(blob)
        if holder is not None:
            ck.replicated_on.add(holder)
        return ck

    def drop(self, query: str, owner: str) -> None:
        self._ckpts.pop((query, owner), None)
