"""Deterministic NEXMark-style workload: persons and auctions.

Auctions carry a padded payload (1 kB by default) and a seller key; persons
carry an id key. The experiment preset sends ``n`` auctions that all share
one seller, then a single person with that id, so the join emits exactly
``n`` outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .simnet import seconds
from .streamcore import AUCTION, PERSON, Tuple

DEFAULT_PAYLOAD = {AUCTION: 1024, PERSON: 64}


class WorkloadError(ValueError):
    pass


@dataclass
class KeyDist:
    """``uniform`` over ``[0, n_keys)``, ``same`` (always ``key``), or ``sequential``."""

    kind: str = "uniform"
    n_keys: int = 100
    key: int = 1

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "uniform":
            return rng.integers(0, self.n_keys, size=n)
        if self.kind == "same":
            return np.full(n, self.key, dtype=np.int64)
        if self.kind == "sequential":
            return np.arange(n, dtype=np.int64) % max(self.n_keys, 1)
        raise WorkloadError(f"unknown key distribution {self.kind!r}")


@dataclass
class Burst:
    start_s: float
    count: int
    rate: float


@dataclass
class StreamSpec:
    name: str
    producer: str
    count: int = 0
    rate: float | None = None  # tuples/s, uniform spacing from start_s
    start_s: float = 0.0
    schedule: list[float] | None = None  # explicit emit times, overrides rate
    payload_bytes: int | None = None
    keys: KeyDist = field(default_factory=KeyDist)
    bursts: list[Burst] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.count < 0:
            raise WorkloadError(f"{self.name}: count must be >= 0")
        if self.payload_bytes is None:
            self.payload_bytes = DEFAULT_PAYLOAD.get(self.name, 64)

    def emit_times(self) -> np.ndarray:
        """Emit times in ns, before merging bursts."""
        if self.schedule is not None:
            times = np.array([seconds(t) for t in self.schedule], dtype=np.int64)
        elif self.count == 0:
            times = np.empty(0, dtype=np.int64)
        else:
            if not self.rate or self.rate <= 0:
                raise WorkloadError(f"{self.name}: rate must be > 0 when count > 0")
            step = 1.0 / self.rate
            times = np.array([seconds(self.start_s + i * step) for i in range(self.count)],
                             dtype=np.int64)
        for b in self.bursts:
            if b.rate <= 0:
                raise WorkloadError(f"{self.name}: burst rate must be > 0")
            extra = [seconds(b.start_s + i / b.rate) for i in range(b.count)]
            times = np.concatenate([times, np.array(extra, dtype=np.int64)])
        return np.sort(times, kind="stable")


@dataclass
class WorkloadSpec:
    streams: list[StreamSpec]
    seed: int = 0

    @property
    def total_tuples(self) -> int:
        return sum(len(s.emit_times()) for s in self.streams)


def generate(spec: WorkloadSpec) -> list[tuple[int, Tuple]]:
    """Time-sorted ``(emit_ns, Tuple)`` pairs; seqs are dense per stream."""
    rng = np.random.default_rng(spec.seed)
    out: list[tuple[int, int, Tuple]] = []
    for order, s in enumerate(spec.streams):
        times = s.emit_times()
        keys = s.keys.draw(rng, len(times))
        for seq, (t, k) in enumerate(zip(times.tolist(), keys.tolist())):
            out.append((t, order, Tuple(s.name, int(k), t, seq, s.payload_bytes)))
    out.sort(key=lambda x: (x[0], x[1], x[2].seq))
    return [(t, tup) for t, _, tup in out]


def by_producer(spec: WorkloadSpec) -> dict[str, list[Tuple]]:
    """Split the schedule into one time-ordered source list per producer node."""
    producers = {s.name: s.producer for s in spec.streams}
    out: dict[str, list[Tuple]] = {}
    for _, t in generate(spec):
        out.setdefault(producers[t.stream], []).append(t)
    return out


def experiment(n_auctions: int, auction_rate: float, person_s: float, seller: int = 1,
               payload_bytes: int = 1024, auction_producer: str = "A",
               person_producer: str = "P", seed: int = 0, start_s: float = 0.0
               ) -> WorkloadSpec:
    """``n_auctions`` from one seller, then one person matching all of them."""
    return WorkloadSpec(
        streams=[
            StreamSpec(AUCTION, auction_producer, n_auctions, auction_rate, start_s,
                       payload_bytes=payload_bytes, keys=KeyDist("same", key=seller)),
            StreamSpec(PERSON, person_producer, schedule=[person_s], count=1,
                       keys=KeyDist("same", key=seller)),
        ],
        seed=seed,
    )


def from_dict(d: dict[str, Any], seed: int = 0) -> WorkloadSpec:
    """Build a spec from a scenario ``workload`` section."""
    if "experiment" in d:
        e = d["experiment"]
        return experiment(e["n_auctions"], e["auction_rate"], e["person_s"],
                          e.get("seller", 1), e.get("payload_bytes", 1024),
                          e.get("auction_producer", "A"), e.get("person_producer", "P"),
                          d.get("seed", seed), e.get("start_s", 0.0))
    streams = []
    for sd in d.get("streams", []):
        k = sd.get("keys", {})
        streams.append(StreamSpec(
            name=sd["name"], producer=sd["producer"], count=sd.get("count", 0),
            rate=sd.get("rate"), start_s=sd.get("start_s", 0.0), schedule=sd.get("schedule"),
            payload_bytes=sd.get("payload_bytes"),
            keys=KeyDist(k.get("kind", "uniform"), k.get("n_keys", 100), k.get("key", 1)),
            bursts=[Burst(b["start_s"], b["count"], b["rate"]) for b in sd.get("bursts", [])],
        ))
    return WorkloadSpec(streams, d.get("seed", seed))
