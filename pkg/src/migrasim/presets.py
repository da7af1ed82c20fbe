"""Ready-made scenario documents.

``usecase_topology`` is the evaluation deployment: sources A and B, hosts
C, D and E, sink F and a leader L, with the host and leader links of the
use case. Source and sink links are not part of that table; they get
``edge_bps`` so producers never bottleneck the hosts.
"""

from __future__ import annotations

import copy

import numpy as np

from .algorithms import AlgorithmVariant
from .scenario import SCHEMA_VERSION

HOST_LINKS = [
    ("C", "D", 200e6), ("C", "E", 100e6), ("D", "E", 100e6),
    ("L", "C", 200e6), ("L", "D", 200e6), ("L", "E", 200e6),
]


def usecase_topology(latency_s: float = 0.001, edge_bps: float = 10e9,
                     host_links=HOST_LINKS) -> dict:
    return {
        "nodes": [{"id": "A", "role": "source"}, {"id": "B", "role": "source"},
                  {"id": "C"}, {"id": "D"}, {"id": "E"},
                  {"id": "F", "role": "sink"}, {"id": "L", "role": "coordinator"}],
        "links": [{"src": a, "dst": b, "bandwidth_bps": bw, "latency_s": latency_s}
                  for a, b, bw in host_links],
        "default_link": {"bandwidth_bps": edge_bps, "latency_s": latency_s},
        "control_message_bytes": 168,
    }


def _needs_waiver(variant: str, query: dict) -> bool:
    v = AlgorithmVariant.parse(variant)
    stateful = query.get("kind", "join") != "filter"
    bounded = query.get("kind") == "aggregate" or "retention_s" in query
    if v is AlgorithmVariant.PauseDrainResume:
        return stateful
    if v is AlgorithmVariant.WindowRecreation:
        return stateful and not bounded
    return False


def experiment_doc(variant: str, n_auctions: int, auction_rate: float = 20000.0,
                   payload_bytes: int = 1024, seed: int = 0, new_host: str = "D",
                   allow_inconsistency: bool | None = None) -> dict:
    """N auctions from one seller, migration, then one matching person.

    The person is sent well after the migration is expected to finish, so a
    correct migration yields exactly ``n_auctions`` join outputs.
    """
    query = {"id": "q8", "kind": "join", "host": "C", "sinks": ["F"]}
    start = 0.1
    end = start + n_auctions / auction_rate
    trigger = round(end + 0.5, 6)
    state = n_auctions * (payload_bytes + 32)
    est = state * 8 / 100e6 + 2 * state / 1e9 + 1.0
    if allow_inconsistency is None:
        allow_inconsistency = _needs_waiver(variant, query)
    return {
        "schema": SCHEMA_VERSION,
        "name": f"experiment n={n_auctions}",
        "seed": seed,
        "topology": usecase_topology(),
        "query": query,
        "workload": {"experiment": {
            "n_auctions": n_auctions, "auction_rate": auction_rate,
            "person_s": round(trigger + 3 * est, 6), "payload_bytes": payload_bytes,
            "auction_producer": "A", "person_producer": "B", "start_s": start}},
        "migration": {"variant": variant, "new_host": new_host, "trigger_s": trigger,
                      "coordinator": "L", "allow_inconsistency": allow_inconsistency},
        "checkpoint": {"replicate_to": new_host, "start_s": round(start + (end - start) / 2, 6),
                       "interval_s": max(0.05, round((end - start) / 4, 6))},
    }


def freeze_trend_doc(variant: str, static_bytes: float = 1e9, dynamic_bytes: float = 1e8,
                     payload_bytes: int = 100_000) -> dict:
    """Large static state, then dynamic state arriving while the migration runs.

    Static auctions arrive over 10 s; the trigger fires at 10.5 s; dynamic
    auctions arrive over the next 40 s, about the time the static state needs
    on the 200 Mbit/s C-D link.
    """
    n_static = int(round(static_bytes / payload_bytes))
    n_dynamic = int(round(dynamic_bytes / payload_bytes))
    trigger = 10.5
    query = {"id": "q8", "kind": "join", "host": "C", "sinks": ["F"]}
    return {
        "schema": SCHEMA_VERSION,
        "name": "freeze trend",
        "seed": 0,
        "topology": usecase_topology(),
        "query": query,
        "workload": {"streams": [
            {"name": "auction", "producer": "A", "count": n_static, "rate": n_static / 10.0,
             "start_s": 0.0, "payload_bytes": payload_bytes, "keys": {"kind": "same", "key": 1},
             "bursts": [{"start_s": trigger, "count": n_dynamic, "rate": n_dynamic / 40.0}]},
            {"name": "person", "producer": "B", "schedule": [200.0], "count": 1,
             "keys": {"kind": "same", "key": 1}},
        ]},
        "migration": {"variant": variant, "new_host": "D", "trigger_s": trigger,
                      "coordinator": "L", "allow_inconsistency": _needs_waiver(variant, query)},
        "checkpoint": {"replicate_to": "D", "start_s": 5.0, "interval_s": 2.0},
    }


SINGLE_TRACK_MOVING = ("SingleTrackAllAtOnce", "SingleTrackPartial",
                       "CheckpointAssistedSingleTrack")


def random_doc(rng: np.random.Generator, variant: str, query: dict | None = None,
               seed: int | None = None) -> dict:
    """Randomized link speeds, state size, rates and trigger; uniform arrivals."""
    bw = float(rng.choice([50e6, 100e6, 200e6, 400e6]))
    latency = float(rng.uniform(0.0005, 0.005))
    n_static = int(rng.integers(500, 3000))
    payload = int(rng.choice([1024, 2048, 4096, 8192]))
    rate = float(rng.uniform(400, 2000))
    trigger = round(0.2 + n_static / rate, 6)
    # arrivals stay uniform until well after the migration can have finished
    est = n_static * (payload + 32) * (8 / bw + 2 / 1e9) + 0.1
    duration = trigger - 0.2 + 2.5 * est + 0.2
    n_auction = int(duration * rate)
    n_person = max(2, int(duration * rate / 10))
    query = copy.deepcopy(query) if query else {"kind": "join"}
    query.update({"id": "q", "host": "C", "sinks": ["F"]})
    links = [(a, b, bw) for a, b, _ in HOST_LINKS]
    seed = int(rng.integers(0, 2**31)) if seed is None else seed
    return {
        "schema": SCHEMA_VERSION,
        "name": f"random {variant}",
        "seed": seed,
        "topology": usecase_topology(latency, host_links=links),
        "query": query,
        "workload": {"seed": seed, "streams": [
            {"name": "auction", "producer": "A", "count": n_auction, "rate": rate,
             "start_s": 0.2, "payload_bytes": payload, "keys": {"kind": "uniform", "n_keys": 1000}},
            {"name": "person", "producer": "B", "count": n_person,
             "rate": n_person / duration, "start_s": 0.2, "payload_bytes": 64,
             "keys": {"kind": "uniform", "n_keys": 1000}},
        ]},
        "migration": {"variant": variant, "new_host": "D", "trigger_s": trigger,
                      "coordinator": "L", "allow_inconsistency": _needs_waiver(variant, query)},
        "checkpoint": {"replicate_to": "D", "start_s": round(trigger / 3, 6),
                       "interval_s": round(trigger / 4, 6)},
    }
