"""Scenario files: JSON schema, reference checks, and defaults.

A scenario describes one deployment (nodes, links, query, workload) plus the
migration to perform. Unless listed explicitly, every pair of nodes gets a
link with ``topology.default_link`` parameters.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any

import jsonschema

SCHEMA_VERSION = "migrasim/1"

_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}

_LINK = {
    "type": "object",
    "required": ["src", "dst"],
    "properties": {
        "src": {"type": "string"},
        "dst": {"type": "string"},
        "bandwidth_bps": _pos,
        "latency_s": _nonneg,
        "bidirectional": {"type": "boolean"},
        "down": {"type": "array", "items": {"type": "array", "items": _nonneg,
                                              "minItems": 2, "maxItems": 2}},
    },
    "additionalProperties": False,
}

_STREAM = {
    "type": "object",
    "required": ["name", "producer"],
    "properties": {
        "name": {"type": "string"},
        "producer": {"type": "string"},
        "count": {"type": "integer", "minimum": 0},
        "rate": _pos,
        "start_s": _nonneg,
        "schedule": {"type": "array", "items": _nonneg},
        "payload_bytes": {"type": "integer", "minimum": 0},
        "keys": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["uniform", "same", "sequential"]},
                "n_keys": {"type": "integer", "minimum": 1},
                "key": {"type": "integer"},
            },
            "additionalProperties": False,
        },
        "bursts": {"type": "array", "items": {
            "type": "object", "required": ["start_s", "count", "rate"],
            "properties": {"start_s": _nonneg, "count": {"type": "integer", "minimum": 0},
                           "rate": _pos},
            "additionalProperties": False}},
    },
    "additionalProperties": False,
}

SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["schema", "topology", "query", "workload"],
    "properties": {
        "schema": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "seed": {"type": "integer"},
        "topology": {
            "type": "object",
            "required": ["nodes"],
            "properties": {
                "nodes": {"type": "array", "minItems": 1, "items": {
                    "type": "object", "required": ["id"],
                    "properties": {"id": {"type": "string"},
                                   "role": {"enum": ["source", "host", "sink", "coordinator"]}},
                    "additionalProperties": False}},
                "links": {"type": "array", "items": _LINK},
                "default_link": {
                    "type": "object",
                    "properties": {"bandwidth_bps": _pos, "latency_s": _nonneg},
                    "additionalProperties": False},
                "control_message_bytes": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "query": {
            "type": "object",
            "required": ["host", "sinks"],
            "properties": {
                "id": {"type": "string"},
                "kind": {"enum": ["join", "aggregate", "filter"]},
                "host": {"type": "string"},
                "sinks": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "output_bytes": {"type": "integer", "minimum": 0},
                "retention_s": _pos,
                "stream": {"type": "string"},
                "modulus": {"type": "integer", "minimum": 1},
                "keep": {"type": "array", "items": {"type": "integer"}},
                "window": {
                    "type": "object",
                    "properties": {"kind": {"enum": ["tumbling", "sliding"]},
                                   "extent_s": _pos, "slide_s": _pos},
                    "additionalProperties": False},
            },
            "additionalProperties": False,
        },
        "workload": {
            "type": "object",
            "properties": {
                "seed": {"type": "integer"},
                "streams": {"type": "array", "items": _STREAM},
                "experiment": {
                    "type": "object",
                    "required": ["n_auctions", "auction_rate", "person_s"],
                    "properties": {
                        "n_auctions": {"type": "integer", "minimum": 0},
                        "auction_rate": _pos,
                        "person_s": _nonneg,
                        "seller": {"type": "integer"},
                        "payload_bytes": {"type": "integer", "minimum": 0},
                        "auction_producer": {"type": "string"},
                        "person_producer": {"type": "string"},
                        "start_s": _nonneg,
                    },
                    "additionalProperties": False},
            },
            "additionalProperties": False,
        },
        "migration": {
            "type": "object",
            "required": ["new_host"],
            "properties": {
                "variant": {"type": "string"},
                "trigger_s": _nonneg,
                "new_host": {"type": "string"},
                "coordinator": {"type": "string"},
                "buffer_location": {"enum": ["upstream", "new-host"]},
                "takeover_margin_s": _nonneg,
                "allow_inconsistency": {"type": "boolean"},
                "program": {},
                "bootstrap": {},
                "enabled": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "checkpoint": {
            "type": "object",
            "properties": {
                "replicate_to": {"type": "string"},
                "interval_s": _nonneg,
                "start_s": _nonneg,
                "max_chunk_bytes": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "costs": {
            "type": "object",
            "properties": {"extract_rate_Bps": _nonneg, "load_rate_Bps": _nonneg},
            "additionalProperties": False,
        },
        "run": {
            "type": "object",
            "properties": {"max_events": {"type": "integer", "minimum": 1}},
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

DEFAULT_LINK = {"bandwidth_bps": 100e6, "latency_s": 0.001}


class ScenarioError(ValueError):
    """Invalid scenario; ``problems`` holds ``(field path, message)`` pairs."""

    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = problems
        super().__init__("; ".join(f"{p}: {m}" for p, m in problems))


def _path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def validate(doc: Any) -> None:
    """Raise ScenarioError listing every schema and reference problem."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    problems = [(_path(e.absolute_path), e.message)
                for e in sorted(validator.iter_errors(doc), key=lambda e: _path(e.absolute_path))]
    if problems:
        raise ScenarioError(problems)
    nodes = [n["id"] for n in doc["topology"]["nodes"]]
    known = set(nodes)
    if len(known) != len(nodes):
        problems.append(("$.topology.nodes", "duplicate node id"))

    def need(path: str, node: str) -> None:
        if node not in known:
            problems.append((path, f"unknown node {node!r}"))

    for i, link in enumerate(doc["topology"].get("links", [])):
        need(f"$.topology.links[{i}].src", link["src"])
        need(f"$.topology.links[{i}].dst", link["dst"])
    q = doc["query"]
    need("$.query.host", q["host"])
    for i, s in enumerate(q["sinks"]):
        need(f"$.query.sinks[{i}]", s)
    w = doc["workload"]
    for i, s in enumerate(w.get("streams", [])):
        need(f"$.workload.streams[{i}].producer", s["producer"])
    if "experiment" in w:
        e = w["experiment"]
        need("$.workload.experiment.auction_producer", e.get("auction_producer", "A"))
        need("$.workload.experiment.person_producer", e.get("person_producer", "P"))
    m = doc.get("migration")
    if m:
        need("$.migration.new_host", m["new_host"])
        if "coordinator" in m:
            need("$.migration.coordinator", m["coordinator"])
        if m["new_host"] == q["host"]:
            problems.append(("$.migration.new_host", "new host equals old host"))
        if "variant" in m:
            from .algorithms import AlgorithmVariant
            try:
                AlgorithmVariant.parse(m["variant"])
            except ValueError as exc:
                problems.append(("$.migration.variant", str(exc)))
    ck = doc.get("checkpoint")
    if ck and "replicate_to" in ck:
        need("$.checkpoint.replicate_to", ck["replicate_to"])
    if problems:
        raise ScenarioError(problems)


def load(path: str | Path) -> dict:
    """Read and validate a scenario file."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError([("$", f"malformed JSON: {exc}")]) from None
    except OSError as exc:
        raise ScenarioError([("$", str(exc))]) from None
    validate(doc)
    return doc


def apply(doc: dict, seed: int | None = None, variant: str | None = None,
          migrate: bool | None = None) -> dict:
    """Copy of ``doc`` with command-line overrides applied."""
    doc = copy.deepcopy(doc)
    if seed is not None:
        doc["seed"] = seed
        doc["workload"]["seed"] = seed
    if variant is not None:
        doc.setdefault("migration", {})["variant"] = variant
    if migrate is not None and "migration" in doc:
        doc["migration"]["enabled"] = migrate
    return doc


DECISION_SCHEMA_VERSION = "migrasim-decision/1"

_scores = {"type": "object", "additionalProperties": _nonneg}

DECISION_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["schema", "current_host", "hosts", "checks"],
    "properties": {
        "schema": {"const": DECISION_SCHEMA_VERSION},
        "name": {"type": "string"},
        "current_host": {"type": "string"},
        "hosts": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "amortization": {
            "type": "object",
            "properties": {"min_at_s": _pos, "max_at_s": _pos},
            "additionalProperties": False},
        "adaptive_at": {"type": "boolean"},
        "history_length": {"type": "integer", "minimum": 2},
        "history": {"type": "object", "additionalProperties": {"type": "array",
                                                               "items": _nonneg}},
        "w_c": _nonneg,
        "w_c_per_host": _scores,
        "selectivity": _nonneg,
        "migration_time_s": _scores,
        "state_bytes": {"type": "integer", "minimum": 0},
        "control_messages": {"type": "integer", "minimum": 0},
        "control_message_bytes": {"type": "integer", "minimum": 1},
        "links": {"type": "object", "additionalProperties": {
            "type": "object", "required": ["bandwidth_bps", "latency_s"],
            "properties": {"bandwidth_bps": _pos, "latency_s": _nonneg},
            "additionalProperties": False}},
        "checks": {"type": "array", "minItems": 1, "items": {
            "type": "object", "required": ["PT", "scores"],
            "properties": {"PT": _nonneg, "time_s": _nonneg, "scores": _scores},
            "additionalProperties": False}},
    },
    "additionalProperties": False,
}


def validate_decision(doc: Any) -> None:
    validator = jsonschema.Draft202012Validator(DECISION_SCHEMA)
    problems = [(_path(e.absolute_path), e.message)
                for e in sorted(validator.iter_errors(doc), key=lambda e: _path(e.absolute_path))]
    if problems:
        raise ScenarioError(problems)
    hosts = set(doc["hosts"])
    if doc["current_host"] not in hosts:
        problems.append(("$.current_host", "current host must be one of hosts"))
    for i, check in enumerate(doc["checks"]):
        missing = hosts - set(check["scores"])
        if missing:
            problems.append((f"$.checks[{i}].scores", f"no score for {sorted(missing)}"))
    if problems:
        raise ScenarioError(problems)


def load_decision(path: str | Path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError([("$", f"malformed JSON: {exc}")]) from None
    except OSError as exc:
        raise ScenarioError([("$", str(exc))]) from None
    validate_decision(doc)
    return doc
