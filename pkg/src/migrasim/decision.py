"""Migration decisions: amortization horizon, migration cost and benefit.

A candidate host's benefit is its placement score discounted by the cost of
getting there::

    at  = min_at + (max_at - min_at) / 100 * (100 - rsd)
    C   = w_c * PT_out(mt) / PT_out(at)        (0 for the current host)
    B_m = P * (1 - C)

The host with the largest benefit wins; ties keep the operator where it is.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np


class DecisionError(ValueError):
    pass


class UndefinedCostError(DecisionError):
    """No output is predicted over the horizon but some during migration."""


@dataclass
class DecisionConfig:
    min_at: float = 5.0
    max_at: float = 5.0
    w_c: float = 1.0
    w_c_per_host: dict[str, float] = field(default_factory=dict)
    check_period: float = 1.0

    def __post_init__(self) -> None:
        if not 0 < self.min_at <= self.max_at:
            raise DecisionError("need 0 < min_at <= max_at")
        if self.w_c < 0 or any(w < 0 for w in self.w_c_per_host.values()):
            raise DecisionError("w_c must be >= 0")

    def weight(self, host: str) -> float:
        return self.w_c_per_host.get(host, self.w_c)


def rsd(samples: Sequence[float]) -> float:
    """Relative standard deviation in percent, clamped to [0, 100].

    Fewer than two samples (or a zero mean) gives 100, the most cautious value.
    """
    if len(samples) < 2:
        return 100.0
    arr = np.asarray(samples, dtype=float)
    mean = arr.mean()
    if mean <= 0:
        return 100.0
    return float(min(100.0, max(0.0, arr.std() / mean * 100.0)))


def amortization_time(rsd_p: float, min_at: float, max_at: float) -> float:
    rsd_p = min(100.0, max(0.0, rsd_p))
    return min_at + (max_at - min_at) / 100.0 * (100.0 - rsd_p)


class PlacementHistory:
    """Last ``k`` placement scores per (host, operator)."""

    def __init__(self, k: int = 20):
        if k < 2:
            raise DecisionError("history length must be >= 2")
        self.k = k
        self._samples: dict[tuple[str, str], deque[tuple[float, float]]] = {}

    def add(self, host: str, op: str, time: float, score: float) -> None:
        if not math.isfinite(score) or score < 0:
            raise DecisionError(f"placement score must be finite and >= 0, got {score}")
        self._samples.setdefault((host, op), deque(maxlen=self.k)).append((time, score))

    def scores(self, host: str, op: str) -> list[float]:
        return [s for _, s in self._samples.get((host, op), ())]

    def rsd(self, host: str, op: str) -> float:
        return rsd(self.scores(host, op))

    def amortization_time(self, host: str, op: str, cfg: DecisionConfig) -> float:
        return amortization_time(self.rsd(host, op), cfg.min_at, cfg.max_at)


# -- tuple prediction ------------------------------------------------------------


class Predictor(Protocol):
    def predict(self, horizon: float) -> float:
        """Expected input tuples over the next ``horizon`` seconds."""


@dataclass
class OraclePredictor:
    """Knows the input rate exactly (uniform arrivals)."""

    rate: float

    def predict(self, horizon: float) -> float:
        return max(0.0, self.rate * horizon)

    @classmethod
    def from_total(cls, total: float, horizon: float) -> "OraclePredictor":
        return cls(total / horizon)


@dataclass
class EWMAPredictor:
    """Exponentially weighted input rate; ``half_life`` in seconds."""

    half_life: float = 10.0
    rate: float = 0.0
    _last: float | None = None

    def observe(self, time: float, count: int) -> None:
        """``count`` tuples arrived since the previous observation."""
        if self._last is None:
            self._last = time
            return
        dt = time - self._last
        if dt <= 0:
            return
        alpha = 1.0 - 0.5 ** (dt / self.half_life)
        self.rate += alpha * (count / dt - self.rate)
        self._last = time

    def predict(self, horizon: float) -> float:
        return max(0.0, self.rate * horizon)


def predicted_output_tuples(pt_in: float, selectivity: float) -> float:
    if pt_in < 0 or selectivity < 0:
        raise DecisionError("predicted tuples and selectivity must be >= 0")
    return pt_in * selectivity


def migration_cost(oh: str, nh: str, mt: float, at: float, predictor: Predictor,
                   selectivity: float = 1.0, w_c: float = 1.0) -> float:
    if oh == nh:
        return 0.0
    if predictor is None:
        raise DecisionError("no tuple predictor configured")
    during = predicted_output_tuples(predictor.predict(mt), selectivity)
    horizon = predicted_output_tuples(predictor.predict(at), selectivity)
    if horizon == 0:
        if during == 0:
            return 0.0
        raise UndefinedCostError("no output predicted over the amortization horizon")
    return w_c * during / horizon


def migration_benefit(score: float, cost: float) -> float:
    return score * (1.0 - cost)


def select_host(oh: str, benefits: Mapping[str, float]) -> str:
    """Host with the largest benefit; ties prefer ``oh``, then the lowest id."""
    if not benefits:
        raise DecisionError("empty candidate set")
    best = max(benefits.values())
    tied = [h for h, b in benefits.items() if b == best]
    return oh if oh in tied else min(tied)


def estimate_migration_time(state_bytes: int, bandwidth_bps: float, latency_s: float,
                            n_control: int = 0, control_bytes: int = 168) -> float:
    if bandwidth_bps <= 0:
        raise DecisionError("bandwidth must be > 0")
    return (state_bytes * 8 / bandwidth_bps + latency_s
            + n_control * (control_bytes * 8 / bandwidth_bps + latency_s))


# -- placement scorers -------------------------------------------------------------


class Scorer(Protocol):
    def score(self, host: str) -> float: ...


@dataclass
class OracleScorer:
    scores: Mapping[str, float]

    def score(self, host: str) -> float:
        return float(self.scores[host])


@dataclass
class InverseLatencyScorer:
    """``1 / end-to-end latency`` of the path through each host, in seconds."""

    path_latency: Mapping[str, float]

    def score(self, host: str) -> float:
        lat = self.path_latency[host]
        if lat <= 0:
            raise DecisionError(f"path latency via {host} must be > 0")
        return 1.0 / lat


# -- engine ------------------------------------------------------------------------


@dataclass
class Decision:
    at: float
    scores: dict[str, float]
    costs: dict[str, float]
    benefits: dict[str, float]
    chosen: str
    migrate: bool


def decide(oh: str, candidates: Sequence[str], scorer: Scorer, predictor: Predictor,
           mt: Mapping[str, float], cfg: DecisionConfig, at: float | None = None,
           selectivity: float = 1.0, use_cost: bool = True) -> Decision:
    """One decision check over ``candidates`` (which should include ``oh``)."""
    if not candidates:
        raise DecisionError("empty candidate set")
    if at is None:
        at = cfg.min_at
    scores, costs, benefits = {}, {}, {}
    for h in candidates:
        scores[h] = scorer.score(h)
        w = cfg.weight(h) if use_cost else 0.0
        costs[h] = migration_cost(oh, h, mt.get(h, 0.0), at, predictor, selectivity, w)
        benefits[h] = migration_benefit(scores[h], costs[h])
    chosen = select_host(oh, benefits)
    return Decision(at, scores, costs, benefits, chosen, chosen != oh)


def decision_table(doc: dict) -> list[dict[str, object]]:
    """Rows for a decision scenario: PT, per-host QoS and B_m, and both selections."""
    hosts = list(doc["hosts"])
    oh = doc["current_host"]
    am = doc.get("amortization", {})
    cfg = DecisionConfig(am.get("min_at_s", 5.0), am.get("max_at_s", am.get("min_at_s", 5.0)),
                         doc.get("w_c", 1.0), dict(doc.get("w_c_per_host", {})))
    history = PlacementHistory(doc.get("history_length", 20))
    for h, samples in doc.get("history", {}).items():
        for i, s in enumerate(samples):
            history.add(h, "op", float(i), s)
    mt = dict(doc.get("migration_time_s", {}))
    if "state_bytes" in doc:
        for h, link in doc.get("links", {}).items():
            mt.setdefault(h, estimate_migration_time(
                doc["state_bytes"], link["bandwidth_bps"], link["latency_s"],
                doc.get("control_messages", 0), doc.get("control_message_bytes", 168)))
    mt.setdefault(oh, 0.0)
    sel = doc.get("selectivity", 1.0)
    rows = []
    for check in doc["checks"]:
        for h, s in check["scores"].items():
            history.add(h, "op", check.get("time_s", 0.0), s)
        at = history.amortization_time(oh, "op", cfg) if doc.get("adaptive_at") else cfg.min_at
        pred = OraclePredictor.from_total(check["PT"], at)
        scorer = OracleScorer(check["scores"])
        cm = decide(oh, hosts, scorer, pred, mt, cfg, at, sel, use_cost=True)
        ncm = decide(oh, hosts, scorer, pred, mt, cfg, at, sel, use_cost=False)
        row: dict[str, object] = {"PT": check["PT"]}
        for h in hosts:
            row[f"QoS ({h})"] = cm.scores[h]
            row[f"B_m ({h})"] = cm.benefits[h]
        row["P (CM)"] = cm.chosen
        row["P (NCM)"] = ncm.chosen
        rows.append(row)
    return rows
