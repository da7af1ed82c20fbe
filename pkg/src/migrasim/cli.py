"""Command line: run, compare, decide, validate.

Results go to stdout and, with ``--out-dir``, to files. Exit codes: 0 ok,
2 invalid scenario or arguments, 3 correctness failure (sink output differs
from the baseline, or the migration did not complete).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .algorithms import AlgorithmVariant, VariantRejected, run_migration, simulate
from .decision import DecisionError, decision_table
from .metrics import COLUMNS, MetricsRecord, to_csv, to_json, trace_json
from .protocol.tasks import TaskSyntaxError
from .scenario import ScenarioError, apply, load, load_decision, validate, validate_decision

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_INCORRECT = 3

COMPARE_COLUMNS = ["scenario", "variant", "seed", "status", "correct", "state_size_bytes",
                   "extraction_time", "loading_time", "state_movement_time", "freeze_time",
                   "bytes_duplicated_upstream", "bytes_state_moved", "sink_outputs"]

log = logging.getLogger("migrasim")


def _setup_logging() -> None:
    level = os.environ.get("MIGRASIM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _emit(text: str, out_dir: str | None, filename: str) -> None:
    sys.stdout.write(text)
    if out_dir:
        path = Path(out_dir)
        path.mkdir(parents=True, exist_ok=True)
        (path / filename).write_text(text)


def _records(records: list[MetricsRecord], fmt: str, columns: Sequence[str] = COLUMNS) -> str:
    if fmt == "json":
        rows = json.loads(to_json(records))
        return json.dumps([{c: r[c] for c in columns} for r in rows], indent=2) + "\n"
    return to_csv(records, columns)


def _report_invalid(exc: Exception) -> int:
    if isinstance(exc, ScenarioError):
        for path, msg in exc.problems:
            print(f"error: {path}: {msg}", file=sys.stderr)
    else:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_INVALID


def _run_one(doc: dict) -> tuple[MetricsRecord, object]:
    m = doc.get("migration")
    if not m or not m.get("enabled", True):
        result = simulate(doc, migrate=False)
        n = len(result.sink_outputs())
        rec = MetricsRecord(scenario=doc.get("name", ""), variant="none",
                            seed=doc.get("seed", 0), status="no-migration",
                            sink_outputs=n, baseline_outputs=n)
        return rec, result
    return run_migration(doc)


def cmd_run(args: argparse.Namespace) -> int:
    try:
        doc = apply(load(args.scenario), args.seed, args.variant)
        validate(doc)
        rec, result = _run_one(doc)
    except (ScenarioError, VariantRejected, TaskSyntaxError, ValueError) as exc:
        return _report_invalid(exc)
    ext = "json" if args.format == "json" else "csv"
    _emit(_records([rec], args.format), args.out_dir, f"metrics.{ext}")
    if args.trace:
        text = trace_json(result.log)
        if args.out_dir:
            Path(args.out_dir, "trace.json").write_text(text)
        else:
            print("warning: --trace needs --out-dir; trace not written", file=sys.stderr)
    if not rec.correct:
        print(f"correctness failure: {rec.error}", file=sys.stderr)
        return EXIT_INCORRECT
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    try:
        base = load(args.scenario)
        variants = args.variants or [v.name for v in AlgorithmVariant]
        for v in variants:
            AlgorithmVariant.parse(v)
        seeds = args.seeds or [args.seed if args.seed is not None else base.get("seed", 0)]
        records = []
        for seed in seeds:
            for v in variants:
                doc = apply(base, seed, v)
                records.append(run_migration(doc)[0])
    except (ScenarioError, VariantRejected, TaskSyntaxError, ValueError) as exc:
        return _report_invalid(exc)
    ext = "json" if args.format == "json" else "csv"
    _emit(_records(records, args.format, COMPARE_COLUMNS), args.out_dir, f"compare.{ext}")
    bad = [r for r in records if not r.correct]
    for r in bad:
        print(f"correctness failure ({r.variant}, seed {r.seed}): {r.error}", file=sys.stderr)
    return EXIT_INCORRECT if bad else EXIT_OK


def _fmt(v: object) -> str:
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def cmd_decide(args: argparse.Namespace) -> int:
    try:
        doc = load_decision(args.scenario)
        rows = decision_table(doc)
    except (ScenarioError, DecisionError) as exc:
        return _report_invalid(exc)
    if args.format == "json":
        text = json.dumps(rows, indent=2) + "\n"
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(rows[0]))
        for r in rows:
            w.writerow([_fmt(v) for v in r.values()])
        text = buf.getvalue()
    _emit(text, args.out_dir, "decision." + ("json" if args.format == "json" else "csv"))
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        raw = json.loads(Path(args.scenario).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        return _report_invalid(ScenarioError([("$", f"malformed JSON: {exc}")]))
    try:
        if isinstance(raw, dict) and raw.get("schema", "").startswith("migrasim-decision"):
            validate_decision(raw)
        else:
            validate(raw)
    except ScenarioError as exc:
        return _report_invalid(exc)
    print(f"{args.scenario}: ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="migrasim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"migrasim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("scenario", help="scenario JSON file")
        sp.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        sp.add_argument("--out-dir", default=None, help="also write results here")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")

    sp = sub.add_parser("run", help="run one migration and print its metrics")
    common(sp)
    sp.add_argument("--variant", default=None, help="override the migration variant")
    sp.add_argument("--trace", action="store_true", help="write the event log to trace.json")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("compare", help="run several variants on the same scenario")
    common(sp)
    sp.add_argument("variants", nargs="*", help="variant names (default: all)")
    sp.add_argument("--seeds", type=int, nargs="+", default=None, help="run each seed")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("decide", help="evaluate a decision scenario")
    sp.add_argument("scenario")
    sp.add_argument("--out-dir", default=None)
    sp.add_argument("--format", choices=("csv", "json"), default="csv")
    sp.set_defaults(func=cmd_decide)

    sp = sub.add_parser("validate", help="check a scenario file")
    sp.add_argument("scenario")
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
