"""Command-line front end.

Exit codes: 0 on success (including runs with failed items, which are
recorded in the report), 2 on configuration errors such as bad paths,
bad config files, unparsable SQL arguments, or invalid flag values.
"""

from __future__ import annotations

import argparse
import json
import sqlite3
import sys

from .bench import (
    BenchConfigError,
    RunSettings,
    load_settings,
    recompute_report,
    resolve_database,
    run_benchmark,
)
from .agents import GoldFormulationBackend, GoldOracleEvaluationBackend
from .engine import EmptySearch, run_search
from .schema import profile_from_sqlite, render_mschema
from .selector import ExecutionLimits, execute_all, select_final
from .sftdata import DatasetBuildError, TemplateAnnotator, build_dataset
from .skeleton import GranularityLevel, extract_skeleton, parse_query
from .sqlast import SqlSyntaxError
from .sqlgen import GoldEchoGenerationBackend, SqlCandidate, generate_all

LEVELS = ("base", "expanded", "detailed")


def _emit(payload) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False))


def _profile(db_path, db_id=None):
    try:
        return profile_from_sqlite(db_path, db_id=db_id)
    except (OSError, sqlite3.Error) as exc:
        raise BenchConfigError(f"cannot open database: {exc}") from exc


def _gold_backends(question: str, gold: str):
    golds = {question: gold}
    return (GoldFormulationBackend(golds),
            GoldOracleEvaluationBackend(golds),
            GoldEchoGenerationBackend(golds),
            None)


def cmd_run(args) -> int:
    settings = load_settings(args.config) if args.config else RunSettings()
    report = run_benchmark(args.dataset, args.db_root, out_dir=args.out,
                           settings=settings)
    print(f"items={report['items']} ex={report['ex']:.4f} "
          f"pass@k={report['pass_at_k']:.4f} "
          f"flagged={len(report['flagged'])}")
    print(f"report written to {args.out}/report.json")
    return 0


def cmd_search(args) -> int:
    profile = _profile(args.db)
    settings = load_settings(args.config) if args.config else RunSettings()
    if args.gold:
        formulator, evaluator, _, _ = _gold_backends(args.question, args.gold)
    elif settings.mode == "gold":
        raise BenchConfigError("gold mode needs --gold SQL")
    else:
        from .bench import _build_backends
        formulator, evaluator = _build_backends(settings, [])[:2]
    try:
        leaves, tree, cost = run_search(profile, args.question, formulator,
                                        evaluator, settings.search)
    except EmptySearch as exc:
        print("empty search: every Base skeleton was pruned",
              file=sys.stderr)
        print(exc.tree.dump())
        return 0
    print(tree.dump())
    _emit({"leaves": [{"level": s.level.label, "text": s.text}
                      for s in leaves],
           "cost": {"n_d": cost.n_d, "rho": cost.rho, "depth": cost.depth,
                    "gen_calls": cost.gen_calls,
                    "eval_calls": cost.eval_calls}})
    return 0


def cmd_extract_skeleton(args) -> int:
    try:
        tree = parse_query(args.sql)
    except (SqlSyntaxError, ValueError) as exc:
        raise BenchConfigError(f"cannot parse SQL: {exc}") from exc
    levels = LEVELS if args.level == "all" else (args.level,)
    for name in levels:
        skeleton = extract_skeleton(tree, GranularityLevel.from_name(name))
        print(f"{name}: {skeleton.text}")
    return 0


def cmd_generate(args) -> int:
    profile = _profile(args.db)
    if not args.gold:
        raise BenchConfigError("offline generation needs --gold SQL")
    try:
        tree = parse_query(args.gold)
    except (SqlSyntaxError, ValueError) as exc:
        raise BenchConfigError(f"cannot parse gold SQL: {exc}") from exc
    skeletons = [extract_skeleton(tree, level) for level in (
        GranularityLevel.BASE, GranularityLevel.EXPANDED,
        GranularityLevel.DETAILED)]
    backend = GoldEchoGenerationBackend({args.question: args.gold})
    candidates = generate_all(profile, args.question, skeletons, backend)
    _emit([{"skeleton": c.skeleton.text, "sql": c.sql,
            "failed": c.failed, "error": c.error} for c in candidates])
    return 0


def _load_candidate_records(path):
    try:
        with open(path, encoding="utf-8") as handle:
            rows = json.load(handle)
    except OSError as exc:
        raise BenchConfigError(f"cannot read candidates: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise BenchConfigError(f"bad candidates JSON: {exc}") from exc
    if not isinstance(rows, list) or not rows:
        raise BenchConfigError("candidates must be a non-empty JSON list")
    records = []
    for row in rows:
        if isinstance(row, str):
            records.append((row, "detailed"))
        elif isinstance(row, dict) and "sql" in row:
            records.append((row["sql"], row.get("level", "detailed")))
        else:
            raise BenchConfigError(f"bad candidate entry: {row!r}")
    return records


def _candidate_skeleton(sql: str, level_name: str):
    level = GranularityLevel.from_name(level_name)
    try:
        return extract_skeleton(parse_query(sql), level)
    except (SqlSyntaxError, ValueError):
        return extract_skeleton(parse_query("SELECT a FROM t"), level)


def cmd_select(args) -> int:
    profile = _profile(args.db)
    records = _load_candidate_records(args.candidates)
    candidates = [SqlCandidate(sql, _candidate_skeleton(sql, level))
                  for sql, level in records]
    limits = ExecutionLimits(timeout=args.timeout, row_cap=args.row_cap)
    outcomes = execute_all(profile, candidates, limits)
    winner, trace = select_final(candidates, outcomes,
                                 question=args.question or "")
    _emit({"final_sql": winner.sql, "trace": trace.to_dict(),
           "outcomes": [{"status": o.status.value,
                         "fingerprint": o.fingerprint, "error": o.error,
                         "rows": o.row_count} for o in outcomes]})
    return 0


def cmd_build_sft_data(args) -> int:
    try:
        with open(args.corpus, encoding="utf-8") as handle:
            rows = json.load(handle)
    except OSError as exc:
        raise BenchConfigError(f"cannot read corpus: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise BenchConfigError(f"bad corpus JSON: {exc}") from exc
    if not isinstance(rows, list) or not rows:
        raise BenchConfigError("corpus must be a non-empty JSON list")
    profiles = {}
    corpus = []
    for index, row in enumerate(rows):
        gold = row.get("SQL") or row.get("query") or row.get("gold_sql")
        question = row.get("question")
        db_id = row.get("db_id")
        if not (gold and question and db_id):
            raise BenchConfigError(
                f"corpus item {index} lacks question/db_id/SQL fields")
        if db_id not in profiles:
            profiles[db_id] = _profile(
                resolve_database(args.db_root, db_id), db_id=db_id)
        corpus.append((question, gold, profiles[db_id]))
    try:
        summary = build_dataset(corpus, args.out,
                                pairs_per_level=args.pairs_per_level,
                                annotator=TemplateAnnotator(),
                                seed=args.seed)
    except (SqlSyntaxError, ValueError) as exc:
        raise BenchConfigError(f"corpus rejected: {exc}") from exc
    except DatasetBuildError as exc:
        raise BenchConfigError(str(exc)) from exc
    _emit({"path": summary.path, "examples": summary.examples,
           "per_level": summary.per_level,
           "skipped": len(summary.skipped)})
    return 0


def cmd_stats(args) -> int:
    report = recompute_report(args.run_dir)
    _emit({"items": report["items"], "ex": report["ex"],
           "pass_at_k": report["pass_at_k"],
           "per_difficulty": report["per_difficulty"]})
    return 0


def cmd_replay(args) -> int:
    report = recompute_report(args.run_dir)
    _emit({key: report[key] for key in
           ("items", "ex", "pass_at_k", "flagged", "per_difficulty")})
    return 0


def cmd_schema(args) -> int:
    print(render_mschema(_profile(args.db)), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skelsearch",
        description="Coarse-to-fine skeleton search for text-to-SQL.",
        epilog="Exit codes: 0 success; 2 configuration errors.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="full benchmark run")
    p.add_argument("--dataset", required=True)
    p.add_argument("--db-root", required=True)
    p.add_argument("--config", default="")
    p.add_argument("--out", default="runs")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("search", help="skeleton search for one question")
    p.add_argument("--db", required=True)
    p.add_argument("--question", required=True)
    p.add_argument("--gold", default="")
    p.add_argument("--config", default="")
    p.set_defaults(fn=cmd_search)

    p = sub.add_parser("extract-skeleton",
                       help="skeleton of a SQL statement")
    p.add_argument("--sql", required=True)
    p.add_argument("--level", default="all", choices=("all",) + LEVELS)
    p.set_defaults(fn=cmd_extract_skeleton)

    p = sub.add_parser("generate",
                       help="SQL candidates from gold-derived skeletons")
    p.add_argument("--db", required=True)
    p.add_argument("--question", required=True)
    p.add_argument("--gold", default="")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("select", help="execute and vote over candidates")
    p.add_argument("--db", required=True)
    p.add_argument("--candidates", required=True,
                   help="JSON list of SQL strings or {sql, level} objects")
    p.add_argument("--question", default="")
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--row-cap", type=int, default=100_000)
    p.set_defaults(fn=cmd_select)

    p = sub.add_parser("build-sft-data",
                       help="synthesize the evaluation training set")
    p.add_argument("--corpus", required=True)
    p.add_argument("--db-root", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pairs-per-level", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_build_sft_data)

    p = sub.add_parser("stats", help="per-difficulty stats from a run")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("replay",
                       help="recompute a report from item checkpoints")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("schema", help="render a database as M-Schema")
    p.add_argument("--db", required=True)
    p.set_defaults(fn=cmd_schema)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ValueError as exc:  # BenchConfigError and bad flag values
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
