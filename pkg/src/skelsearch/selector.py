"""Candidate execution and execution-result majority voting.

Every SQL candidate runs against a read-only copy of the target database
under a wall-clock timeout and a row cap. Results are reduced to a
fingerprint: a hash over canonicalized cells, order-insensitive unless
the outermost query has ORDER BY. Candidates whose fingerprints agree
form a vote group; the largest group wins, ties go to an arbitrator
backend with a deterministic fallback, and when nothing executed to a
row set the selector falls back to the most detailed surviving
candidate. Selection is a pure function of (candidates, outcomes), so
shuffling candidate order never changes the winning fingerprint.
"""

from __future__ import annotations

import hashlib
import re
import sqlite3
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

from .agents import BackendError, load_template
from .gateway import LlmGateway, TransportError
from .schema import DatabaseProfile
from .skeleton import parse_query
from .sqlast import SqlSyntaxError
from .sqlgen import SqlCandidate

FETCH_CHUNK = 2048
PREVIEW_ROWS = 5
CHOICE_MARKER = re.compile(r"^\s*CHOICE:\s*(\d+)\s*$",
                           re.MULTILINE | re.IGNORECASE)


class ArbitrationError(RuntimeError):
    """The arbitrator backend failed or answered out of protocol."""


class OutcomeStatus(Enum):
    ROWS = "rows"
    EMPTY = "empty"
    ERROR = "error"


@dataclass
class ExecutionLimits:
    timeout: float = 30.0
    row_cap: int = 100_000

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.row_cap < 1:
            raise ValueError("row_cap must be at least 1")


@dataclass
class ExecutionOutcome:
    """What one candidate did when executed.

    fingerprint is present exactly when status is ROWS.
    """

    status: OutcomeStatus
    fingerprint: str | None = None
    error: str = ""
    row_count: int = 0
    wall_time: float = 0.0
    preview: list[str] = field(default_factory=list)


def canonical_cell(value) -> str:
    """Stable token for one result cell; numerics bucket at 1e-6."""
    if value is None:
        return "NULL"
    if isinstance(value, bytes):
        return "b:" + value.hex()
    if isinstance(value, (int, float)):
        if value == 0:
            value = 0
        return "n:" + format(value, ".6e")
    return "s:" + str(value)


def canonical_row(row) -> str:
    return "\x1f".join(canonical_cell(cell) for cell in row)


def fingerprint_rows(rows, ordered: bool) -> str:
    """Hash of the result set; sequence-sensitive only when ordered."""
    canon = [canonical_row(row) for row in rows]
    if not ordered:
        canon.sort()
    prefix = "seq" if ordered else "bag"
    digest = hashlib.sha256(
        "\x1e".join([prefix] + canon).encode("utf-8")).hexdigest()
    return f"{prefix}:{digest}"


def _is_ordered(sql: str) -> bool:
    try:
        tree = parse_query(sql)
    except (SqlSyntaxError, ValueError):
        return False
    return tree.stmt.order_by is not None


def execute_candidate(profile: DatabaseProfile, candidate: SqlCandidate,
                      limits: ExecutionLimits | None = None
                      ) -> ExecutionOutcome:
    """Run one candidate read-only under the configured limits."""
    limits = limits or ExecutionLimits()
    if candidate.failed:
        return ExecutionOutcome(OutcomeStatus.ERROR,
                                error=candidate.error or "generation failed")
    if not profile.path:
        return ExecutionOutcome(OutcomeStatus.ERROR,
                                error="profile has no database file")
    started = time.monotonic()
    try:
        conn = sqlite3.connect(f"file:{profile.path}?mode=ro", uri=True)
    except sqlite3.Error as exc:
        return ExecutionOutcome(OutcomeStatus.ERROR, error=str(exc),
                                wall_time=time.monotonic() - started)
    timer = threading.Timer(limits.timeout, conn.interrupt)
    timer.daemon = True
    timer.start()
    rows: list[tuple] = []
    capped = False
    try:
        cursor = conn.execute(candidate.sql)
        while True:
            chunk = cursor.fetchmany(FETCH_CHUNK)
            if not chunk:
                break
            rows.extend(chunk)
            if len(rows) > limits.row_cap:
                capped = True
                break
    except sqlite3.Error as exc:
        return ExecutionOutcome(OutcomeStatus.ERROR, error=str(exc),
                                wall_time=time.monotonic() - started)
    finally:
        timer.cancel()
        conn.close()
    wall = time.monotonic() - started
    if capped:
        return ExecutionOutcome(
            OutcomeStatus.ERROR,
            error=f"row cap exceeded ({limits.row_cap} rows)",
            wall_time=wall)
    if not rows:
        return ExecutionOutcome(OutcomeStatus.EMPTY, wall_time=wall)
    fingerprint = fingerprint_rows(rows, _is_ordered(candidate.sql))
    preview = [canonical_row(row) for row in rows[:PREVIEW_ROWS]]
    return ExecutionOutcome(OutcomeStatus.ROWS, fingerprint=fingerprint,
                            row_count=len(rows), wall_time=wall,
                            preview=preview)


def execute_all(profile: DatabaseProfile, candidates: list[SqlCandidate],
                limits: ExecutionLimits | None = None,
                workers: int = 1) -> list[ExecutionOutcome]:
    """Outcomes aligned with the candidate list regardless of workers."""
    if workers <= 1 or len(candidates) <= 1:
        return [execute_candidate(profile, c, limits) for c in candidates]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(execute_candidate, profile, c, limits)
                   for c in candidates]
        return [f.result() for f in futures]


@dataclass
class VoteGroup:
    fingerprint: str
    members: list[SqlCandidate]
    size: int
    row_count: int = 0
    preview: list[str] = field(default_factory=list)


@dataclass
class DecisionTrace:
    winner_sql: str
    chosen_fingerprint: str | None
    rule: str  # majority | arbitrated | arbitration-fallback | no-valid-results
    groups: list[VoteGroup]
    notes: str = ""

    def to_dict(self) -> dict:
        return {
            "winner_sql": self.winner_sql,
            "chosen_fingerprint": self.chosen_fingerprint,
            "rule": self.rule,
            "notes": self.notes,
            "groups": [{"fingerprint": g.fingerprint, "size": g.size,
                        "row_count": g.row_count,
                        "sqls": [c.sql for c in g.members]}
                       for g in self.groups],
        }


def group_candidates(candidates: list[SqlCandidate],
                     outcomes: list[ExecutionOutcome]) -> list[VoteGroup]:
    """Vote groups over ROWS outcomes, ordered by first appearance."""
    if len(candidates) != len(outcomes):
        raise ValueError("candidates and outcomes differ in length")
    groups: dict[str, VoteGroup] = {}
    for candidate, outcome in zip(candidates, outcomes):
        if outcome.status is not OutcomeStatus.ROWS:
            continue
        group = groups.get(outcome.fingerprint)
        if group is None:
            groups[outcome.fingerprint] = VoteGroup(
                outcome.fingerprint, [candidate], 1,
                row_count=outcome.row_count,
                preview=list(outcome.preview))
        else:
            group.members.append(candidate)
            group.size += 1
    return list(groups.values())


def _representative(members: list[SqlCandidate]) -> SqlCandidate:
    """Highest skeleton granularity, then lexicographically smallest SQL."""
    return min(members, key=lambda c: (-int(c.skeleton.level), c.sql))


def select_final(candidates: list[SqlCandidate],
                 outcomes: list[ExecutionOutcome],
                 arbitrator=None,
                 question: str = "") -> tuple[SqlCandidate, DecisionTrace]:
    """Pick the final SQL by execution-result majority."""
    if not candidates:
        raise ValueError("no candidates to select from")
    groups = group_candidates(candidates, outcomes)
    if not groups:
        pool = [c for c, o in zip(candidates, outcomes)
                if o.status is not OutcomeStatus.ERROR]
        notes = "no valid results"
        if not pool:
            pool = list(candidates)
            notes = "no valid results; every candidate errored"
        winner = _representative(pool)
        return winner, DecisionTrace(winner.sql, None, "no-valid-results",
                                     groups, notes)
    top = max(group.size for group in groups)
    tied = [group for group in groups if group.size == top]
    if len(tied) == 1:
        group = tied[0]
        winner = _representative(group.members)
        return winner, DecisionTrace(winner.sql, group.fingerprint,
                                     "majority", groups)
    if arbitrator is not None:
        try:
            index = arbitrator.choose(question, tied)
            if not isinstance(index, int) or not 0 <= index < len(tied):
                raise ArbitrationError(f"choice {index!r} out of range")
            group = tied[index]
            winner = _representative(group.members)
            notes = f"arbitrator chose group {index + 1} of {len(tied)}"
            return winner, DecisionTrace(winner.sql, group.fingerprint,
                                         "arbitrated", groups, notes)
        except ArbitrationError as exc:
            notes = f"arbitration failed: {exc}"
    else:
        notes = "tie with no arbitrator configured"
    reps = [(_representative(group.members), group) for group in tied]
    winner, group = min(reps,
                        key=lambda p: (-int(p[0].skeleton.level), p[0].sql))
    return winner, DecisionTrace(winner.sql, group.fingerprint,
                                 "arbitration-fallback", groups, notes)


def build_arbitration_prompt(question: str, tied: list[VoteGroup]) -> str:
    blocks = []
    for number, group in enumerate(tied, start=1):
        lines = [f"Group {number} ({group.size} candidates, "
                 f"{group.row_count} rows):",
                 f"SQL: {_representative(group.members).sql}"]
        for row in group.preview:
            lines.append("  row: " + row.replace("\x1f", " | "))
        blocks.append("\n".join(lines))
    return load_template("arbitrate").format(question=question,
                                             groups="\n\n".join(blocks))


class LlmArbitratorBackend:
    """Tie arbitration over a gateway; answers CHOICE: <n>."""

    def __init__(self, gateway: LlmGateway):
        self.gateway = gateway

    def choose(self, question: str, tied: list[VoteGroup]) -> int:
        prompt = build_arbitration_prompt(question, tied)
        try:
            response = self.gateway.complete(prompt, stage="arbitrate")
        except (BackendError, TransportError) as exc:
            raise ArbitrationError(f"backend error: {exc}") from exc
        matches = CHOICE_MARKER.findall(response)
        if not matches:
            raise ArbitrationError("no choice marker in response")
        return int(matches[-1]) - 1


class ScriptedArbitratorBackend:
    """Test double returning a fixed 0-based group index."""

    def __init__(self, choice):
        self.choice = choice
        self.calls: list[tuple] = []

    def choose(self, question: str, tied: list[VoteGroup]) -> int:
        self.calls.append((question, [g.fingerprint for g in tied]))
        if isinstance(self.choice, Exception):
            raise self.choice
        return self.choice
