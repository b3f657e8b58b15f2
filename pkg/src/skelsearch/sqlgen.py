"""SQL candidate generation from finished skeletons.

Each skeleton in the search output S yields at most one SQL candidate via
a zero-shot prompt: M-Schema rendering, question, skeleton, instruction.
Responses are post-processed (fences stripped, first statement taken) but
never validated here; execution screens them later. A failed generation
produces a candidate marked failed so downstream counts stay aligned
with S.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .agents import BackendError, load_template
from .gateway import LlmGateway, TransportError, UsageEntry, estimate_tokens
from .normalize import _strip_wrapping
from .schema import DatabaseProfile, render_mschema
from .skeleton import Skeleton


@dataclass
class SqlCandidate:
    sql: str
    skeleton: Skeleton
    usage: UsageEntry | None = None
    failed: bool = False
    error: str = ""


def build_generation_prompt(profile: DatabaseProfile, question: str,
                            skeleton: Skeleton) -> str:
    return load_template("generate_sql").format(
        schema=render_mschema(profile).rstrip("\n"),
        question=question,
        skeleton=skeleton.text,
    )


def extract_statement(response: str) -> str:
    """First complete statement of a response, fences and labels removed."""
    body, _ = _strip_wrapping(response)
    if body.upper().startswith("SQL:"):
        body = body[4:].strip()
    statement = body.split(";")[0].strip()
    return " ".join(statement.split())


def generate_sql(profile: DatabaseProfile, question: str,
                 skeleton: Skeleton, backend) -> SqlCandidate:
    """Produce one candidate; backend failures mark it failed."""
    started = time.monotonic()
    try:
        response = backend.write_sql(profile, question, skeleton)
    except (BackendError, TransportError) as exc:
        return SqlCandidate("", skeleton, None, failed=True,
                            error=f"generation failed: {exc}")
    latency = time.monotonic() - started
    sql = extract_statement(response)
    usage = UsageEntry("generate", estimate_tokens(question),
                       estimate_tokens(response), latency)
    if not sql:
        return SqlCandidate("", skeleton, usage, failed=True,
                            error="empty generation output")
    return SqlCandidate(sql, skeleton, usage)


def generate_all(profile: DatabaseProfile, question: str,
                 skeletons: list[Skeleton], backend,
                 workers: int = 1) -> list[SqlCandidate]:
    """One candidate per skeleton, ordered like the input regardless of
    completion order."""
    if workers <= 1 or len(skeletons) <= 1:
        return [generate_sql(profile, question, s, backend)
                for s in skeletons]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(generate_sql, profile, question, s, backend)
                   for s in skeletons]
        return [f.result() for f in futures]


class LlmGenerationBackend:
    """Generation over a gateway with the zero-shot prompt."""

    def __init__(self, gateway: LlmGateway):
        self.gateway = gateway

    def write_sql(self, profile: DatabaseProfile, question: str,
                  skeleton: Skeleton) -> str:
        prompt = build_generation_prompt(profile, question, skeleton)
        return self.gateway.complete(prompt, stage="generate")


class ScriptedGenerationBackend:
    """Table double: (question, skeleton text) -> SQL text."""

    def __init__(self, table: dict):
        self.table = dict(table)
        self.calls: list[tuple] = []

    def write_sql(self, profile: DatabaseProfile, question: str,
                  skeleton: Skeleton) -> str:
        key = (question, skeleton.text)
        self.calls.append(key)
        value = self.table.get(key)
        if value is None:
            raise BackendError(f"no scripted SQL for {key!r}")
        if isinstance(value, Exception):
            raise value
        return value


class GoldEchoGenerationBackend:
    """Echoes the gold SQL regardless of skeleton (oracle upper bound)."""

    def __init__(self, gold_sql: str | dict):
        self.gold_sql = gold_sql

    def write_sql(self, profile: DatabaseProfile, question: str,
                  skeleton: Skeleton) -> str:
        if isinstance(self.gold_sql, dict):
            return self.gold_sql[question]
        return self.gold_sql
