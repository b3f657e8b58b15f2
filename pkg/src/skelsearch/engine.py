"""Three-phase skeleton tree search: generate, evaluate, prune.

The search grows a tree rooted at the (schema, question) pair. Phase 1
formulates Base skeletons and prunes them by evaluation. Phase 2 loops
over the surviving frontier: children that do not increase nesting depth
over their parent are discarded unevaluated, and a parent whose candidates
all stall is routed to the Detailed phase; deepening children are
evaluated and, when true, join the frontier. Phase 3 refines each routed
node in two steps (placeholder detailing, then join specification), with
evaluation after each step.

The candidate set S is every Valid skeleton-bearing node without a Valid
child: DetailedStep2 survivors plus any node whose children were all
pruned or never materialized.

Determinism: backend calls within one stage may run concurrently, but
results are merged in (parent id, candidate index) order, so the tree is
identical across concurrency settings.
"""

from __future__ import annotations

from concurrent.futures import Future, ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass, field
from enum import Enum

from .agents import (
    EvaluationVerdict,
    FormulationRequest,
    SearchPhase,
    evaluate,
    formulate,
)
from .normalize import NormalizationOutcome, normalize
from .schema import DatabaseProfile
from .skeleton import Skeleton


class EmptySearch(RuntimeError):
    """Phase 1 produced no Valid Base skeleton; tree attached for fallback."""

    def __init__(self, message: str, tree: "SearchTree"):
        super().__init__(message)
        self.tree = tree


class NodeStatus(Enum):
    VALID = "valid"
    PRUNED = "pruned"
    LEAF = "leaf"


@dataclass
class SearchNode:
    id: int
    parent_id: int | None
    phase: SearchPhase | None
    step: int
    sibling: int
    depth: int
    skeleton: Skeleton | None
    status: NodeStatus


@dataclass
class VerdictRecord:
    node_id: int
    verdict: bool
    reason: str = ""


@dataclass
class SearchConfig:
    m: int = 3
    expanded_cap: int = 5
    concurrency: int = 1
    node_timeout: float | None = None

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("branching bound m must be >= 1")
        if self.expanded_cap < 1:
            raise ValueError("expanded-phase cap must be >= 1")
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")


@dataclass
class SearchTree:
    question: str
    db_id: str
    m: int
    nodes: list[SearchNode] = field(default_factory=list)
    children: dict[int, list[int]] = field(default_factory=dict)
    verdict_log: list[VerdictRecord] = field(default_factory=list)

    def add_root(self) -> SearchNode:
        root = SearchNode(0, None, None, 0, 0, 0, None, NodeStatus.VALID)
        self.nodes.append(root)
        self.children[0] = []
        return root

    def add_child(self, parent: SearchNode, phase: SearchPhase, step: int,
                  skeleton: Skeleton, status: NodeStatus) -> SearchNode:
        sibling = len(self.children[parent.id]) + 1
        node = SearchNode(len(self.nodes), parent.id, phase, step, sibling,
                          parent.depth + 1, skeleton, status)
        self.nodes.append(node)
        self.children[node.id] = []
        self.children[parent.id].append(node.id)
        return node

    def node(self, node_id: int) -> SearchNode:
        return self.nodes[node_id]

    def valid_children(self, node_id: int) -> list[SearchNode]:
        return [self.nodes[c] for c in self.children[node_id]
                if self.nodes[c].status is not NodeStatus.PRUNED]

    def depth(self) -> int:
        return max(n.depth for n in self.nodes)

    def dump(self) -> str:
        """One node per line: id, parent, phase, step, sibling, level,
        status, skeleton text."""
        lines = ["id\tparent\tphase\tstep\tsibling\tlevel\tstatus\tskeleton"]
        for n in self.nodes:
            lines.append("\t".join([
                str(n.id),
                "-" if n.parent_id is None else str(n.parent_id),
                n.phase.value if n.phase else "root",
                str(n.step),
                str(n.sibling),
                n.skeleton.level.label if n.skeleton else "-",
                n.status.value,
                n.skeleton.text if n.skeleton else "-",
            ]))
        return "\n".join(lines) + "\n"


@dataclass
class CostReport:
    n_d: list[int]
    rho: list[float]
    depth: int
    gen_calls: int
    eval_calls: int


def _surviving_counts(tree: SearchTree) -> list[int]:
    counts = [0] * (tree.depth() + 1)
    for n in tree.nodes:
        if n.status is not NodeStatus.PRUNED:
            counts[n.depth] += 1
    return counts


def _cost_report(tree: SearchTree, gen_calls: int,
                 eval_calls: int) -> CostReport:
    n_d = _surviving_counts(tree)
    rho = [0.0]
    for d in range(1, len(n_d)):
        attempted = n_d[d - 1] * tree.m
        rho.append(1.0 - n_d[d] / attempted if attempted else 0.0)
    return CostReport(n_d, rho, tree.depth(), gen_calls, eval_calls)


def compute_cost(tree: SearchTree, unit_gen: float,
                 unit_eval: float) -> float:
    """Total search time under the uniform cost model:
    sum over depths d=1..H of N_{d-1} * (unit_gen + m * unit_eval)."""
    n_d = _surviving_counts(tree)
    return sum(n_d[d - 1] * (unit_gen + tree.m * unit_eval)
               for d in range(1, tree.depth() + 1))


class _Engine:
    def __init__(self, schema: DatabaseProfile, question: str, formulator,
                 evaluator, config: SearchConfig):
        self.schema = schema
        self.question = question
        self.formulator = formulator
        self.evaluator = evaluator
        self.config = config
        self.tree = SearchTree(question, schema.db_id, config.m)
        self.gen_calls = 0
        self.eval_calls = 0
        self.pool = ThreadPoolExecutor(max_workers=config.concurrency)

    def _await(self, future: Future, default):
        try:
            return future.result(timeout=self.config.node_timeout)
        except FutureTimeout:
            return default

    def _formulate_batch(self, parents: list[SearchNode],
                         phase: SearchPhase) -> dict[int, list[Skeleton]]:
        """Formulate children for each parent; normalized, deduplicated."""
        futures = {}
        for parent in parents:
            req = FormulationRequest(self.schema, self.question,
                                     parent.skeleton, phase, self.config.m)
            futures[parent.id] = self.pool.submit(formulate, req,
                                                  self.formulator)
            self.gen_calls += 1
        out: dict[int, list[Skeleton]] = {}
        for parent in parents:
            texts = self._await(futures[parent.id], [])
            seen: set[str] = set()
            skeletons = []
            for text in texts:
                report = normalize(text, phase.target_level)
                if report.outcome is NormalizationOutcome.REJECTED:
                    continue
                if report.skeleton.text in seen:
                    continue
                seen.add(report.skeleton.text)
                skeletons.append(report.skeleton)
            out[parent.id] = skeletons
        return out

    def _evaluate_batch(self, jobs: list[tuple[int, int, Skeleton]],
                        ) -> dict[tuple[int, int], EvaluationVerdict]:
        futures = {}
        for parent_id, index, skeleton in jobs:
            futures[(parent_id, index)] = self.pool.submit(
                evaluate, self.schema, self.question, skeleton,
                self.evaluator)
            self.eval_calls += 1
        timed_out = EvaluationVerdict(False, reason="node timeout")
        return {key: self._await(f, timed_out)
                for key, f in futures.items()}

    def _expand(self, parents: list[SearchNode], phase: SearchPhase,
                step: int, deepening_only: bool = False,
                ) -> tuple[dict[int, list[SearchNode]], list[SearchNode]]:
        """One generate-evaluate-prune round over `parents`.

        Returns (children created per parent, parents whose candidate set
        came back empty after filtering).
        """
        proposals = self._formulate_batch(parents, phase)
        if deepening_only:
            for parent in parents:
                floor = parent.skeleton.nesting_depth
                proposals[parent.id] = [
                    s for s in proposals[parent.id]
                    if s.nesting_depth > floor]
        jobs = [(p.id, i, s) for p in parents
                for i, s in enumerate(proposals[p.id])]
        verdicts = self._evaluate_batch(jobs)
        created: dict[int, list[SearchNode]] = {}
        stalled: list[SearchNode] = []
        for parent in parents:
            created[parent.id] = []
            if not proposals[parent.id]:
                stalled.append(parent)
                continue
            for i, skeleton in enumerate(proposals[parent.id]):
                verdict = verdicts[(parent.id, i)]
                status = (NodeStatus.VALID if verdict.verdict
                          else NodeStatus.PRUNED)
                node = self.tree.add_child(parent, phase, step, skeleton,
                                           status)
                self.tree.verdict_log.append(VerdictRecord(
                    node.id, verdict.verdict, verdict.reason))
                if verdict.verdict:
                    created[parent.id].append(node)
        return created, stalled

    def run(self) -> tuple[list[Skeleton], SearchTree, CostReport]:
        try:
            return self._run()
        finally:
            self.pool.shutdown(wait=False)

    def _run(self) -> tuple[list[Skeleton], SearchTree, CostReport]:
        root = self.tree.add_root()

        created, _ = self._expand([root], SearchPhase.BASE, 1)
        frontier = created[root.id]
        if not frontier:
            raise EmptySearch(
                f"no Base skeleton survived evaluation for question "
                f"{self.question!r}", self.tree)

        ready: list[SearchNode] = []
        for wave in range(1, self.config.expanded_cap + 1):
            if not frontier:
                break
            created, stalled = self._expand(frontier, SearchPhase.EXPANDED,
                                            wave, deepening_only=True)
            ready.extend(stalled)
            frontier = [child for parent in frontier
                        for child in created[parent.id]]
        else:
            ready.extend(frontier)

        ready.sort(key=lambda n: n.id)
        created, _ = self._expand(ready, SearchPhase.DETAILED_STEP1, 1)
        step1 = [child for parent in ready for child in created[parent.id]]
        if step1:
            self._expand(step1, SearchPhase.DETAILED_STEP2, 2)

        for node in self.tree.nodes:
            if node.skeleton is not None and \
                    node.status is NodeStatus.VALID and \
                    not self.tree.valid_children(node.id):
                node.status = NodeStatus.LEAF
        leaves = [n.skeleton for n in self.tree.nodes
                  if n.status is NodeStatus.LEAF]
        return leaves, self.tree, _cost_report(self.tree, self.gen_calls,
                                               self.eval_calls)


def run_search(schema: DatabaseProfile, question: str, formulator, evaluator,
               config: SearchConfig | None = None,
               ) -> tuple[list[Skeleton], SearchTree, CostReport]:
    """Run the full three-phase search.

    Raises:
        EmptySearch: Phase 1 pruned every Base skeleton; the partial tree
            rides on the exception.
        Exception: unrecoverable backend failures (for example a cassette
            miss) propagate with the partial tree attached as
            `partial_tree`.
    """
    if not question or not question.strip():
        raise ValueError("question is empty")
    engine = _Engine(schema, question, formulator, evaluator,
                     config or SearchConfig())
    try:
        return engine.run()
    except EmptySearch:
        raise
    except Exception as exc:
        exc.partial_tree = engine.tree
        raise
