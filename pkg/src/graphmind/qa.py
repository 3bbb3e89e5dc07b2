"""Plan-driven question answering over the memory graph.

Flow for one question: optional preprocessing into sub-questions, then per
sub-question a search plan whose steps are executed one by one (entity
extraction, vertex matching, clue-query generation, graph retrieval,
relevance filtering, clue answers, step summary, sufficiency check and plan
enhancement), and finally aggregation of the sub-answers.
"""

from __future__ import annotations

import heapq
import logging
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, TypeVar

from graphmind.errors import EmptyIndex, GraphMindError, UnknownNamespace, UnparsableBool
from graphmind.graph import MemoryGraph, Triple, VertexKind
from graphmind.llmio import LlmGateway, parse_bool, parse_list, render_numbered
from graphmind.memorize import OBJECTS_NS
from graphmind.prompts import NO_ANSWER, NOT_ENOUGH_INFO
from graphmind.traverse import (
    ALL,
    Combo,
    Restriction,
    RetrievalConfig,
    Retriever,
)
from graphmind.vecindex import VectorIndex

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

DEFAULT_ANSWER_KINDS = frozenset({VertexKind.OBJECT, VertexKind.THESIS})


@dataclass(frozen=True)
class PipelineConfig:
    max_steps: int = 8
    max_clue_queries: int = 4
    max_matched_vertices: int = 3
    max_filtered_triples: int = 25
    enable_preprocess: bool = False
    enable_plan_enhancement: bool = True
    combo: Combo = Combo.BS_WC
    restriction: Restriction = ALL
    # triples touching any other kind are dropped at the relevance filter
    answer_kinds: frozenset[VertexKind] = DEFAULT_ANSWER_KINDS
    parallelism: int = 0  # 0 means one worker per task
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)

    def __post_init__(self) -> None:
        for name in ("max_steps", "max_clue_queries", "max_matched_vertices", "max_filtered_triples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.parallelism < 0:
            raise ValueError("parallelism must be >= 0")
        object.__setattr__(self, "combo", Combo(self.combo))
        object.__setattr__(self, "answer_kinds", frozenset(VertexKind(k) for k in self.answer_kinds))

    def to_dict(self) -> dict[str, Any]:
        retrieval = asdict(self.retrieval)
        retrieval["beam"]["final_sorting_mode"] = self.retrieval.beam.final_sorting_mode.value
        return {
            "max_steps": self.max_steps,
            "max_clue_queries": self.max_clue_queries,
            "max_matched_vertices": self.max_matched_vertices,
            "max_filtered_triples": self.max_filtered_triples,
            "enable_preprocess": self.enable_preprocess,
            "enable_plan_enhancement": self.enable_plan_enhancement,
            "combo": self.combo.value,
            "restriction": self.restriction.name,
            "answer_kinds": sorted(k.value for k in self.answer_kinds),
            "parallelism": self.parallelism,
            "retrieval": retrieval,
        }


@dataclass
class SearchPlan:
    """Ordered search steps plus the answers of the steps already executed.

    Steps before ``cursor`` are done; ``step_answers`` holds one entry per
    done step.
    """

    steps: list[str]
    step_answers: list[str] = field(default_factory=list)

    @property
    def cursor(self) -> int:
        return len(self.step_answers) + 1

    @property
    def done_steps(self) -> list[str]:
        return self.steps[: len(self.step_answers)]

    @property
    def pending_steps(self) -> list[str]:
        return self.steps[len(self.step_answers) :]

    def statuses(self) -> list[str]:
        return ["done" if i < len(self.step_answers) else "pending" for i in range(len(self.steps))]


@dataclass(frozen=True)
class ClueQuery:
    text: str
    step_index: int
    vertex_group: tuple[int, ...]


@dataclass(frozen=True)
class Candidate:
    vertex_id: int
    name: str
    score: float


@dataclass(frozen=True)
class CandidateMatrix:
    entities: tuple[str, ...]
    rows: tuple[tuple[Candidate, ...], ...]

    def to_dict(self) -> list[dict[str, Any]]:
        return [
            {"entity": e, "candidates": [asdict(c) for c in row]}
            for e, row in zip(self.entities, self.rows)
        ]


# -- trace records ---------------------------------------------------------------


@dataclass
class ClueTrace:
    text: str
    group: list[dict[str, Any]]
    raw_triples: list[str] = field(default_factory=list)
    filtered_triples: list[str] = field(default_factory=list)
    clue_answer: str | None = None


@dataclass
class StepTrace:
    index: int
    step: str
    entities: list[str] = field(default_factory=list)
    matrix: list[dict[str, Any]] = field(default_factory=list)
    groups: list[list[int]] = field(default_factory=list)
    clue_queries: list[ClueTrace] = field(default_factory=list)
    step_answer: str | None = None
    summarized_by_llm: bool = False
    sufficient: bool | None = None
    enhancement: dict[str, Any] | None = None


@dataclass
class SubQuestionTrace:
    question: str
    plan_history: list[list[str]] = field(default_factory=list)
    steps: list[StepTrace] = field(default_factory=list)
    answer: str | None = None
    no_answer: bool = False
    error: str | None = None


@dataclass
class AnswerTrace:
    question: str
    config: dict[str, Any]
    preprocess: dict[str, Any] = field(default_factory=dict)
    sub_questions: list[SubQuestionTrace] = field(default_factory=list)
    aggregate: dict[str, Any] = field(default_factory=dict)
    answer: str | None = None
    error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "question": self.question,
            "config": self.config,
            "stages": {
                "preprocess": self.preprocess,
                "sub_questions": [asdict(s) for s in self.sub_questions],
                "aggregate": self.aggregate,
            },
            "answer": self.answer,
            "error": self.error,
        }


def is_insufficient(text: str) -> bool:
    return NOT_ENOUGH_INFO in text


def linear_combination(matrix: CandidateMatrix, limit: int) -> list[tuple[Candidate, ...]]:
    """Best ``limit`` groups taking one candidate per entity row.

    Groups are ranked by the sum of member scores (descending), ties by the
    tuple of candidate ranks. Enumeration is best-first, so only the groups
    that are returned (plus their frontier) are ever scored.
    """
    rows = [row for row in matrix.rows if row]
    if not rows or limit < 1:
        return []

    def total(ranks: tuple[int, ...]) -> float:
        return sum(row[r].score for row, r in zip(rows, ranks))

    start = (0,) * len(rows)
    heap = [(-total(start), start)]
    seen = {start}
    out = []
    while heap and len(out) < limit:
        _neg, ranks = heapq.heappop(heap)
        out.append(tuple(row[r] for row, r in zip(rows, ranks)))
        for i in range(len(rows)):
            if ranks[i] + 1 < len(rows[i]):
                nxt = ranks[:i] + (ranks[i] + 1,) + ranks[i + 1 :]
                if nxt not in seen:
                    seen.add(nxt)
                    heapq.heappush(heap, (-total(nxt), nxt))
    return out


def _render_triples(triples: Sequence[Triple]) -> list[str]:
    return [t.render() for t in triples]


class QaPipeline:
    def __init__(
        self,
        graph: MemoryGraph,
        index: VectorIndex,
        gateway: LlmGateway,
        config: PipelineConfig | None = None,
    ) -> None:
        self.graph = graph
        self.index = index
        self.gateway = gateway
        self.config = config or PipelineConfig()
        self.retriever = Retriever(graph, index)

    def with_config(self, **changes: Any) -> QaPipeline:
        return QaPipeline(self.graph, self.index, self.gateway, replace(self.config, **changes))

    def _map(self, fn: Callable[[T], R], items: Sequence[T]) -> list[R]:
        width = self.config.parallelism or len(items)
        if width <= 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=min(width, len(items))) as pool:
            return list(pool.map(fn, items))

    # -- stage 1: preprocessing ------------------------------------------------

    def preprocess_question(self, question: str, log: list[dict[str, str]] | None = None) -> list[str]:
        if not question.strip():
            raise ValueError("question must be non-empty")
        if not self.config.enable_preprocess:
            return [question]
        log = log if log is not None else []
        text = question
        for template in ("denoise_grammar", "denoise_stopwords", "enhance_grammar", "enhance_terms", "enhance_expand"):
            out = self.gateway.ask(template, text=text).strip()
            log.append({"name": template, "input": text, "output": out})
            text = out or text
        raw = self.gateway.ask("decompose_cls", question=text)
        try:
            composite = parse_bool(raw)
        except UnparsableBool:
            composite = False
        log.append({"name": "decompose_cls", "input": text, "output": raw})
        if not composite:
            return [text]
        raw = self.gateway.ask("decompose", question=text)
        log.append({"name": "decompose", "input": text, "output": raw})
        return parse_list(raw) or [text]

    # -- stage 2: planning -----------------------------------------------------

    def init_plan(self, question: str) -> SearchPlan:
        steps = parse_list(self.gateway.ask("plan_init", question=question))
        return SearchPlan(steps[: self.config.max_steps] or [question])

    # -- stages 3-5: entities, matching, clue queries ------------------------

    def extract_entities(self, step: str) -> list[str]:
        seen: set[str] = set()
        out = []
        for entity in parse_list(self.gateway.ask("entity_extract", step=step)):
            key = entity.casefold()
            if key not in seen:
                seen.add(key)
                out.append(entity)
        return out

    def match_entities_to_vertices(self, entities: Sequence[str], limit: int | None = None) -> CandidateMatrix:
        limit = limit or self.config.max_matched_vertices
        if self.index.size(OBJECTS_NS) == 0:
            raise EmptyIndex("no object vertices are indexed")
        kept_entities, rows = [], []
        for entity in entities:
            hits = self.index.hybrid_search(OBJECTS_NS, entity, limit)
            row = tuple(Candidate(int(h.doc_id), self.graph.vertex(int(h.doc_id)).text, h.score) for h in hits)
            if row:
                kept_entities.append(entity)
                rows.append(row)
        return CandidateMatrix(tuple(kept_entities), tuple(rows))

    def gen_clue_queries(self, step: str, step_index: int, groups: Sequence[Sequence[Candidate]]) -> list[ClueQuery]:
        def one(group: Sequence[Candidate]) -> ClueQuery:
            names = "\n".join(f"- {c.name}" for c in group)
            text = self.gateway.ask("clue_query_gen", step=step, vertices=names).strip()
            return ClueQuery(text or step, step_index, tuple(c.vertex_id for c in group))

        return self._map(one, list(groups))

    # -- stages 6-8: retrieval, filtering, clue answers ----------------------

    def retrieve(self, cq: ClueQuery) -> list[Triple]:
        cfg = self.config
        if not cq.vertex_group and cfg.combo is not Combo.NR_ONLY:
            return []
        return self.retriever.combine_retrievals(
            cq.text, list(cq.vertex_group), cfg.combo, cfg.retrieval, cfg.restriction
        )

    def filter_by_relevance(self, cq: ClueQuery, raw: Sequence[Triple]) -> list[Triple]:
        accepted = [t for t in raw if t.incident_kinds <= self.config.answer_kinds]
        return self.retriever.sort_by_similarity(cq.text, accepted)[: self.config.max_filtered_triples]

    def retrieve_and_filter(self, cq: ClueQuery) -> tuple[list[Triple], list[Triple]]:
        raw = self.retrieve(cq)
        return raw, self.filter_by_relevance(cq, raw)

    def gen_clue_answer(self, cq: ClueQuery, triples: Sequence[Triple]) -> str:
        if not triples:
            return NOT_ENOUGH_INFO
        out = self.gateway.ask(
            "clue_answer_gen", clue_query=cq.text, triples="\n".join(_render_triples(triples))
        ).strip()
        return out or NOT_ENOUGH_INFO

    def summarize_step(self, step: str, clue_queries: Sequence[ClueQuery], clue_answers: Sequence[str]) -> str:
        if len(clue_queries) != len(clue_answers):
            raise ValueError("clue queries and clue answers must align")
        if all(is_insufficient(ca) for ca in clue_answers):
            return NOT_ENOUGH_INFO
        pairs = "\n".join(
            f"{i}. Clue query: {cq.text}\n   Answer: {ca}"
            for i, (cq, ca) in enumerate(zip(clue_queries, clue_answers), start=1)
        )
        out = self.gateway.ask("clue_answer_summarize", step=step, pairs=pairs).strip()
        return out or NOT_ENOUGH_INFO

    # -- stages 9-11: sufficiency, enhancement, sub-answer ------------------

    @staticmethod
    def _knowledge(step_answers: Sequence[str]) -> str:
        return render_numbered(list(step_answers)) or "(none)"

    def check_sufficient(self, question: str, plan: SearchPlan, step_answers: Sequence[str]) -> bool:
        raw = self.gateway.ask(
            "answer_cls",
            question=question,
            plan=render_numbered(plan.steps),
            knowledge=self._knowledge(step_answers),
        )
        try:
            return parse_bool(raw)
        except UnparsableBool:
            logger.info("unparsable sufficiency verdict %r; continuing the search", raw[:80])
            return False

    def enhance_plan(
        self, question: str, plan: SearchPlan, step_answers: Sequence[str], record: dict[str, Any] | None = None
    ) -> SearchPlan:
        if not self.config.enable_plan_enhancement:
            return plan
        record = record if record is not None else {}
        record.update(checked=False, needed=None, plan_before=list(plan.steps), plan_after=list(plan.steps))
        done = plan.done_steps
        pending = plan.pending_steps
        if not pending and len(plan.steps) >= self.config.max_steps:
            return plan
        bindings = {
            "question": question,
            "plan": render_numbered(plan.steps),
            "knowledge": self._knowledge(step_answers),
            "pending": render_numbered(pending) or "(none)",
        }
        record["checked"] = True
        try:
            needed = parse_bool(self.gateway.ask("plan_enhance_cls", **bindings))
        except UnparsableBool:
            needed = False
        record["needed"] = needed
        if not needed:
            return plan
        new_pending = parse_list(self.gateway.ask("plan_enhance", **bindings))
        if not new_pending:
            return plan
        steps = (done + new_pending)[: self.config.max_steps]
        enhanced = SearchPlan(steps, list(plan.step_answers))
        record["plan_after"] = list(enhanced.steps)
        return enhanced

    def finalize_answer(self, question: str, plan: SearchPlan, step_answers: Sequence[str]) -> str:
        out = self.gateway.ask(
            "answer_gen",
            question=question,
            plan=render_numbered(plan.steps),
            knowledge=self._knowledge(step_answers),
        ).strip()
        return out or step_answers[-1]

    def run_step(self, plan: SearchPlan, trace: StepTrace) -> str:
        step = trace.step
        entities = self.extract_entities(step) or [step]
        trace.entities = entities
        matrix = self.match_entities_to_vertices(entities)
        trace.matrix = matrix.to_dict()
        groups = linear_combination(matrix, self.config.max_clue_queries)
        trace.groups = [[c.vertex_id for c in g] for g in groups]
        if not groups and self.config.combo is Combo.NR_ONLY:
            groups = [()]
        clue_queries = self.gen_clue_queries(step, trace.index, groups)
        names = {c.vertex_id: c.name for g in groups for c in g}
        trace.clue_queries = [
            ClueTrace(cq.text, [{"id": vid, "name": names[vid]} for vid in cq.vertex_group])
            for cq in clue_queries
        ]

        def handle(i: int) -> str:
            cq = clue_queries[i]
            raw, filtered = self.retrieve_and_filter(cq)
            trace.clue_queries[i].raw_triples = _render_triples(raw)
            trace.clue_queries[i].filtered_triples = _render_triples(filtered)
            answer = self.gen_clue_answer(cq, filtered)
            trace.clue_queries[i].clue_answer = answer
            return answer

        clue_answers = self._map(handle, list(range(len(clue_queries))))
        trace.summarized_by_llm = not all(is_insufficient(ca) for ca in clue_answers)
        return self.summarize_step(step, clue_queries, clue_answers)

    def answer_subquestion(self, question: str, trace: SubQuestionTrace | None = None) -> tuple[str, SubQuestionTrace]:
        trace = trace if trace is not None else SubQuestionTrace(question)
        plan = self.init_plan(question)
        trace.plan_history.append(list(plan.steps))
        found = False
        step_num = 1
        while step_num <= self.config.max_steps:
            step_trace = StepTrace(index=step_num, step=plan.steps[step_num - 1])
            trace.steps.append(step_trace)
            sa = self.run_step(plan, step_trace)
            step_trace.step_answer = sa
            plan.step_answers.append(sa)
            if self.check_sufficient(question, plan, plan.step_answers):
                step_trace.sufficient = True
                found = True
                break
            step_trace.sufficient = False
            if self.config.enable_plan_enhancement:
                record: dict[str, Any] = {}
                enhanced = self.enhance_plan(question, plan, plan.step_answers, record)
                step_trace.enhancement = record
                if enhanced is not plan:
                    plan = enhanced
                    trace.plan_history.append(list(plan.steps))
            step_num += 1
            if step_num > len(plan.steps):
                break
        if found:
            answer = self.finalize_answer(question, plan, plan.step_answers)
        else:
            answer = NO_ANSWER
            trace.no_answer = True
        trace.answer = answer
        return answer, trace

    # -- stage 13: aggregation ---------------------------------------------

    def aggregate_answers(
        self, question: str, sub_questions: Sequence[str], sub_answers: Sequence[str]
    ) -> str:
        if len(sub_questions) != len(sub_answers):
            raise ValueError("sub-questions and sub-answers must align")
        if len(sub_answers) == 1:
            return sub_answers[0]
        pairs = "\n".join(
            f"{i}. Sub-question: {sq}\n   Answer: {sa}"
            for i, (sq, sa) in enumerate(zip(sub_questions, sub_answers), start=1)
        )
        return self.gateway.ask("aggregate", question=question, pairs=pairs).strip() or NO_ANSWER

    # -- entry point -------------------------------------------------------

    def answer(self, question: str) -> tuple[str, AnswerTrace]:
        trace = AnswerTrace(question=question, config=self.config.to_dict())
        try:
            if self.graph.vertex_count == 0 or self.index.size(OBJECTS_NS) == 0:
                raise EmptyIndex("the memory graph is empty; memorize documents first")
            log: list[dict[str, str]] = []
            trace.preprocess = {"enabled": self.config.enable_preprocess, "input": question, "steps": log}
            sub_questions = self.preprocess_question(question, log)
            trace.preprocess["output"] = list(sub_questions)
            trace.sub_questions = [SubQuestionTrace(q) for q in sub_questions]

            def solve(i: int) -> str:
                sub = trace.sub_questions[i]
                try:
                    return self.answer_subquestion(sub.question, sub)[0]
                except Exception as exc:
                    sub.error = f"{type(exc).__name__}: {exc}"
                    raise

            sub_answers = self._map(solve, list(range(len(sub_questions))))
            answer = self.aggregate_answers(question, sub_questions, sub_answers)
            trace.aggregate = {
                "input": {"sub_questions": list(sub_questions), "sub_answers": list(sub_answers)},
                "output": answer,
                "llm_called": len(sub_answers) > 1,
            }
            trace.answer = answer
            return answer, trace
        except (GraphMindError, UnknownNamespace) as exc:
            trace.error = f"{type(exc).__name__}: {exc}"
            exc.partial_trace = trace  # type: ignore[attr-defined]
            raise
