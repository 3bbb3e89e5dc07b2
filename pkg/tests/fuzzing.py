"""Randomised scripted LLM for pipeline fuzzing, plus the trace checks it feeds."""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, replace

from conftest import random_graph
from graphmind.graph import MemoryGraph, VertexKind
from graphmind.llmio import FunctionBackend, LlmGateway, RenderedRequest
from graphmind.memorize import build_index
from graphmind.prompts import NO_ANSWER, NOT_ENOUGH_INFO
from graphmind.qa import AnswerTrace, PipelineConfig, QaPipeline
from graphmind.traverse import ALL, NO_EPISODIC, Combo, NaiveConfig, RerankConfig, RetrievalConfig, WaterConfig
from graphmind.vecindex import HashingEmbedder


def fuzz_backend(seed: int, entity_names: list[str]) -> FunctionBackend:
    """Answers are a pure function of (seed, prompt), so reruns are reproducible."""

    def respond(request: RenderedRequest) -> str:
        digest = hashlib.sha256(f"{seed}|{request.template}|{request.text}".encode()).digest()
        rng = random.Random(digest)
        t = request.template
        if t == "plan_init":
            return "\n".join(f"{i}. find fact {rng.randint(0, 99)}" for i in range(1, rng.randint(1, 9)))
        if t == "entity_extract":
            return "\n".join(rng.sample(entity_names, rng.randint(0, 3)))
        if t == "clue_query_gen":
            return rng.choice(["", "what about " + rng.choice(entity_names), "river castle"])
        if t in ("clue_answer_gen", "clue_answer_summarize"):
            return rng.choice([NOT_ENOUGH_INFO, f"fact {rng.randint(0, 9)}", ""])
        if t == "answer_cls":
            return rng.choice(["Yes", "No", "No", "No", "unclear"])
        if t == "plan_enhance_cls":
            return rng.choice(["Yes", "No", "hmm"])
        if t == "plan_enhance":
            return "\n".join(f"- new step {rng.randint(0, 99)}" for _ in range(rng.randint(0, 7)))
        if t == "decompose_cls":
            return rng.choice(["Yes", "No"])
        if t == "decompose":
            return "\n".join(f"sub question {i}" for i in range(rng.randint(0, 3)))
        if t == "answer_gen":
            return rng.choice(["final answer", ""])
        if t == "aggregate":
            return "aggregated answer"
        return request.bindings.get("text", "ok")

    return FunctionBackend(respond, backend_id=f"fuzz:{seed}")


@dataclass
class FuzzWorld:
    graph: MemoryGraph
    index: object
    names: list[str]
    episodic_renders: set[str]


def make_world(seed: int = 0) -> FuzzWorld:
    g = random_graph(random.Random(seed), 40, 160)
    episodic = {
        t.render() for t in g.triples() if VertexKind.EPISODIC in t.incident_kinds
    }
    return FuzzWorld(g, build_index(g, HashingEmbedder()), [v.text for v in g.vertices(VertexKind.OBJECT)], episodic)


def random_config(rng: random.Random) -> PipelineConfig:
    kinds = [frozenset({VertexKind.OBJECT, VertexKind.THESIS}), frozenset(VertexKind)]
    return PipelineConfig(
        max_steps=rng.randint(1, 5),
        max_clue_queries=rng.randint(1, 3),
        max_matched_vertices=rng.randint(1, 3),
        max_filtered_triples=rng.randint(1, 6),
        enable_preprocess=rng.random() < 0.3,
        enable_plan_enhancement=rng.random() < 0.7,
        combo=rng.choice(list(Combo)),
        restriction=rng.choice([ALL, NO_EPISODIC]),
        answer_kinds=rng.choice(kinds),
        parallelism=1,
        retrieval=RetrievalConfig(
            naive=NaiveConfig(max_k=10, rerank=RerankConfig(0.0, 20)),
            water=WaterConfig(strict_filter=rng.random() < 0.5),
        ),
    )


def run_once(world: FuzzWorld, seed: int, **overrides) -> tuple[PipelineConfig, AnswerTrace]:
    rng = random.Random(seed)
    cfg = replace(random_config(rng), **overrides)
    gateway = LlmGateway(fuzz_backend(seed, world.names))
    pipeline = QaPipeline(world.graph, world.index, gateway, cfg)
    _answer, trace = pipeline.answer(f"fuzz question {seed}?")
    return cfg, trace


def bound_violations(cfg: PipelineConfig, trace: AnswerTrace) -> list[str]:
    """Every broken pipeline bound in one trace, as readable strings."""
    problems = []
    for sub in trace.sub_questions:
        if len(sub.steps) > cfg.max_steps:
            problems.append(f"{len(sub.steps)} steps > {cfg.max_steps}")
        for plan in sub.plan_history:
            if len(plan) > cfg.max_steps:
                problems.append(f"plan of {len(plan)} steps > {cfg.max_steps}")
        for st in sub.steps:
            if len(st.clue_queries) > cfg.max_clue_queries:
                problems.append(f"step {st.index}: {len(st.clue_queries)} clue queries")
            for cq in st.clue_queries:
                if len(cq.filtered_triples) > cfg.max_filtered_triples:
                    problems.append(f"step {st.index}: {len(cq.filtered_triples)} filtered triples")
            if st.enhancement and st.enhancement["plan_after"][: st.index] != st.enhancement["plan_before"][: st.index]:
                problems.append(f"step {st.index}: enhancement rewrote a done step")
        final_plan = sub.plan_history[-1]
        if [st.step for st in sub.steps] != final_plan[: len(sub.steps)]:
            problems.append("executed steps differ from the final plan prefix")
        sufficient = any(st.sufficient for st in sub.steps)
        if sub.no_answer == sufficient or (sub.answer == NO_ANSWER) != sub.no_answer:
            problems.append("stub answer does not match the sufficiency outcome")
    return problems


def episodic_leaks(world: FuzzWorld, trace: AnswerTrace) -> list[str]:
    leaks = []
    for sub in trace.sub_questions:
        for st in sub.steps:
            for cq in st.clue_queries:
                leaks += [t for t in cq.raw_triples + cq.filtered_triples if t in world.episodic_renders]
    return leaks
