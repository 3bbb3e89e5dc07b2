"""LLM-as-a-judge evaluation: binary correctness labels and accuracy over a JSONL dataset."""

from __future__ import annotations

import json
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from graphmind.llmio import LlmGateway
from graphmind.qa import QaPipeline

logger = logging.getLogger(__name__)

# a bare 0/1 or true/false word; "0.5" and "10" do not count
_LABEL_RE = re.compile(r"(?<!\w)(?<!\d\.)(0|1|true|false)(?!\w)(?!\.\d)", re.IGNORECASE)


@dataclass(frozen=True)
class QaExample:
    question: str
    gold: str
    docs: tuple[str, ...] = ()
    line: int = 0

    def __post_init__(self) -> None:
        if not self.question.strip() or not self.gold.strip():
            raise ValueError("question and gold answer must be non-empty")


@dataclass(frozen=True)
class Judgement:
    label: int
    raw: str
    warning: str | None = None


@dataclass
class ExampleResult:
    line: int
    question: str
    gold: str
    generated: str
    label: int
    raw_judgement: str
    warning: str | None = None
    trace: dict[str, Any] | None = None


@dataclass
class EvalReport:
    results: list[ExampleResult] = field(default_factory=list)
    skipped: int = 0
    skipped_lines: list[int] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.results)

    @property
    def correct(self) -> int:
        return sum(r.label for r in self.results)

    @property
    def accuracy(self) -> float:
        return self.correct / self.n if self.n else 0.0

    def to_dict(self) -> dict[str, Any]:
        examples = []
        for r in self.results:
            item: dict[str, Any] = {
                "line": r.line,
                "question": r.question,
                "gold": r.gold,
                "generated": r.generated,
                "label": r.label,
                "raw_judgement": r.raw_judgement,
                "warning": r.warning,
            }
            if r.trace is not None:
                item["trace"] = r.trace
            examples.append(item)
        return {
            "n": self.n,
            "correct": self.correct,
            "accuracy": self.accuracy,
            "skipped": self.skipped,
            "skipped_lines": list(self.skipped_lines),
            # reserved for RAGAS-style metrics, not computed here
            "context_relevance": None,
            "faithfulness": None,
            "groundedness": None,
            "examples": examples,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"


def parse_label(raw: str) -> Judgement:
    """First standalone 0/1 or true/false token decides; anything else is labelled 0."""
    match = _LABEL_RE.search(raw)
    if match is None:
        return Judgement(0, raw, warning="unparsable judge output")
    token = match.group(1).lower()
    return Judgement(1 if token in ("1", "true") else 0, raw)


def judge_pair(gateway: LlmGateway, question: str, gold: str, generated: str) -> Judgement:
    if not question.strip() or not gold.strip() or not generated.strip():
        raise ValueError("judge inputs must be non-empty")
    raw = gateway.ask("judge", question=question, gold=gold, generated=generated)
    judgement = parse_label(raw)
    if judgement.warning:
        logger.warning("%s for %r", judgement.warning, question[:60])
    return judgement


def read_dataset(path: str | os.PathLike) -> tuple[list[QaExample], list[int]]:
    """Parse a QA dataset; returns the examples and the line numbers that were skipped."""
    examples, skipped = [], []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                docs = obj.get("docs") or []
                if not isinstance(docs, list):
                    raise TypeError("docs must be a list")
                examples.append(
                    QaExample(str(obj["question"]), str(obj["answer"]), tuple(str(d) for d in docs), lineno)
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, AttributeError) as exc:
                logger.warning("skipping dataset line %d: %s", lineno, exc)
                skipped.append(lineno)
    return examples, skipped


def evaluate_examples(
    pipeline: QaPipeline,
    examples: list[QaExample],
    include_traces: bool = False,
    width: int = 0,
) -> list[ExampleResult]:
    def run(example: QaExample) -> ExampleResult:
        generated, trace = pipeline.answer(example.question)
        verdict = judge_pair(pipeline.gateway, example.question, example.gold, generated)
        return ExampleResult(
            line=example.line,
            question=example.question,
            gold=example.gold,
            generated=generated,
            label=verdict.label,
            raw_judgement=verdict.raw,
            warning=verdict.warning,
            trace=trace.to_dict() if include_traces else None,
        )

    width = width or len(examples)
    if width <= 1 or len(examples) <= 1:
        results = [run(e) for e in examples]
    else:
        with ThreadPoolExecutor(max_workers=min(width, len(examples))) as pool:
            results = list(pool.map(run, examples))
    return sorted(results, key=lambda r: r.line)


def evaluate_dataset(
    path: str | os.PathLike,
    pipeline: QaPipeline,
    include_traces: bool = False,
    width: int = 0,
) -> EvalReport:
    examples, skipped = read_dataset(path)
    results = evaluate_examples(pipeline, examples, include_traces, width)
    return EvalReport(results, skipped=len(skipped), skipped_lines=skipped)
