"""Prompt templates for every LLM task in the memorize, QA and judge pipelines.

Placeholders use ``str.format`` syntax. Each template is versioned; changing
any text should bump the version so cached responses are not reused.
"""

from __future__ import annotations

import hashlib
import json
import string
from dataclasses import dataclass
from collections.abc import Mapping

from graphmind.errors import UnboundPlaceholder, UnknownTemplate

NOT_ENOUGH_INFO = "<|NotEnoughtInfo|>"
NO_ANSWER = "No Answer"


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    system: str
    user: str
    assistant_prefix: str = ""
    version: int = 1

    @property
    def placeholders(self) -> frozenset[str]:
        fields = set()
        for part in (self.system, self.user, self.assistant_prefix):
            for _, field_name, _, _ in string.Formatter().parse(part):
                if field_name:
                    fields.add(field_name)
        return frozenset(fields)

    @property
    def digest(self) -> str:
        payload = json.dumps(
            [self.name, self.version, self.system, self.user, self.assistant_prefix],
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def render(self, bindings: Mapping[str, str]) -> list[dict[str, str]]:
        missing = sorted(self.placeholders - set(bindings))
        if missing:
            raise UnboundPlaceholder(f"template {self.name!r} is missing bindings: {', '.join(missing)}")
        messages = [
            {"role": "system", "content": self.system.format_map(bindings)},
            {"role": "user", "content": self.user.format_map(bindings)},
        ]
        if self.assistant_prefix:
            messages.append({"role": "assistant", "content": self.assistant_prefix.format_map(bindings)})
        return messages


_TEMPLATES = [
    # -- question preprocessing --------------------------------------------
    PromptTemplate(
        "denoise_grammar",
        "You are a careful editor. You fix grammatical, syntactical and punctuation errors "
        "in short text fragments without changing their meaning.",
        "Check the text fragment below for grammatical, syntactical and punctuation errors "
        "and rewrite it so that it follows the rules of the language. "
        "Return only the corrected fragment.\n\nFragment: {text}",
    ),
    PromptTemplate(
        "denoise_stopwords",
        "You remove noise from search requests.",
        "Remove stop words, filler phrases and any information that is not needed to "
        "understand the request below. Keep every named entity. "
        "Return only the cleaned request.\n\nRequest: {text}",
    ),
    PromptTemplate(
        "enhance_grammar",
        "You are a careful editor.",
        "Edit the text fragment below so that it is grammatically correct. "
        "Return only the edited fragment.\n\nFragment: {text}",
    ),
    PromptTemplate(
        "enhance_terms",
        "You rephrase questions using common and precise terminology.",
        "Rephrase the question below using commonly used, precise terminology. "
        "Do not add or remove facts. Return only the rephrased question.\n\nQuestion: {text}",
    ),
    PromptTemplate(
        "enhance_expand",
        "You help a search engine understand user questions.",
        "Expand the question below, using common language patterns, so that its meaning "
        "becomes clearer for a search engine. Return only the expanded question.\n\nQuestion: {text}",
    ),
    PromptTemplate(
        "decompose_cls",
        "You analyse the structure of user questions.",
        "Does the question below contain several independent questions that could be "
        "answered separately? Answer True or False only.\n\nQuestion: {question}",
    ),
    PromptTemplate(
        "decompose",
        "You split complex questions into simpler ones.",
        "Split the question below into sub-questions that can be answered independently "
        "of each other. Write one sub-question per line as a numbered list.\n\nQuestion: {question}",
    ),
    # -- memory graph exploration ------------------------------------------
    PromptTemplate(
        "plan_init",
        "You plan information searches over a knowledge graph.",
        "Write a search plan for answering the question below. The plan is a numbered "
        "list of short natural-language search queries, one per line, ordered so that "
        "earlier steps gather facts later steps depend on.\n\nQuestion: {question}",
    ),
    PromptTemplate(
        "entity_extract",
        "You extract named entities from search queries.",
        "List the key named entities mentioned in the search query below, one per line. "
        "Return nothing if there are none.\n\nQuery: {step}",
    ),
    PromptTemplate(
        "clue_query_gen",
        "You reformulate search queries for a knowledge graph.",
        "Rewrite the search query so that it refers explicitly to the given knowledge-graph "
        "entities. Return only the rewritten query.\n\nSearch query: {step}\n\nEntities:\n{vertices}",
    ),
    PromptTemplate(
        "clue_answer_gen",
        "You answer questions using only the supplied knowledge-graph triples.",
        "Answer the question using only the triples below (subject | relation | object). "
        f"If they do not contain the answer, reply exactly {NOT_ENOUGH_INFO}."
        "\n\nQuestion: {clue_query}\n\nTriples:\n{triples}",
    ),
    PromptTemplate(
        "clue_answer_summarize",
        "You merge partial answers into one statement.",
        "Summarize the answers below into a single answer to the search query. Ignore "
        "answers that say there is not enough information.\n\nSearch query: {step}\n\n"
        "Clue queries and answers:\n{pairs}",
    ),
    PromptTemplate(
        "answer_cls",
        "You decide whether collected knowledge is sufficient.",
        "Given the question, the search plan and the knowledge collected so far, can a "
        "relevant answer to the question be generated? Answer True or False only.\n\n"
        "Question: {question}\n\nSearch plan:\n{plan}\n\nCollected knowledge:\n{knowledge}",
    ),
    PromptTemplate(
        "answer_gen",
        "You answer questions using collected knowledge.",
        "Answer the question using the collected knowledge.\n\nQuestion: {question}\n\n"
        "Search plan:\n{plan}\n\nCollected knowledge:\n{knowledge}",
    ),
    PromptTemplate(
        "plan_enhance_cls",
        "You review search plans.",
        "Given the question, the search plan and the knowledge collected by the completed "
        "steps, do the remaining steps of the plan need to be modified? Answer True or "
        "False only.\n\nQuestion: {question}\n\nSearch plan:\n{plan}\n\n"
        "Collected knowledge:\n{knowledge}\n\nRemaining steps:\n{pending}",
    ),
    PromptTemplate(
        "plan_enhance",
        "You improve search plans.",
        "Rewrite the remaining steps of the search plan, taking into account the knowledge "
        "collected by the completed steps. You may add steps. Return only the new remaining "
        "steps as a numbered list, one per line.\n\nQuestion: {question}\n\nSearch plan:\n{plan}\n\n"
        "Collected knowledge:\n{knowledge}\n\nRemaining steps:\n{pending}",
    ),
    PromptTemplate(
        "aggregate",
        "You combine answers to sub-questions.",
        "Answer the question using the answers to its sub-questions.\n\nQuestion: {question}\n\n"
        "Sub-questions and answers:\n{pairs}",
    ),
    # -- memorize ----------------------------------------------------------
    PromptTemplate(
        "thesis_extract",
        "You extract standalone factual statements from documents.",
        "Extract the key statements made by the document below. For each statement write "
        "one line per entity it mentions, in the form: entity | has thesis | statement\n\n"
        "Document:\n{text}",
    ),
    PromptTemplate(
        "simple_extract",
        "You extract knowledge-graph triples from documents.",
        "Extract relations between named entities in the document below. Write one triple "
        "per line in the form: subject | relation | object\n\nDocument:\n{text}",
    ),
    # -- evaluation --------------------------------------------------------
    PromptTemplate(
        "judge",
        "You are a strict grader of question answering systems.",
        "Decide whether the generated answer correctly answers the question, using the "
        "ground-truth answer as reference. Reply with 1 if it is correct and 0 otherwise.\n\n"
        "Question: {question}\n\nGround truth: {gold}\n\nGenerated answer: {generated}",
    ),
]

TEMPLATES: dict[str, PromptTemplate] = {t.name: t for t in _TEMPLATES}


def get_template(name: str, registry: Mapping[str, PromptTemplate] | None = None) -> PromptTemplate:
    try:
        return (registry or TEMPLATES)[name]
    except KeyError:
        raise UnknownTemplate(f"no prompt template named {name!r}") from None
