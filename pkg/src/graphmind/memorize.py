"""Document ingestion: one document becomes an episodic vertex plus extracted triples."""

from __future__ import annotations

import json
import logging
import os
import threading
from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field
from pathlib import Path

from graphmind.errors import InvalidDocument, KindMismatch
from graphmind.graph import EdgeKind, MemoryGraph, VertexKind
from graphmind.llmio import LlmGateway, parse_triples
from graphmind.vecindex import Embedder, VectorIndex

logger = logging.getLogger(__name__)

OBJECTS_NS = "objects"
TRIPLES_NS = "triples"

DEFAULT_MAX_CHARS = 1024


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    meta: Mapping[str, str] = field(default_factory=dict)


@dataclass
class IngestReport:
    doc_id: str
    new_vertices: dict[VertexKind, int] = field(default_factory=lambda: {k: 0 for k in VertexKind})
    new_edges: dict[EdgeKind, int] = field(default_factory=lambda: {k: 0 for k in EdgeKind})
    skipped_triples: int = 0
    parse_failed: bool = False

    @property
    def is_noop(self) -> bool:
        """True when the ingest added nothing to the graph."""
        return not any(self.new_vertices.values()) and not any(self.new_edges.values())

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "new_vertices": {k.value: v for k, v in self.new_vertices.items()},
            "new_edges": {k.value: v for k, v in self.new_edges.items()},
            "skipped_triples": self.skipped_triples,
            "parse_failed": self.parse_failed,
        }


def index_graph(graph: MemoryGraph, index: VectorIndex) -> VectorIndex:
    """(Re)build the object-name and triple namespaces from the graph."""
    index.ensure_namespace(OBJECTS_NS)
    index.ensure_namespace(TRIPLES_NS)
    for v in graph.vertices(VertexKind.OBJECT):
        index.index_text(OBJECTS_NS, str(v.id), v.text)
    for t in graph.triples():
        index.index_text(TRIPLES_NS, str(t.edge_id), t.render())
    return index


def build_index(graph: MemoryGraph, embedder: Embedder) -> VectorIndex:
    return index_graph(graph, VectorIndex(embedder))


def read_corpus(path: str | os.PathLike) -> Iterator[tuple[int, Document | str]]:
    """Yield ``(line number, Document)`` or ``(line number, error message)``."""
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                meta = obj.get("meta") or {}
                if not isinstance(meta, dict):
                    raise TypeError("meta must be an object")
                yield lineno, Document(
                    doc_id=str(obj["doc_id"]),
                    text=str(obj["text"]),
                    meta={str(k): str(v) for k, v in meta.items()},
                )
            except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as exc:
                yield lineno, f"line {lineno}: {type(exc).__name__}: {exc}"


class Memorizer:
    """Writes documents into the memory graph and keeps the index in step.

    Only one ingest runs at a time. Backend errors propagate before the graph
    is touched, so a failed ingest leaves no partial state behind.
    """

    def __init__(
        self,
        graph: MemoryGraph,
        index: VectorIndex,
        gateway: LlmGateway,
        max_chars: int | None = DEFAULT_MAX_CHARS,
    ) -> None:
        self.graph = graph
        self.index = index
        self.gateway = gateway
        self.max_chars = max_chars
        self._lock = threading.Lock()
        index.ensure_namespace(OBJECTS_NS)
        index.ensure_namespace(TRIPLES_NS)

    def validate(self, doc: Document) -> None:
        if not doc.text.strip():
            raise InvalidDocument(f"document {doc.doc_id!r} has empty text")
        if self.max_chars is not None and len(doc.text) > self.max_chars:
            raise InvalidDocument(
                f"document {doc.doc_id!r} has {len(doc.text)} characters (limit {self.max_chars})"
            )

    def extract_thesis_triples(self, doc: Document) -> tuple[list[tuple[str, str, str]], int]:
        return parse_triples(self.gateway.ask("thesis_extract", text=doc.text))

    def extract_simple_triples(self, doc: Document) -> tuple[list[tuple[str, str, str]], int]:
        return parse_triples(self.gateway.ask("simple_extract", text=doc.text))

    def memorize_document(self, doc: Document) -> IngestReport:
        self.validate(doc)
        thesis, thesis_bad = self.extract_thesis_triples(doc)
        simple, simple_bad = self.extract_simple_triples(doc)

        report = IngestReport(doc.doc_id, skipped_triples=thesis_bad + simple_bad)
        report.parse_failed = not thesis and not simple and (thesis_bad + simple_bad) > 0

        with self._lock:
            v_mark, e_mark = self.graph.watermark()
            attrs = {"doc_id": doc.doc_id, **{str(k): str(v) for k, v in doc.meta.items()}}
            episodic = self.graph.upsert_vertex(VertexKind.EPISODIC, doc.text, attrs)

            linked: dict[int, None] = {}  # ordered set of object/thesis vertex ids
            for s, p, o in simple:
                try:
                    eid, created = self.graph.upsert_triple(s, p, o, EdgeKind.SIMPLE)
                except KindMismatch as exc:
                    logger.debug("skipping simple triple in %s: %s", doc.doc_id, exc)
                    report.skipped_triples += 1
                    continue
                if not created:
                    report.skipped_triples += 1
                edge = self.graph.edge(eid)
                linked.setdefault(edge.src)
                linked.setdefault(edge.dst)
            for entity, _marker, statement in thesis:
                try:
                    eid, created = self.graph.upsert_triple(entity, "", statement, EdgeKind.HYPER_THESIS)
                except KindMismatch as exc:
                    logger.debug("skipping thesis triple in %s: %s", doc.doc_id, exc)
                    report.skipped_triples += 1
                    continue
                if not created:
                    report.skipped_triples += 1
                edge = self.graph.edge(eid)
                linked.setdefault(edge.src)
                linked.setdefault(edge.dst)

            # objects first, then theses, each in first-seen order
            ordered = sorted(linked, key=lambda vid: self.graph.vertex(vid).kind is VertexKind.THESIS)
            for vid in ordered:
                self.graph.link(EdgeKind.HYPER_EPISODIC, vid, episodic)

            v_next, e_next = self.graph.watermark()
            for vid in range(v_mark, v_next):
                v = self.graph.vertex(vid)
                report.new_vertices[v.kind] += 1
                if v.kind is VertexKind.OBJECT:
                    self.index.index_text(OBJECTS_NS, str(vid), v.text)
            for eid in range(e_mark, e_next):
                t = self.graph.triple(eid)
                report.new_edges[self.graph.edge(eid).kind] += 1
                self.index.index_text(TRIPLES_NS, str(eid), t.render())
        return report
