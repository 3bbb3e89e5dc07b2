"""Embedded typed property graph: object, thesis and episodic vertices.

Vertices are deduplicated by exact (kind, text) after trimming surrounding
whitespace. Hyper edges are stored pairwise with a distinguished edge kind.
"""

from __future__ import annotations

import base64
import json
import math
import os
import threading
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from graphmind.errors import CorruptSnapshot, EmptyText, KindMismatch, UnknownVertex

SNAPSHOT_HEADER = "GRAPHMIND-SNAPSHOT v1"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


class VertexKind(str, Enum):
    OBJECT = "Object"
    THESIS = "Thesis"
    EPISODIC = "Episodic"


class EdgeKind(str, Enum):
    SIMPLE = "Simple"
    HYPER_EPISODIC = "HyperEpisodic"
    HYPER_THESIS = "HyperThesis"


ALL_KINDS: frozenset[VertexKind] = frozenset(VertexKind)

# (allowed source kinds, allowed target kinds)
EDGE_CONTRACT: dict[EdgeKind, tuple[frozenset[VertexKind], frozenset[VertexKind]]] = {
    EdgeKind.SIMPLE: (frozenset({VertexKind.OBJECT}), frozenset({VertexKind.OBJECT})),
    EdgeKind.HYPER_EPISODIC: (
        frozenset({VertexKind.OBJECT, VertexKind.THESIS}),
        frozenset({VertexKind.EPISODIC}),
    ),
    EdgeKind.HYPER_THESIS: (frozenset({VertexKind.OBJECT}), frozenset({VertexKind.THESIS})),
}

# Predicate text stored on hyper edges; simple edges keep the extracted relation.
HYPER_MARKERS: dict[EdgeKind, str] = {
    EdgeKind.HYPER_EPISODIC: "mentioned in",
    EdgeKind.HYPER_THESIS: "has thesis",
}


@dataclass(frozen=True)
class Vertex:
    id: int
    kind: VertexKind
    text: str
    attrs: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class Edge:
    id: int
    kind: EdgeKind
    src: int
    dst: int
    predicate: str
    attrs: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class Triple:
    """Textual (subject, predicate, object) view of one stored edge.

    Equality and hashing use the three text fields only, so triples reached
    through different edges but reading the same are interchangeable.
    """

    subject: str
    predicate: str
    object: str
    edge_id: int
    incident_kinds: frozenset[VertexKind]
    subject_id: int = 0
    object_id: int = 0

    def render(self) -> str:
        return f"{self.subject} | {self.predicate} | {self.object}"

    def __str__(self) -> str:
        return self.render()

    def _key(self) -> tuple[str, str, str]:
        return (self.subject, self.predicate, self.object)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Triple):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self) -> int:
        return hash(self._key())


@dataclass(frozen=True)
class GraphStats:
    vertices: dict[VertexKind, int]
    edges: dict[EdgeKind, int]
    # (source kind, neighbour kind) -> (mean, population std) of the number of
    # distinct neighbours of that kind, taken over vertices of the source kind
    degrees: dict[tuple[VertexKind, VertexKind], tuple[float, float]]

    def delta(self, before: GraphStats) -> tuple[dict[VertexKind, int], dict[EdgeKind, int]]:
        return (
            {k: self.vertices[k] - before.vertices[k] for k in VertexKind},
            {k: self.edges[k] - before.edges[k] for k in EdgeKind},
        )

    def to_dict(self) -> dict:
        return {
            "vertices": {k.value: v for k, v in self.vertices.items()},
            "edges": {k.value: v for k, v in self.edges.items()},
            "degrees": {
                f"{s.value}->{t.value}": {"mean": m, "std": sd}
                for (s, t), (m, sd) in self.degrees.items()
            },
        }


def fnv1a_64(data: bytes, seed: int = _FNV_OFFSET) -> int:
    h = seed
    prime = _FNV_PRIME
    mask = _MASK64
    for byte in data:
        h = ((h ^ byte) * prime) & mask
    return h


def _clean(text: str) -> str:
    cleaned = text.strip() if text is not None else ""
    if not cleaned:
        raise EmptyText("text must be non-empty after trimming whitespace")
    return cleaned


def _b64(text: str) -> str:
    return base64.b64encode(text.encode("utf-8")).decode("ascii")


def _unb64(token: str) -> str:
    return base64.b64decode(token.encode("ascii"), validate=True).decode("utf-8")


def _canonical_attrs(attrs: Mapping[str, str]) -> str:
    return json.dumps(dict(attrs), sort_keys=True, ensure_ascii=False, separators=(",", ":"))


class MemoryGraph:
    """In-process store for the memory graph.

    Reads may run concurrently from many threads; writes take an internal lock.
    Mutating the graph while a traversal is running is not supported.
    """

    def __init__(self) -> None:
        self._lock = threading.RLock()
        self._vertices: dict[int, Vertex] = {}
        self._vertex_key: dict[tuple[VertexKind, str], int] = {}
        self._edges: dict[int, Edge] = {}
        self._edge_key: dict[tuple[EdgeKind, int, int, str], int] = {}
        self._adjacency: dict[int, list[int]] = {}
        self._next_vertex_id = 1
        self._next_edge_id = 1

    # -- lookups -------------------------------------------------------------

    def __len__(self) -> int:
        return len(self._vertices)

    @property
    def vertex_count(self) -> int:
        return len(self._vertices)

    @property
    def edge_count(self) -> int:
        return len(self._edges)

    def watermark(self) -> tuple[int, int]:
        """Next (vertex id, edge id) to be assigned; ids never go backwards."""
        return self._next_vertex_id, self._next_edge_id

    def vertex(self, vertex_id: int) -> Vertex:
        try:
            return self._vertices[vertex_id]
        except KeyError:
            raise UnknownVertex(f"no vertex with id {vertex_id}") from None

    def edge(self, edge_id: int) -> Edge:
        return self._edges[edge_id]

    def vertices(self, kind: VertexKind | None = None) -> Iterator[Vertex]:
        for v in list(self._vertices.values()):
            if kind is None or v.kind is kind:
                yield v

    def edges(self, kind: EdgeKind | None = None) -> Iterator[Edge]:
        for e in list(self._edges.values()):
            if kind is None or e.kind is kind:
                yield e

    def find_vertex(self, kind: VertexKind, text: str) -> int | None:
        return self._vertex_key.get((VertexKind(kind), text.strip()))

    def find_edge(self, kind: EdgeKind, src: int, dst: int, predicate: str) -> int | None:
        return self._edge_key.get((EdgeKind(kind), src, dst, predicate.strip()))

    # -- mutation ------------------------------------------------------------

    def upsert_vertex(
        self, kind: VertexKind, text: str, attrs: Mapping[str, str] | None = None
    ) -> int:
        """Return the id of the (kind, text) vertex, creating it if needed.

        On a repeat upsert the given attrs are merged into the stored ones,
        with the new values winning.
        """
        return self.upsert_vertex_ex(kind, text, attrs)[0]

    def upsert_vertex_ex(
        self, kind: VertexKind, text: str, attrs: Mapping[str, str] | None = None
    ) -> tuple[int, bool]:
        kind = VertexKind(kind)
        text = _clean(text)
        new_attrs = {str(k): str(v) for k, v in (attrs or {}).items()}
        with self._lock:
            existing = self._vertex_key.get((kind, text))
            if existing is not None:
                if new_attrs:
                    v = self._vertices[existing]
                    self._vertices[existing] = replace(v, attrs={**v.attrs, **new_attrs})
                return existing, False
            vid = self._next_vertex_id
            self._next_vertex_id += 1
            self._vertices[vid] = Vertex(vid, kind, text, new_attrs)
            self._vertex_key[(kind, text)] = vid
            self._adjacency[vid] = []
            return vid, True

    def link(
        self,
        kind: EdgeKind,
        src: int,
        dst: int,
        predicate: str | None = None,
        attrs: Mapping[str, str] | None = None,
    ) -> tuple[int, bool]:
        """Create an edge between two existing vertices.

        Hyper edges always carry their fixed marker as predicate. Returns
        ``(edge_id, created)``; ``created`` is false for an exact duplicate.
        """
        kind = EdgeKind(kind)
        if kind is EdgeKind.SIMPLE:
            predicate = _clean(predicate or "")
        else:
            predicate = HYPER_MARKERS[kind]
        src_kinds, dst_kinds = EDGE_CONTRACT[kind]
        sv, dv = self.vertex(src), self.vertex(dst)
        if sv.kind not in src_kinds or dv.kind not in dst_kinds:
            raise KindMismatch(
                f"{kind.value} edge cannot join {sv.kind.value} -> {dv.kind.value}"
            )
        new_attrs = {str(k): str(v) for k, v in (attrs or {}).items()}
        key = (kind, src, dst, predicate)
        with self._lock:
            existing = self._edge_key.get(key)
            if existing is not None:
                return existing, False
            eid = self._next_edge_id
            self._next_edge_id += 1
            self._edges[eid] = Edge(eid, kind, src, dst, predicate, new_attrs)
            self._edge_key[key] = eid
            self._adjacency[src].append(eid)
            if dst != src:
                self._adjacency[dst].append(eid)
            return eid, True

    def _check_endpoint(self, text: str, allowed: frozenset[VertexKind]) -> None:
        text = text.strip()
        if any((k, text) in self._vertex_key for k in allowed):
            return
        clashing = [k.value for k in VertexKind if (k, text) in self._vertex_key]
        if clashing:
            raise KindMismatch(
                f"{text!r} already exists as {', '.join(clashing)}; "
                f"expected one of {sorted(k.value for k in allowed)}"
            )

    def _resolve_endpoint(self, text: str, allowed: frozenset[VertexKind], default: VertexKind) -> int:
        text = text.strip()
        for kind in (default, *sorted(allowed - {default}, key=lambda k: k.value)):
            vid = self._vertex_key.get((kind, text))
            if vid is not None:
                return vid
        return self.upsert_vertex(default, text)

    def upsert_triple(
        self,
        subject_text: str,
        predicate_text: str,
        object_text: str,
        edge_kind: EdgeKind = EdgeKind.SIMPLE,
        attrs: Mapping[str, str] | None = None,
    ) -> tuple[int, bool]:
        """Upsert endpoint vertices by text and link them.

        An endpoint text that exists only under a kind the edge kind does not
        accept raises KindMismatch. Missing endpoints are created as Object
        (subject side) or as the edge kind's target kind.
        """
        edge_kind = EdgeKind(edge_kind)
        src_kinds, dst_kinds = EDGE_CONTRACT[edge_kind]
        _clean(subject_text)
        _clean(object_text)
        if edge_kind is EdgeKind.SIMPLE:
            _clean(predicate_text)
        dst_default = VertexKind.OBJECT if edge_kind is EdgeKind.SIMPLE else next(iter(dst_kinds))
        with self._lock:
            # check both sides before creating anything
            self._check_endpoint(subject_text, src_kinds)
            self._check_endpoint(object_text, dst_kinds)
            src = self._resolve_endpoint(subject_text, src_kinds, VertexKind.OBJECT)
            dst = self._resolve_endpoint(object_text, dst_kinds, dst_default)
            return self.link(edge_kind, src, dst, predicate_text, attrs)

    # -- traversal support ---------------------------------------------------

    def triple(self, edge_id: int) -> Triple:
        e = self._edges[edge_id]
        s, o = self._vertices[e.src], self._vertices[e.dst]
        return Triple(
            subject=s.text,
            predicate=e.predicate,
            object=o.text,
            edge_id=e.id,
            incident_kinds=frozenset({s.kind, o.kind}),
            subject_id=s.id,
            object_id=o.id,
        )

    def triples(self) -> Iterator[Triple]:
        for eid in list(self._edges):
            yield self.triple(eid)

    def incident_edge_ids(self, vertex_id: int) -> list[int]:
        if vertex_id not in self._vertices:
            raise UnknownVertex(f"no vertex with id {vertex_id}")
        return list(self._adjacency[vertex_id])

    def incident_triples(
        self, vertex_id: int, accepted_kinds: Iterable[VertexKind] = ALL_KINDS
    ) -> list[Triple]:
        """Triples on edges touching ``vertex_id``, in ascending edge id order.

        A triple is kept only if every vertex it touches has an accepted kind.
        """
        accepted = frozenset(accepted_kinds)
        out = []
        for eid in self.incident_edge_ids(vertex_id):
            t = self.triple(eid)
            if t.incident_kinds <= accepted:
                out.append(t)
        return out

    def neighbors(
        self, vertex_id: int, accepted_kinds: Iterable[VertexKind] = ALL_KINDS
    ) -> list[int]:
        accepted = frozenset(accepted_kinds)
        seen: dict[int, None] = {}
        for eid in self.incident_edge_ids(vertex_id):
            e = self._edges[eid]
            other = e.dst if e.src == vertex_id else e.src
            if other == vertex_id or other in seen:
                continue
            if self._vertices[other].kind in accepted:
                seen[other] = None
        return list(seen)

    def other_end(self, edge_id: int, vertex_id: int) -> int:
        e = self._edges[edge_id]
        return e.dst if e.src == vertex_id else e.src

    # -- statistics ----------------------------------------------------------

    def stats(self) -> GraphStats:
        vertices = {k: 0 for k in VertexKind}
        edges = {k: 0 for k in EdgeKind}
        for v in self._vertices.values():
            vertices[v.kind] += 1
        for e in self._edges.values():
            edges[e.kind] += 1

        per_kind: dict[tuple[VertexKind, VertexKind], list[int]] = {
            (s, t): [] for s in VertexKind for t in VertexKind
        }
        for v in self._vertices.values():
            counts = {k: 0 for k in VertexKind}
            for n in self.neighbors(v.id):
                counts[self._vertices[n].kind] += 1
            for t in VertexKind:
                per_kind[(v.kind, t)].append(counts[t])

        degrees = {}
        for key, values in per_kind.items():
            if not values:
                degrees[key] = (0.0, 0.0)
                continue
            mean = math.fsum(values) / len(values)
            var = math.fsum((x - mean) ** 2 for x in values) / len(values)
            degrees[key] = (mean, math.sqrt(var))
        return GraphStats(vertices, edges, degrees)

    # -- persistence ---------------------------------------------------------

    def to_snapshot_bytes(self) -> bytes:
        lines = [SNAPSHOT_HEADER]
        for v in sorted(self._vertices.values(), key=lambda v: v.id):
            lines.append(
                "\t".join(("V", str(v.id), v.kind.value, _b64(v.text), _b64(_canonical_attrs(v.attrs))))
            )
        for e in sorted(self._edges.values(), key=lambda e: e.id):
            lines.append(
                "\t".join(
                    (
                        "E",
                        str(e.id),
                        e.kind.value,
                        str(e.src),
                        str(e.dst),
                        _b64(e.predicate),
                        _b64(_canonical_attrs(e.attrs)),
                    )
                )
            )
        body = ("\n".join(lines) + "\n").encode("utf-8")
        return body + f"CHECKSUM {fnv1a_64(body):016x}\n".encode("ascii")

    def save_snapshot(self, path: str | os.PathLike) -> None:
        path = Path(path)
        data = self.to_snapshot_bytes()
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(data)
        os.replace(tmp, path)

    @classmethod
    def from_snapshot_bytes(cls, data: bytes) -> MemoryGraph:
        body, sep, tail = data.rstrip(b"\n").rpartition(b"\n")
        if not sep or not tail.startswith(b"CHECKSUM "):
            raise CorruptSnapshot("missing checksum trailer")
        body += b"\n"
        try:
            expected = int(tail[len(b"CHECKSUM ") :].decode("ascii"), 16)
        except ValueError:
            raise CorruptSnapshot("malformed checksum trailer") from None
        if fnv1a_64(body) != expected:
            raise CorruptSnapshot("checksum mismatch")

        text = body.decode("utf-8")
        lines = text.split("\n")[:-1]
        if not lines or lines[0] != SNAPSHOT_HEADER:
            raise CorruptSnapshot("unsupported or missing snapshot header")

        graph = cls()
        try:
            for lineno, line in enumerate(lines[1:], start=2):
                fields = line.split("\t")
                if fields[0] == "V" and len(fields) == 5:
                    vid, kind = int(fields[1]), VertexKind(fields[2])
                    vtext, attrs = _unb64(fields[3]), json.loads(_unb64(fields[4]))
                    if vid in graph._vertices or (kind, vtext) in graph._vertex_key:
                        raise CorruptSnapshot(f"line {lineno}: duplicate vertex")
                    graph._vertices[vid] = Vertex(vid, kind, vtext, attrs)
                    graph._vertex_key[(kind, vtext)] = vid
                    graph._adjacency[vid] = []
                elif fields[0] == "E" and len(fields) == 7:
                    eid, kind = int(fields[1]), EdgeKind(fields[2])
                    src, dst = int(fields[3]), int(fields[4])
                    pred, attrs = _unb64(fields[5]), json.loads(_unb64(fields[6]))
                    if src not in graph._vertices or dst not in graph._vertices:
                        raise CorruptSnapshot(f"line {lineno}: dangling edge endpoint")
                    src_kinds, dst_kinds = EDGE_CONTRACT[kind]
                    if graph._vertices[src].kind not in src_kinds or graph._vertices[dst].kind not in dst_kinds:
                        raise CorruptSnapshot(f"line {lineno}: edge violates kind contract")
                    key = (kind, src, dst, pred)
                    if eid in graph._edges or key in graph._edge_key:
                        raise CorruptSnapshot(f"line {lineno}: duplicate edge")
                    graph._edges[eid] = Edge(eid, kind, src, dst, pred, attrs)
                    graph._edge_key[key] = eid
                    graph._adjacency[src].append(eid)
                    if dst != src:
                        graph._adjacency[dst].append(eid)
                else:
                    raise CorruptSnapshot(f"line {lineno}: unrecognised record")
        except (ValueError, UnicodeDecodeError) as exc:
            raise CorruptSnapshot(f"malformed record: {exc}") from exc

        for adj in graph._adjacency.values():
            adj.sort()
        graph._next_vertex_id = max(graph._vertices, default=0) + 1
        graph._next_edge_id = max(graph._edges, default=0) + 1
        return graph

    @classmethod
    def load_snapshot(cls, path: str | os.PathLike) -> MemoryGraph:
        return cls.from_snapshot_bytes(Path(path).read_bytes())
