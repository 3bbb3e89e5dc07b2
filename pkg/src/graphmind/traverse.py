"""Graph retrievers: flat triple search, beam search, water circles and their hybrids.

Every retriever is read-only over the graph and index. Similarities are
rounded to ``SIM_DECIMALS`` places before ordering so results do not depend
on floating-point summation order; remaining ties are broken by the triple
rendering.
"""

from __future__ import annotations

import re
from collections import deque
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from enum import Enum

from graphmind.errors import EmptyIndex, UnknownNamespace
from graphmind.graph import ALL_KINDS, EdgeKind, MemoryGraph, Triple, VertexKind
from graphmind.memorize import TRIPLES_NS
from graphmind.vecindex import SIM_DECIMALS, VectorIndex, tokenize

WATER_MAX_RADIUS = 5

# Small English stop list for the strict-filter token overlap test.
STOPWORDS = frozenset(
    """a an and are as at be by did do does for from had has have how in is it its
    of on or that the this to was were what when where which who whom whose why
    with""".split()
)


class SortMode(str, Enum):
    MIXED = "mixed"
    SCORE = "score"
    DEPTH = "depth"


class Combo(str, Enum):
    BS_WC = "BS_WC"
    BS_NR = "BS_NR"
    NR_ONLY = "NR_only"


@dataclass(frozen=True)
class RerankConfig:
    threshold: float = 0.5
    fetch_n: int = 25
    method: str = "single_step"

    def __post_init__(self) -> None:
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("rerank threshold must lie in [0, 1]")
        if self.fetch_n < 1:
            raise ValueError("rerank fetch_n must be >= 1")
        if self.method != "single_step":
            raise ValueError(f"unsupported rerank method {self.method!r}")


@dataclass(frozen=True)
class BeamConfig:
    max_depth: int = 5
    max_paths: int = 10
    same_path_intersection_by_node: bool = False
    diff_paths_intersection_by_node: bool = False
    diff_paths_intersection_by_rel: bool = False
    mean_alpha: float = 0.75
    final_sorting_mode: SortMode = SortMode.MIXED
    rerank: RerankConfig | None = field(default_factory=lambda: RerankConfig(0.5, 25))

    def __post_init__(self) -> None:
        if self.max_depth < 1 or self.max_paths < 1:
            raise ValueError("max_depth and max_paths must be >= 1")
        if not 0.0 <= self.mean_alpha <= 1.0:
            raise ValueError("mean_alpha must lie in [0, 1]")
        object.__setattr__(self, "final_sorting_mode", SortMode(self.final_sorting_mode))


@dataclass(frozen=True)
class WaterConfig:
    strict_filter: bool = True
    hyper_num: int = 15
    episodic_num: int = 15
    chain_triplets_num: int = 25
    other_triplets_num: int = 6
    do_text_pruning: bool = False

    def __post_init__(self) -> None:
        if min(self.hyper_num, self.episodic_num, self.chain_triplets_num, self.other_triplets_num) < 0:
            raise ValueError("water circle quotas must be >= 0")


@dataclass(frozen=True)
class NaiveConfig:
    max_k: int = 50
    rerank: RerankConfig = field(default_factory=lambda: RerankConfig(0.5, 50))

    def __post_init__(self) -> None:
        if self.max_k < 1:
            raise ValueError("max_k must be >= 1")


@dataclass(frozen=True)
class RetrievalConfig:
    beam: BeamConfig = field(default_factory=BeamConfig)
    water: WaterConfig = field(default_factory=WaterConfig)
    naive: NaiveConfig = field(default_factory=NaiveConfig)


@dataclass(frozen=True)
class Restriction:
    accepted_kinds: frozenset[VertexKind] = ALL_KINDS

    def __post_init__(self) -> None:
        object.__setattr__(self, "accepted_kinds", frozenset(VertexKind(k) for k in self.accepted_kinds))
        if VertexKind.OBJECT not in self.accepted_kinds:
            raise ValueError("a restriction must accept object vertices")

    @property
    def name(self) -> str:
        if self.accepted_kinds == ALL_KINDS:
            return "all"
        if self.accepted_kinds == NO_EPISODIC.accepted_kinds:
            return "E"
        return ",".join(sorted(k.value for k in self.accepted_kinds))

    @classmethod
    def parse(cls, name: str) -> Restriction:
        if name.lower() == "all":
            return ALL
        if name == "E":
            return NO_EPISODIC
        return cls(frozenset(VertexKind(part.strip()) for part in name.split(",")))

    def allows(self, triple: Triple) -> bool:
        return triple.incident_kinds <= self.accepted_kinds


ALL = Restriction(ALL_KINDS)
NO_EPISODIC = Restriction(frozenset({VertexKind.OBJECT, VertexKind.THESIS}))


def content_tokens(text: str) -> set[str]:
    return {tok for tok in tokenize(text) if tok not in STOPWORDS}


def dedup_by_text(triples: Iterable[Triple]) -> list[Triple]:
    seen: set[Triple] = set()
    out = []
    for t in triples:
        if t not in seen:
            seen.add(t)
            out.append(t)
    return out


@dataclass(frozen=True)
class _Path:
    vertices: tuple[int, ...]
    edges: tuple[int, ...]
    score: float
    renders: tuple[str, ...]
    predicates: tuple[str, ...]

    def key(self) -> tuple:
        return (-self.score, len(self.edges), self.renders, self.edges)


class Retriever:
    """Bundles graph, index and embedder for the retrieval algorithms."""

    def __init__(self, graph: MemoryGraph, index: VectorIndex) -> None:
        self.graph = graph
        self.index = index
        self.embedder = index.embedder
        self._triple_cache: dict[int, Triple] = {}

    # -- similarity ----------------------------------------------------------

    def similarity(self, query: str, text: str) -> float:
        q = self.embedder.embed(query)
        return round(float(self.embedder.embed(text) @ q), SIM_DECIMALS)

    def scorer(self, query: str):
        q = self.embedder.embed(query)
        cache: dict[str, float] = {}

        def score(triple: Triple) -> float:
            text = triple.render()
            s = cache.get(text)
            if s is None:
                s = cache[text] = round(float(self.embedder.embed(text) @ q), SIM_DECIMALS)
            return s

        return score

    def sort_by_similarity(self, query: str, triples: Iterable[Triple]) -> list[Triple]:
        score = self.scorer(query)
        return sorted(triples, key=lambda t: (-score(t), t.render()))

    def rerank(self, query: str, triples: Iterable[Triple], cfg: RerankConfig) -> list[Triple]:
        """Single-step rerank: keep triples at or above threshold, best ``fetch_n`` first."""
        score = self.scorer(query)
        kept = [t for t in dedup_by_text(triples) if score(t) >= cfg.threshold]
        kept.sort(key=lambda t: (-score(t), t.render()))
        return kept[: cfg.fetch_n]

    def _triple(self, edge_id: int) -> Triple:
        t = self._triple_cache.get(edge_id)
        if t is None:
            t = self._triple_cache[edge_id] = self.graph.triple(edge_id)
        return t

    def _incident(self, vertex_id: int, restriction: Restriction) -> list[Triple]:
        return [
            t
            for t in (self._triple(eid) for eid in self.graph.incident_edge_ids(vertex_id))
            if restriction.allows(t)
        ]

    def _check_starts(self, start_vertices: Sequence[int]) -> list[int]:
        starts = list(dict.fromkeys(start_vertices))
        if not starts:
            raise ValueError("at least one start vertex is required")
        for vid in starts:
            self.graph.vertex(vid)
        return starts

    # -- naive ---------------------------------------------------------------

    def naive_retrieve(self, query: str, cfg: NaiveConfig, restriction: Restriction = ALL) -> list[Triple]:
        """Flat nearest-triple search over the whole triple index."""
        try:
            sims = self.index.similarities(TRIPLES_NS, query)
        except UnknownNamespace:
            sims = {}
        if not sims:
            raise EmptyIndex("the triple index is empty")
        scored = []
        for doc_id, sim in sims.items():
            t = self._triple(int(doc_id))
            if restriction.allows(t):
                scored.append((round(sim, SIM_DECIMALS), t))
        scored.sort(key=lambda item: (-item[0], item[1].render()))
        seen: set[Triple] = set()
        fetched = []
        for sim, t in scored:
            if t in seen:
                continue
            seen.add(t)
            fetched.append((sim, t))
            if len(fetched) == cfg.rerank.fetch_n:
                break
        return [t for sim, t in fetched if sim >= cfg.rerank.threshold][: cfg.max_k]

    # -- beam search ---------------------------------------------------------

    def beam_paths(
        self, query: str, start_vertices: Sequence[int], cfg: BeamConfig, restriction: Restriction = ALL
    ) -> list[_Path]:
        starts = self._check_starts(start_vertices)
        start_set = set(starts)
        score = self.scorer(query)
        alpha = cfg.mean_alpha

        beam = [_Path((s,), (), 0.0, (), ()) for s in starts]
        for _depth in range(cfg.max_depth):
            pool: list[_Path] = []
            extended = False
            for path in beam:
                last = path.vertices[-1]
                children = 0
                for t in self._incident(last, restriction):
                    if t.edge_id in path.edges:
                        continue
                    nxt = t.object_id if t.subject_id == last else t.subject_id
                    if not cfg.same_path_intersection_by_node and nxt in path.vertices:
                        continue
                    edge_score = score(t)
                    new_score = edge_score if not path.edges else alpha * path.score + (1 - alpha) * edge_score
                    pool.append(
                        _Path(
                            path.vertices + (nxt,),
                            path.edges + (t.edge_id,),
                            new_score,
                            path.renders + (t.render(),),
                            path.predicates + (t.predicate,),
                        )
                    )
                    children += 1
                if children == 0 and path.edges:
                    pool.append(path)  # dead end: carried over unchanged
                extended = extended or children > 0
            if not extended:
                break
            beam = self._select(pool, start_set, cfg)
            if not beam:
                break
        return [p for p in beam if p.edges]

    @staticmethod
    def _select(pool: list[_Path], start_set: set[int], cfg: BeamConfig) -> list[_Path]:
        chosen: list[_Path] = []
        used_nodes: set[int] = set()
        used_rels: set[str] = set()
        for path in sorted(pool, key=_Path.key):
            nodes = set(path.vertices) - start_set
            rels = set(path.predicates)
            if not cfg.diff_paths_intersection_by_node and nodes & used_nodes:
                continue
            if not cfg.diff_paths_intersection_by_rel and rels & used_rels:
                continue
            chosen.append(path)
            used_nodes |= nodes
            used_rels |= rels
            if len(chosen) == cfg.max_paths:
                break
        return chosen

    @staticmethod
    def order_paths(paths: list[_Path], mode: SortMode) -> list[_Path]:
        by_score = sorted(paths, key=_Path.key)
        if mode is SortMode.SCORE:
            return by_score
        by_depth = sorted(paths, key=lambda p: (len(p.edges), -p.score, p.renders, p.edges))
        if mode is SortMode.DEPTH:
            return by_depth
        out: list[_Path] = []
        emitted: set[tuple[int, ...]] = set()
        for pair in zip(by_score, by_depth):
            for path in pair:
                if path.edges not in emitted:
                    emitted.add(path.edges)
                    out.append(path)
        return out

    def beam_search(
        self, query: str, start_vertices: Sequence[int], cfg: BeamConfig, restriction: Restriction = ALL
    ) -> list[Triple]:
        paths = self.order_paths(self.beam_paths(query, start_vertices, cfg, restriction), cfg.final_sorting_mode)
        triples = dedup_by_text(self._triple(eid) for path in paths for eid in path.edges)
        if cfg.rerank is not None:
            return self.rerank(query, triples, cfg.rerank)
        return triples

    # -- water circles -------------------------------------------------------

    def _distances(self, source: int, restriction: Restriction, limit: int) -> dict[int, int]:
        dist = {source: 0}
        queue = deque([source])
        while queue:
            u = queue.popleft()
            if dist[u] == limit:
                continue
            for t in self._incident(u, restriction):
                v = t.object_id if t.subject_id == u else t.subject_id
                if v not in dist:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        return dist

    def chain_edges(self, starts: Sequence[int], restriction: Restriction, radius: int = WATER_MAX_RADIUS) -> set[int]:
        """Edges lying on a shortest path between two distinct start vertices."""
        dists = {s: self._distances(s, restriction, 2 * radius) for s in starts}
        chain: set[int] = set()
        for i, s in enumerate(starts):
            for t in starts[i + 1 :]:
                total = dists[s].get(t)
                if total is None or total == 0:
                    continue
                ds, dt = dists[s], dists[t]
                for u, du in ds.items():
                    if du >= total:
                        continue
                    for tr in self._incident(u, restriction):
                        v = tr.object_id if tr.subject_id == u else tr.subject_id
                        if v in dt and du + 1 + dt[v] == total:
                            chain.add(tr.edge_id)
        return chain

    def water_buckets(
        self, query: str, start_vertices: Sequence[int], cfg: WaterConfig, restriction: Restriction = ALL
    ) -> dict[str, list[Triple]]:
        starts = self._check_starts(start_vertices)
        start_set = set(starts)
        chain = self.chain_edges(starts, restriction)
        query_tokens = content_tokens(query)
        caps = {
            "chain": cfg.chain_triplets_num,
            "episodic": cfg.episodic_num,
            "hyper": cfg.hyper_num,
            "other": cfg.other_triplets_num,
        }
        found: dict[str, list[Triple]] = {name: [] for name in caps}

        def bucket_of(t: Triple) -> str:
            if t.edge_id in chain:
                return "chain"
            kind = self.graph.edge(t.edge_id).kind
            if kind is EdgeKind.HYPER_EPISODIC:
                return "episodic"
            if kind is EdgeKind.HYPER_THESIS:
                return "hyper"
            return "other"

        def passes_filter(t: Triple) -> bool:
            if t.subject_id in start_set or t.object_id in start_set:
                return True
            return bool(query_tokens & content_tokens(t.render()))

        visited = set(starts)
        seen_edges: set[int] = set()
        frontier = sorted(starts)
        for _radius in range(WATER_MAX_RADIUS):
            next_frontier: list[int] = []
            for u in frontier:
                for t in self._incident(u, restriction):
                    if t.edge_id in seen_edges:
                        continue
                    seen_edges.add(t.edge_id)
                    v = t.object_id if t.subject_id == u else t.subject_id
                    if v not in visited:
                        visited.add(v)
                        next_frontier.append(v)
                    name = bucket_of(t)
                    if name != "chain" and cfg.strict_filter and not passes_filter(t):
                        continue
                    found[name].append(t)
            if all(len(found[name]) >= caps[name] for name in caps) or not next_frontier:
                break
            frontier = next_frontier

        score = self.scorer(query)
        out = {}
        for name, triples in found.items():
            ranked = sorted(dedup_by_text(triples), key=lambda t: (-score(t), t.render()))
            out[name] = ranked[: caps[name]]
        if cfg.do_text_pruning:
            out = {name: [self._prune(t, query_tokens) for t in ts] for name, ts in out.items()}
        return out

    def _prune(self, triple: Triple, query_tokens: set[str]) -> Triple:
        """Cut episodic text down to the sentences sharing a token with the query."""
        if VertexKind.EPISODIC not in triple.incident_kinds:
            return triple
        episodic_is_object = self.graph.vertex(triple.object_id).kind is VertexKind.EPISODIC
        text = triple.object if episodic_is_object else triple.subject
        sentences = [s for s in re.split(r"(?<=[.!?])\s+", text) if s]
        kept = [s for s in sentences if query_tokens & content_tokens(s)] or sentences[:1]
        pruned = " ".join(kept)
        if episodic_is_object:
            return Triple(triple.subject, triple.predicate, pruned, triple.edge_id, triple.incident_kinds,
                          triple.subject_id, triple.object_id)
        return Triple(pruned, triple.predicate, triple.object, triple.edge_id, triple.incident_kinds,
                      triple.subject_id, triple.object_id)

    def water_circles(
        self, query: str, start_vertices: Sequence[int], cfg: WaterConfig, restriction: Restriction = ALL
    ) -> list[Triple]:
        buckets = self.water_buckets(query, start_vertices, cfg, restriction)
        return dedup_by_text(t for name in ("chain", "episodic", "hyper", "other") for t in buckets[name])

    # -- hybrids -------------------------------------------------------------

    def combine_retrievals(
        self,
        query: str,
        start_vertices: Sequence[int],
        combo: Combo,
        cfg: RetrievalConfig,
        restriction: Restriction = ALL,
    ) -> list[Triple]:
        combo = Combo(combo)
        parts: list[list[Triple]] = []
        if combo in (Combo.BS_WC, Combo.BS_NR):
            parts.append(self.beam_search(query, start_vertices, cfg.beam, restriction))
        if combo is Combo.BS_WC:
            parts.append(self.water_circles(query, start_vertices, cfg.water, restriction))
        if combo in (Combo.BS_NR, Combo.NR_ONLY):
            parts.append(self.naive_retrieve(query, cfg.naive, restriction))
        return self.sort_by_similarity(query, dedup_by_text(t for part in parts for t in part))
