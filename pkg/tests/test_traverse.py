from __future__ import annotations

import random
from dataclasses import replace

import pytest

import oracles
from conftest import random_graph
from graphmind.errors import EmptyIndex
from graphmind.graph import ALL_KINDS, EdgeKind, MemoryGraph, VertexKind
from graphmind.memorize import build_index
from graphmind.traverse import (
    NO_EPISODIC,
    BeamConfig,
    Combo,
    NaiveConfig,
    RerankConfig,
    Restriction,
    RetrievalConfig,
    Retriever,
    SortMode,
    WaterConfig,
)
from graphmind.vecindex import HashingEmbedder

NO_RERANK = BeamConfig(rerank=None)


def retriever_for(g: MemoryGraph) -> Retriever:
    return Retriever(g, build_index(g, HashingEmbedder()))


def obj(g: MemoryGraph, text: str) -> int:
    vid = g.find_vertex(VertexKind.OBJECT, text)
    assert vid is not None
    return vid


@pytest.fixture
def film_graph() -> MemoryGraph:
    g = MemoryGraph()
    g.upsert_triple("Payment on Demand", "directed by", "Curtis Bernhardt")
    g.upsert_triple("Curtis Bernhardt", "born in", "Worms")
    g.upsert_triple("Worms", "located in", "Germany")
    g.upsert_triple("My Cousin from Warsaw", "directed by", "Carl Boese")
    g.upsert_triple("Carl Boese", "nationality", "Germany")
    g.upsert_triple("Bette Davis", "starred in", "Payment on Demand")
    ep = g.upsert_vertex(VertexKind.EPISODIC, "Curtis Bernhardt was born in Worms. He directed films.")
    g.link(EdgeKind.HYPER_EPISODIC, obj(g, "Curtis Bernhardt"), ep)
    th = g.upsert_vertex(VertexKind.THESIS, "Carl Boese was a German film director.")
    g.link(EdgeKind.HYPER_THESIS, obj(g, "Carl Boese"), th)
    return g


def test_restriction_parse():
    assert Restriction.parse("all").accepted_kinds == ALL_KINDS
    assert Restriction.parse("E") is NO_EPISODIC
    assert Restriction.parse("Object,Thesis") == NO_EPISODIC
    with pytest.raises(ValueError):
        Restriction.parse("Thesis")


def test_naive_matches_oracle(film_graph):
    r = retriever_for(film_graph)
    cfg = NaiveConfig(max_k=4, rerank=RerankConfig(0.0, 6))
    for q in ("Who directed Payment on Demand?", "Where is Worms?", "German director"):
        got = [t.edge_id for t in r.naive_retrieve(q, cfg)]
        assert got == oracles.naive_oracle(film_graph, r.embedder, q, ALL_KINDS, 6, 0.0, 4)


def test_naive_empty_index():
    with pytest.raises(EmptyIndex):
        retriever_for(MemoryGraph()).naive_retrieve("q", NaiveConfig())


def test_beam_reaches_two_hops(film_graph):
    r = retriever_for(film_graph)
    q = "Which country is the director of Payment on Demand from?"
    # paths may not share vertices, so keep the episodic mention out of the way
    triples = r.beam_search(q, [obj(film_graph, "Payment on Demand")], NO_RERANK, NO_EPISODIC)
    renders = {t.render() for t in triples}
    assert "Payment on Demand | directed by | Curtis Bernhardt" in renders
    assert "Curtis Bernhardt | born in | Worms" in renders


def test_beam_depth_bound(film_graph):
    r = retriever_for(film_graph)
    start = obj(film_graph, "Payment on Demand")
    cfg = replace(NO_RERANK, max_depth=1)
    triples = r.beam_search("anything", [start], cfg)
    assert all(start in (t.subject_id, t.object_id) for t in triples)


def test_beam_max_paths_and_rel_disjointness():
    g = MemoryGraph()
    for i in range(6):
        g.upsert_triple("hub", f"rel{i}", f"leaf{i}")
    r = retriever_for(g)
    cfg = replace(NO_RERANK, max_paths=3, max_depth=1)
    assert len(r.beam_paths("hub leaf", [obj(g, "hub")], cfg)) == 3
    # identical predicates: paths may not share a relation unless allowed
    h = MemoryGraph()
    for i in range(4):
        h.upsert_triple("hub", "same", f"leaf{i}")
    rh = retriever_for(h)
    assert len(rh.beam_paths("hub", [obj(h, "hub")], replace(cfg, max_paths=4))) == 1
    relaxed = replace(cfg, max_paths=4, diff_paths_intersection_by_rel=True)
    assert len(rh.beam_paths("hub", [obj(h, "hub")], relaxed)) == 4


def test_beam_paths_never_revisit_vertices(film_graph):
    r = retriever_for(film_graph)
    for path in r.beam_paths("Germany", [obj(film_graph, "Payment on Demand")], NO_RERANK):
        assert len(set(path.vertices)) == len(path.vertices)


def test_beam_sort_modes_same_triples(film_graph):
    r = retriever_for(film_graph)
    start = [obj(film_graph, "Carl Boese")]
    sets = [
        {t.render() for t in r.beam_search("Germany", start, replace(NO_RERANK, final_sorting_mode=m))}
        for m in SortMode
    ]
    assert sets[0] == sets[1] == sets[2]


def test_beam_rerank_threshold(film_graph):
    r = retriever_for(film_graph)
    cfg = BeamConfig(rerank=RerankConfig(threshold=1.0, fetch_n=5))
    assert r.beam_search("unrelated words", [obj(film_graph, "Carl Boese")], cfg) == []


def test_water_buckets_and_caps(film_graph):
    r = retriever_for(film_graph)
    starts = [obj(film_graph, "Curtis Bernhardt"), obj(film_graph, "Carl Boese")]
    buckets = r.water_buckets("director Germany", starts, WaterConfig(strict_filter=False))
    chain = {t.render() for t in buckets["chain"]}
    # Curtis Bernhardt - Worms - Germany - Carl Boese is the only connection
    assert chain == {
        "Curtis Bernhardt | born in | Worms",
        "Worms | located in | Germany",
        "Carl Boese | nationality | Germany",
    }
    assert [t.render() for t in buckets["hyper"]] == ["Carl Boese | has thesis | Carl Boese was a German film director."]
    assert len(buckets["episodic"]) == 1
    capped = r.water_buckets("director", starts, WaterConfig(strict_filter=False, other_triplets_num=1, chain_triplets_num=2))
    assert len(capped["other"]) <= 1 and len(capped["chain"]) <= 2


def test_water_strict_filter_drops_unrelated(film_graph):
    r = retriever_for(film_graph)
    start = [obj(film_graph, "Payment on Demand")]
    loose = {t.render() for t in r.water_circles("Curtis", start, WaterConfig(strict_filter=False))}
    strict = {t.render() for t in r.water_circles("Curtis", start, WaterConfig(strict_filter=True))}
    assert strict < loose
    assert "Worms | located in | Germany" in loose - strict


def test_water_text_pruning(film_graph):
    r = retriever_for(film_graph)
    cfg = WaterConfig(strict_filter=False, do_text_pruning=True)
    episodic = r.water_buckets("directed films", [obj(film_graph, "Curtis Bernhardt")], cfg)["episodic"]
    assert [t.object for t in episodic] == ["He directed films."]


def test_restriction_e_excludes_episodic(film_graph):
    r = retriever_for(film_graph)
    start = [obj(film_graph, "Curtis Bernhardt")]
    cfg = RetrievalConfig(beam=NO_RERANK, naive=NaiveConfig(rerank=RerankConfig(0.0, 50)))
    for combo in Combo:
        triples = r.combine_retrievals("Curtis Bernhardt born", start, combo, cfg, NO_EPISODIC)
        assert triples
        assert all(VertexKind.EPISODIC not in t.incident_kinds for t in triples)


def test_combine_is_sorted_union(film_graph):
    r = retriever_for(film_graph)
    start = [obj(film_graph, "Carl Boese")]
    cfg = RetrievalConfig(beam=NO_RERANK, naive=NaiveConfig(rerank=RerankConfig(0.0, 50)))
    q = "Carl Boese nationality"
    combined = r.combine_retrievals(q, start, Combo.BS_NR, cfg)
    parts = {t.render() for t in r.beam_search(q, start, cfg.beam)} | {t.render() for t in r.naive_retrieve(q, cfg.naive)}
    assert [t.render() for t in combined] == [t.render() for t in r.sort_by_similarity(q, combined)]
    assert {t.render() for t in combined} == parts


def test_retrieval_within_reachability_bound():
    rng = random.Random(11)
    g = random_graph(rng, 40, 150)
    r = retriever_for(g)
    objects = [v.id for v in g.vertices(VertexKind.OBJECT)]
    for _ in range(5):
        starts = rng.sample(objects, 2)
        bound_beam = oracles.reachable_edges(g, starts, ALL_KINDS, BeamConfig().max_depth)
        bound_water = oracles.reachable_edges(g, starts, ALL_KINDS, 5)
        assert {t.edge_id for t in r.beam_search("river castle", starts, NO_RERANK)} <= bound_beam
        assert {t.edge_id for t in r.water_circles("river castle", starts, WaterConfig())} <= bound_water
