from __future__ import annotations

import math

import httpx
import numpy as np
import pytest

import oracles
from graphmind.errors import BackendError, BackendUnreachable, UnknownNamespace
from graphmind.vecindex import HashingEmbedder, HttpEmbedder, VectorIndex, tokenize


@pytest.fixture
def index() -> VectorIndex:
    idx = VectorIndex(HashingEmbedder())
    for i, text in enumerate(["Carl Boese", "Curtis Bernhardt", "Payment on Demand", "My Cousin from Warsaw", "Germany"]):
        idx.index_text("objects", str(i), text)
    return idx


def test_tokenize_lowercases_and_drops_underscores():
    assert tokenize("Hello, World_wide 42!") == ["hello", "world", "wide", "42"]


def test_hashing_embedder_is_normalized_and_deterministic():
    emb = HashingEmbedder()
    v = emb.embed("Payment on Demand")
    assert v.shape == (64,)
    assert np.linalg.norm(v) == pytest.approx(1.0)
    assert np.array_equal(v, HashingEmbedder().embed("Payment on Demand"))


def test_dense_search_self_match_first(index):
    hits = index.dense_search("objects", "Curtis Bernhardt", 2)
    assert hits[0].doc_id == "1"
    assert hits[0].score == pytest.approx(1.0)


def test_dense_scores_match_cosine(index):
    emb = index.embedder
    sims = index.similarities("objects", "director Carl")
    for doc_id, score in sims.items():
        expected = oracles.cosine(emb.embed(index.text("objects", doc_id)), emb.embed("director Carl"))
        assert score == pytest.approx(expected, abs=1e-9)


def test_dense_where_filter(index):
    hits = index.dense_search("objects", "Carl Boese", 5, where=lambda d: d != "0")
    assert "0" not in [h.doc_id for h in hits]


def test_sparse_ignores_unmatched_docs(index):
    hits = index.sparse_search("objects", "warsaw cousin", 5)
    assert [h.doc_id for h in hits] == ["3"]


def test_reindex_same_id_replaces_text(index):
    index.index_text("objects", "4", "France")
    assert index.size("objects") == 5
    assert index.sparse_search("objects", "germany", 3) == []
    assert index.sparse_search("objects", "france", 3)[0].doc_id == "4"


def test_errors(index):
    with pytest.raises(UnknownNamespace):
        index.dense_search("nope", "x", 1)
    with pytest.raises(ValueError):
        index.sparse_search("objects", "x", 0)


def test_hybrid_matches_rrf_oracle(index):
    q = "Carl Bernhardt"
    dense = oracles.rank({d: s for d, s in index.similarities("objects", q).items() if s > 0})
    sparse = oracles.rank(oracles.bm25({d: index.text("objects", d) for d in map(str, range(5))}, q))
    expected = oracles.rank(oracles.rrf([dense, sparse]))[:3]
    assert [h.doc_id for h in index.hybrid_search("objects", q, 3)] == expected


def test_bm25_idf_is_positive_for_common_terms():
    idx = VectorIndex(HashingEmbedder())
    for i in range(3):
        idx.index_text("ns", str(i), "film film")
    scores = idx.bm25_scores("ns", "film")
    assert all(s > 0 for s in scores.values())
    expected = math.log(1 + 0.5 / 3.5)
    assert scores["0"] == pytest.approx(expected * 2 * 2.2 / (2 + 1.2))


def _client(handler) -> httpx.Client:
    return httpx.Client(transport=httpx.MockTransport(handler))


def test_http_embedder_roundtrip():
    def handler(request: httpx.Request) -> httpx.Response:
        assert request.url.path == "/api/embeddings"
        return httpx.Response(200, json={"embedding": [3.0, 4.0]})

    emb = HttpEmbedder("http://local/api/embeddings", "m", client=_client(handler))
    assert emb.embed("hello").tolist() == pytest.approx([0.6, 0.8])
    assert emb.dim() == 2


def test_http_embedder_errors():
    def refuse(request):
        raise httpx.ConnectError("refused")

    with pytest.raises(BackendUnreachable):
        HttpEmbedder("http://local/x", "m", client=_client(refuse)).embed("a")
    with pytest.raises(BackendError):
        HttpEmbedder("http://local/x", "m", client=_client(lambda r: httpx.Response(500, text="boom"))).embed("b")
