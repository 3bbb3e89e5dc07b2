"""Hybrid text index: exhaustive dense cosine search, BM25, and RRF fusion."""

from __future__ import annotations

import math
import re
import threading
import zlib
from collections import Counter
from collections.abc import Callable, Iterable
from dataclasses import dataclass
from functools import lru_cache
from typing import Protocol

import httpx
import numpy as np

from graphmind.errors import BackendError, BackendUnreachable, UnknownNamespace

BM25_K1 = 1.2
BM25_B = 0.75
RRF_K = 60
# cosines are rounded so mathematically equal scores tie and fall back to doc id
SIM_DECIMALS = 12

_TOKEN_RE = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on anything that is not a letter or digit."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class ScoredHit:
    doc_id: str
    score: float
    rank: int


class Embedder(Protocol):
    def embed(self, text: str) -> np.ndarray: ...

    def dim(self) -> int: ...


def _normalize(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if norm == 0.0 or not math.isfinite(norm):
        return np.zeros_like(vec)
    return vec / norm


class HashingEmbedder:
    """Signed feature hashing of character 3-grams, L2-normalised.

    Deterministic and dependency-free; similarity follows lexical overlap.
    """

    def __init__(self, dim: int = 64) -> None:
        if dim < 1:
            raise ValueError("dim must be positive")
        self._dim = dim
        self._cached = lru_cache(maxsize=65536)(self._embed)

    def dim(self) -> int:
        return self._dim

    def embed(self, text: str) -> np.ndarray:
        return self._cached(text)

    def _embed(self, text: str) -> np.ndarray:
        padded = f" {text.lower()} "
        vec = np.zeros(self._dim, dtype=np.float64)
        grams = [padded[i : i + 3] for i in range(len(padded) - 2)] or [padded]
        for gram in grams:
            h = zlib.crc32(gram.encode("utf-8"))
            sign = 1.0 if (h >> 31) & 1 else -1.0
            vec[h % self._dim] += sign
        out = _normalize(vec)
        out.setflags(write=False)
        return out


class HttpEmbedder:
    """Embeddings from a remote endpoint speaking ``{model, prompt} -> {embedding}``."""

    def __init__(self, url: str, model: str, timeout: float = 60.0, client: httpx.Client | None = None) -> None:
        self.url = url
        self.model = model
        self._client = client or httpx.Client(timeout=timeout)
        self._dim: int | None = None
        self._cached = lru_cache(maxsize=65536)(self._embed)

    def dim(self) -> int:
        if self._dim is None:
            self._dim = int(self.embed("dimension probe").shape[0])
        return self._dim

    def embed(self, text: str) -> np.ndarray:
        return self._cached(text)

    def _embed(self, text: str) -> np.ndarray:
        try:
            resp = self._client.post(self.url, json={"model": self.model, "prompt": text})
        except httpx.TransportError as exc:
            raise BackendUnreachable(f"embedder at {self.url}: {exc}") from exc
        if resp.status_code >= 400:
            raise BackendError(resp.status_code, resp.text[:200])
        vec = np.asarray(resp.json()["embedding"], dtype=np.float64)
        out = _normalize(vec)
        out.setflags(write=False)
        return out


def bm25_idf(n_docs: int, doc_freq: int) -> float:
    # Lucene variant: never negative, so every matching doc scores above zero
    return math.log(1.0 + (n_docs - doc_freq + 0.5) / (doc_freq + 0.5))


def rrf_fuse(ranked_lists: Iterable[list[str]], k: int = RRF_K) -> dict[str, float]:
    fused: dict[str, float] = {}
    for ranking in ranked_lists:
        for rank, doc_id in enumerate(ranking, start=1):
            fused[doc_id] = fused.get(doc_id, 0.0) + 1.0 / (k + rank)
    return fused


def top_hits(scores: dict[str, float], k: int) -> list[ScoredHit]:
    ordered = sorted(scores.items(), key=lambda item: (-item[1], item[0]))[:k]
    return [ScoredHit(doc_id, score, rank) for rank, (doc_id, score) in enumerate(ordered, start=1)]


class _Collection:
    def __init__(self, dim: int) -> None:
        self.ids: list[str] = []
        self.texts: list[str] = []
        self.position: dict[str, int] = {}
        self.matrix = np.zeros((0, dim), dtype=np.float64)
        self._rows: list[np.ndarray] = []
        self._dirty = False
        self.term_freqs: list[Counter[str]] = []
        self.doc_len: list[int] = []
        self.postings: dict[str, set[int]] = {}

    def put(self, doc_id: str, text: str, vec: np.ndarray) -> None:
        tokens = tokenize(text)
        tf = Counter(tokens)
        pos = self.position.get(doc_id)
        if pos is None:
            pos = len(self.ids)
            self.position[doc_id] = pos
            self.ids.append(doc_id)
            self.texts.append(text)
            self._rows.append(vec)
            self.term_freqs.append(tf)
            self.doc_len.append(len(tokens))
        else:
            for term in self.term_freqs[pos]:
                self.postings[term].discard(pos)
            self.texts[pos] = text
            self._rows[pos] = vec
            self.term_freqs[pos] = tf
            self.doc_len[pos] = len(tokens)
        for term in tf:
            self.postings.setdefault(term, set()).add(pos)
        self._dirty = True

    def dense_matrix(self) -> np.ndarray:
        if self._dirty:
            dim = self.matrix.shape[1]
            self.matrix = np.vstack(self._rows) if self._rows else np.zeros((0, dim))
            self._dirty = False
        return self.matrix


class VectorIndex:
    """Namespaced dense + sparse index over short texts.

    Searches are pure reads; ``index_text`` takes a lock and must not run
    concurrently with searches on the same namespace.
    """

    def __init__(self, embedder: Embedder, k1: float = BM25_K1, b: float = BM25_B) -> None:
        self.embedder = embedder
        self.k1 = k1
        self.b = b
        self._collections: dict[str, _Collection] = {}
        self._lock = threading.Lock()

    def namespaces(self) -> list[str]:
        return sorted(self._collections)

    def size(self, namespace: str) -> int:
        coll = self._collections.get(namespace)
        return len(coll.ids) if coll else 0

    def text(self, namespace: str, doc_id: str) -> str:
        coll = self._collection(namespace)
        return coll.texts[coll.position[doc_id]]

    def _collection(self, namespace: str) -> _Collection:
        try:
            return self._collections[namespace]
        except KeyError:
            raise UnknownNamespace(f"namespace {namespace!r} has not been indexed") from None

    def index_text(self, namespace: str, doc_id: str, text: str) -> None:
        vec = self.embedder.embed(text)
        with self._lock:
            coll = self._collections.get(namespace)
            if coll is None:
                coll = self._collections[namespace] = _Collection(self.embedder.dim())
            coll.put(doc_id, text, vec)

    def ensure_namespace(self, namespace: str) -> None:
        with self._lock:
            self._collections.setdefault(namespace, _Collection(self.embedder.dim()))

    # -- dense ---------------------------------------------------------------

    def similarities(self, namespace: str, query: str) -> dict[str, float]:
        """Cosine similarity of the query to every document, rounded to ``SIM_DECIMALS``."""
        coll = self._collection(namespace)
        matrix = coll.dense_matrix()
        if not len(coll.ids):
            return {}
        scores = matrix @ self.embedder.embed(query)
        return {doc_id: round(float(s), SIM_DECIMALS) for doc_id, s in zip(coll.ids, scores)}

    def dense_search(
        self,
        namespace: str,
        query: str,
        k: int,
        where: Callable[[str], bool] | None = None,
    ) -> list[ScoredHit]:
        if k < 1:
            raise ValueError("k must be >= 1")
        scores = self.similarities(namespace, query)
        if where is not None:
            scores = {d: s for d, s in scores.items() if where(d)}
        return top_hits(scores, k)

    # -- sparse --------------------------------------------------------------

    def bm25_scores(self, namespace: str, query: str) -> dict[str, float]:
        coll = self._collection(namespace)
        n_docs = len(coll.ids)
        if not n_docs:
            return {}
        avgdl = sum(coll.doc_len) / n_docs
        scores: dict[int, float] = {}
        for term in tokenize(query):
            docs = coll.postings.get(term)
            if not docs:
                continue
            idf = bm25_idf(n_docs, len(docs))
            for pos in docs:
                tf = coll.term_freqs[pos][term]
                norm = 1.0 - self.b + self.b * (coll.doc_len[pos] / avgdl if avgdl else 0.0)
                scores[pos] = scores.get(pos, 0.0) + idf * tf * (self.k1 + 1.0) / (tf + self.k1 * norm)
        return {coll.ids[pos]: s for pos, s in scores.items()}

    def sparse_search(self, namespace: str, query: str, k: int) -> list[ScoredHit]:
        if k < 1:
            raise ValueError("k must be >= 1")
        return top_hits(self.bm25_scores(namespace, query), k)

    # -- fusion --------------------------------------------------------------

    def hybrid_search(self, namespace: str, query: str, k: int) -> list[ScoredHit]:
        """Reciprocal rank fusion of the full dense and sparse rankings.

        The dense ranking only contains documents with positive cosine
        similarity; the sparse ranking only documents sharing a query term.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        dense = [h.doc_id for h in top_hits(self.similarities(namespace, query), self.size(namespace)) if h.score > 0.0]
        sparse = [h.doc_id for h in top_hits(self.bm25_scores(namespace, query), self.size(namespace))]
        return top_hits(rrf_fuse([dense, sparse]), k)
