"""Exact dense retrieval, BM25, and hard-negative mining."""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np

from .data import Corpus, Qrels, QuerySet, Run, rank_key
from .encoder import EncoderConfig, TokenizerSpec, ToyEncoder, terms
from .tensor_store import TensorArchive


def top_k(doc_ids: list[str], scores: np.ndarray, k: int) -> list[tuple[str, float]]:
    """Top ``k`` of ``scores`` ordered by (score desc, doc_id asc)."""
    if k <= 0:
        raise ValueError("k must be positive")
    n = len(doc_ids)
    if k < n:
        threshold = np.partition(scores, n - k)[n - k]
        candidates = np.flatnonzero(scores >= threshold)
    else:
        candidates = range(n)
    ranked = sorted(((doc_ids[i], float(scores[i])) for i in candidates), key=rank_key)
    return ranked[:k]


def similarity(doc_matrix: np.ndarray, query_vec: np.ndarray) -> np.ndarray:
    # products of float32 values are exact in float64; each row is reduced identically
    return (doc_matrix.astype(np.float64) * query_vec.astype(np.float64)).sum(axis=1)


class DenseIndex:
    """Exhaustive inner-product index over one encoder's document embeddings."""

    def __init__(self, encoder: ToyEncoder, corpus: Corpus):
        self.encoder = encoder
        self.doc_ids = corpus.ids()
        self.embeddings = encoder.encode_many([corpus.docs[d].full_text for d in self.doc_ids])

    def encode_queries(self, queries: QuerySet) -> dict[str, np.ndarray]:
        prefix = self.encoder.config.query_prefix
        return {qid: self.encoder.encode(prefix + text) for qid, text in queries.queries.items()}

    def search(self, query_vecs: dict[str, np.ndarray], k: int, tag: str = "dense") -> Run:
        rankings = {
            qid: top_k(self.doc_ids, similarity(self.embeddings, vec), k)
            for qid, vec in query_vecs.items()
        }
        return Run(rankings, tag)

    def retrieve(self, queries: QuerySet, k: int, tag: str = "dense") -> Run:
        return self.search(self.encode_queries(queries), k, tag)


def dense_retrieve(
    archive: TensorArchive,
    config: EncoderConfig,
    spec: TokenizerSpec,
    corpus: Corpus,
    queries: QuerySet,
    k: int,
    tag: str = "dense",
) -> Run:
    """Cosine top-``k`` for every query by exhaustive search."""
    return DenseIndex(ToyEncoder(archive, config, spec), corpus).retrieve(queries, k, tag)


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 0.9
    b: float = 0.4

    def __post_init__(self) -> None:
        if self.k1 <= 0:
            raise ValueError("k1 must be positive")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must lie in [0, 1]")


class Bm25Index:
    """Inverted index over ``title + " " + text`` using the tokenizer's terms.

    Scores use the non-negative idf ``ln(1 + (N - df + 0.5) / (df + 0.5))``.
    Raw terms are indexed, not hashed ids, so unrelated words never collide.
    """

    def __init__(self, corpus: Corpus, params: Bm25Params = Bm25Params(), spec: TokenizerSpec = TokenizerSpec()):
        self.params = params
        self.mode = spec.mode
        self.postings: dict[str, list[tuple[str, int]]] = defaultdict(list)
        self.doc_len: dict[str, int] = {}
        for doc_id, doc in corpus.docs.items():
            toks = terms(doc.full_text, self.mode)
            self.doc_len[doc_id] = len(toks)
            for term, tf in Counter(toks).items():
                self.postings[term].append((doc_id, tf))
        self.n_docs = len(corpus)
        self.avgdl = sum(self.doc_len.values()) / self.n_docs
        self.idf = {
            t: math.log(1.0 + (self.n_docs - len(p) + 0.5) / (len(p) + 0.5))
            for t, p in self.postings.items()
        }

    def scores(self, query: str) -> dict[str, float]:
        k1, b = self.params.k1, self.params.b
        # an empty corpus text gives avgdl 0; every tf is then 0 anyway
        avgdl = self.avgdl or 1.0
        acc: dict[str, float] = defaultdict(float)
        for term in sorted(set(terms(query, self.mode))):
            idf = self.idf.get(term)
            if idf is None:
                continue
            for doc_id, tf in self.postings[term]:
                norm = k1 * (1.0 - b + b * self.doc_len[doc_id] / avgdl)
                acc[doc_id] += idf * tf * (k1 + 1.0) / (tf + norm)
        return dict(acc)

    def retrieve(self, queries: QuerySet, k: int, tag: str = "bm25") -> Run:
        rankings = {}
        for qid, text in queries.queries.items():
            rankings[qid] = sorted(self.scores(text).items(), key=rank_key)[:k]
        return Run(rankings, tag)


def bm25_retrieve(
    corpus: Corpus,
    queries: QuerySet,
    params: Bm25Params = Bm25Params(),
    spec: TokenizerSpec = TokenizerSpec(),
    k: int = 100,
) -> Run:
    return Bm25Index(corpus, params, spec).retrieve(queries, k)


def mine_hard_negatives(run: Run, qrels: Qrels, n: int = 30) -> tuple[dict[str, list[str]], list[str]]:
    """First ``n`` ranked documents per query that are judged 0 or unjudged.

    Returns ``(negatives, warnings)``; a query with no judgments at all is
    kept (everything counts as unjudged) and reported in ``warnings``.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    judged = qrels.by_query()
    negatives: dict[str, list[str]] = {}
    warnings: list[str] = []
    for qid, ranked in run.rankings.items():
        grades = judged.get(qid)
        if grades is None:
            warnings.append(f"query {qid!r} has no judgments; all retrieved docs treated as non-relevant")
            grades = {}
        negatives[qid] = [d for d, _ in ranked if grades.get(d, 0) <= 0][:n]
    return negatives, warnings
