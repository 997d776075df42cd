"""Similarity scoring: cosine over sentence vectors, greedy token-matching
recall over token matrices, and Okapi BM25 over raw text."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import Dataset, ScoreVector
from .errors import MissingScore, SchemaMismatch, ZeroVector
from .store import EmbeddingSet

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase terms split on any non-alphanumeric run."""
    return _TOKEN_RE.findall(text.lower())


def cosine_score(q: np.ndarray, c: np.ndarray) -> float:
    q = np.asarray(q, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if q.shape != c.shape:
        raise SchemaMismatch(f"cosine dims differ: {q.shape} vs {c.shape}")
    qn = np.linalg.norm(q)
    cn = np.linalg.norm(c)
    if qn == 0.0 or cn == 0.0:
        raise ZeroVector("cosine is undefined for a zero-norm vector")
    return float(q @ c / (qn * cn))


def bsr_score(query_tokens: np.ndarray, candidate_tokens: np.ndarray) -> float:
    """Mean over query tokens of the best cosine match among candidate tokens.

    Unweighted recall; no idf term. Invariant to candidate token order and
    duplication.
    """
    q = np.asarray(query_tokens, dtype=np.float64)
    c = np.asarray(candidate_tokens, dtype=np.float64)
    if q.ndim != 2 or c.ndim != 2 or q.shape[0] < 1 or c.shape[0] < 1:
        raise SchemaMismatch("token matrices must be (T, d) with T >= 1")
    if q.shape[1] != c.shape[1]:
        raise SchemaMismatch(f"token dims differ: {q.shape[1]} vs {c.shape[1]}")
    qn = np.linalg.norm(q, axis=1)
    cn = np.linalg.norm(c, axis=1)
    if np.any(qn == 0.0) or np.any(cn == 0.0):
        raise ZeroVector("token matrix contains a zero-norm row")
    sims = (q / qn[:, None]) @ (c / cn[:, None]).T
    return float(sims.max(axis=1).mean())


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.5
    b: float = 0.75

    def __post_init__(self):
        if self.k1 < 0:
            raise ValueError("k1 must be >= 0")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must be in [0, 1]")


@dataclass(frozen=True)
class Bm25Index:
    doc_ids: tuple[str, ...]
    term_freqs: tuple[Mapping[str, int], ...]
    doc_lens: tuple[int, ...]
    doc_freqs: Mapping[str, int]
    avgdl: float
    params: Bm25Params = field(default_factory=Bm25Params)

    @property
    def size(self) -> int:
        return len(self.doc_ids)


def bm25_build(corpus: Dataset, params: Bm25Params = Bm25Params()) -> Bm25Index:
    """Index tokenize(input_text) of every candidate."""
    doc_ids = []
    term_freqs = []
    doc_lens = []
    df = Counter()
    for rec in corpus.records:
        terms = tokenize(rec.input_text)
        doc_ids.append(rec.id)
        tf = Counter(terms)
        term_freqs.append(dict(tf))
        doc_lens.append(len(terms))
        for term in tf:
            df[term] += 1
    n = len(doc_ids)
    avgdl = (sum(doc_lens) / n) if n else 0.0
    return Bm25Index(
        doc_ids=tuple(doc_ids),
        term_freqs=tuple(term_freqs),
        doc_lens=tuple(doc_lens),
        doc_freqs=dict(df),
        avgdl=avgdl,
        params=params,
    )


def bm25_scores(index: Bm25Index, query: str) -> ScoreVector:
    """Okapi scores of every indexed doc against the query.

    idf(t) = ln((N - df + 0.5)/(df + 0.5) + 1); repeated query terms count
    once per distinct term. All-empty corpora score zero everywhere.
    """
    k1, b = index.params.k1, index.params.b
    n = index.size
    terms = sorted(set(tokenize(query)))
    scores = {}
    for i, doc_id in enumerate(index.doc_ids):
        if index.avgdl == 0.0:
            scores[doc_id] = 0.0
            continue
        tf_map = index.term_freqs[i]
        norm = k1 * (1.0 - b + b * index.doc_lens[i] / index.avgdl)
        score = 0.0
        for term in terms:
            tf = tf_map.get(term, 0)
            if tf == 0:
                continue
            df = index.doc_freqs.get(term, 0)
            idf = math.log((n - df + 0.5) / (df + 0.5) + 1.0)
            score += idf * (tf * (k1 + 1.0)) / (tf + norm)
        scores[doc_id] = score
    return ScoreVector(scores, method_tag="bm25")


def cosine_scores(
    query_id: str, query_emb: EmbeddingSet, pool_ids: Sequence[str], pool_emb: EmbeddingSet
) -> ScoreVector:
    """Cosine of one query sentence vector against each pool candidate."""
    if query_id not in query_emb.sentence:
        raise MissingScore(f"no sentence embedding for query {query_id!r}")
    q = query_emb.sentence[query_id]
    scores = {}
    for rec_id in pool_ids:
        if rec_id not in pool_emb.sentence:
            raise MissingScore(f"no sentence embedding for candidate {rec_id!r}")
        scores[rec_id] = cosine_score(q, pool_emb.sentence[rec_id])
    return ScoreVector(scores, method_tag="cosine")


def bsr_scores(
    query_id: str, query_emb: EmbeddingSet, pool_ids: Sequence[str], pool_emb: EmbeddingSet
) -> ScoreVector:
    """Token-recall score of one query against each pool candidate."""
    if query_id not in query_emb.token:
        raise MissingScore(f"no token embedding for query {query_id!r}")
    q = query_emb.token[query_id]
    scores = {}
    for rec_id in pool_ids:
        if rec_id not in pool_emb.token:
            raise MissingScore(f"no token embedding for candidate {rec_id!r}")
        scores[rec_id] = bsr_score(q, pool_emb.token[rec_id])
    return ScoreVector(scores, method_tag="bsr")
