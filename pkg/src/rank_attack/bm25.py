"""Built-in lexical relevance model: BM25 over an in-process index.

Tokenization is Unicode lowercasing followed by splitting on
non-alphanumeric characters; configured stopwords are dropped everywhere
(index build, query analysis, and attacked-text scoring), so document
lengths count surviving tokens only.

Scoring uses idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)) and the
tf-saturation term tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl)).
The +1-inside-log idf keeps scores non-negative. Duplicate query terms
contribute once (set semantics).

Attacked document variants are scored against the *frozen* statistics of
the original index (df, N, avgdl stay fixed; tf and dl come from the
variant text). This models one adversarial document dropped into an
otherwise unchanged corpus and is what makes score monotonicity checkable:
adding tokens disjoint from the query can never raise a score.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .corpus import DocumentStore, Query
from .errors import ScorerError
from .kernels import BACKEND
from .scoring import Scorer

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str, stopwords: frozenset[str] = frozenset()) -> list[str]:
    tokens = _TOKEN_RE.findall(text.lower())
    if stopwords:
        return [t for t in tokens if t not in stopwords]
    return tokens


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75
    stopwords: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        if not self.k1 > 0:
            raise ValueError(f"k1 must be > 0, got {self.k1}")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError(f"b must be in [0, 1], got {self.b}")


class Bm25Index:
    """Frozen corpus statistics plus per-document term-id arrays.

    Immutable after construction; shareable across threads.
    """

    def __init__(self, store: DocumentStore, params: Bm25Params):
        self.params = params
        self.vocab: dict[str, int] = {}
        df_counts: list[int] = []
        self.doc_ids: list[str] = []
        self._doc_pos: dict[str, int] = {}
        self._doc_terms: list[np.ndarray] = []

        for doc in store:
            tokens = tokenize(doc.text, params.stopwords)
            ids = np.empty(len(tokens), dtype=np.int64)
            for i, t in enumerate(tokens):
                tid = self.vocab.get(t)
                if tid is None:
                    tid = len(self.vocab)
                    self.vocab[t] = tid
                    df_counts.append(0)
                ids[i] = tid
            for tid in set(ids.tolist()):
                df_counts[tid] += 1
            self._doc_pos[doc.doc_id] = len(self.doc_ids)
            self.doc_ids.append(doc.doc_id)
            self._doc_terms.append(ids)

        self.df = np.asarray(df_counts, dtype=np.int64)
        self.N = len(self.doc_ids)
        lengths = [len(a) for a in self._doc_terms]
        self.avgdl = float(np.mean(lengths)) if lengths else 0.0

    def term_df(self, term: str) -> int:
        tid = self.vocab.get(term)
        return int(self.df[tid]) if tid is not None else 0

    def doc_length(self, doc_id: str) -> int:
        return len(self.doc_term_ids(doc_id))

    def doc_term_ids(self, doc_id: str) -> np.ndarray:
        try:
            return self._doc_terms[self._doc_pos[doc_id]]
        except KeyError:
            raise KeyError(f"doc_id not in index: {doc_id!r}") from None

    def idf(self, df: int) -> float:
        return math.log(1.0 + (self.N - df + 0.5) / (df + 0.5))


def build_index(store: DocumentStore, params: Bm25Params | None = None) -> Bm25Index:
    return Bm25Index(store, params or Bm25Params())


class BM25Scorer(Scorer):
    """Scores arbitrary (doc_id, text) pairs against a frozen index.

    Query terms absent from the index vocabulary still score (df = 0);
    to let them match tokens in attacked texts, pass the experiment's
    queries up front so their terms join the extended term table. The
    table is frozen after construction, which keeps the scorer thread-safe
    and keeps pre-encoded texts valid. Queries with out-of-table terms
    still score correctly through a per-call fallback table.
    """

    name = "bm25"

    def __init__(self, index: Bm25Index, queries: Iterable[Query] = ()):
        self.index = index
        self._ext: dict[str, int] = {}
        next_id = len(index.vocab)
        for q in queries:
            for t in tokenize(q.text, index.params.stopwords):
                if t not in index.vocab and t not in self._ext:
                    self._ext[t] = next_id
                    next_id += 1
        self._idf_oov = index.idf(0) if index.N > 0 else 0.0
        # per-query-text memo of (q_ids, q_idf); entries are immutable and
        # rebuilding one concurrently is idempotent, so no lock is needed
        self._qt_cache: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def _lookup(self, term: str, extra: dict[str, int] | None) -> int:
        tid = self.index.vocab.get(term)
        if tid is not None:
            return tid
        tid = self._ext.get(term)
        if tid is not None:
            return tid
        if extra is not None:
            tid = extra.get(term)
            if tid is not None:
                return tid
        return -1

    def _query_table(self, query_text: str) -> tuple[np.ndarray, np.ndarray, dict[str, int] | None]:
        """Unique query term ids + idf values; OOV terms get per-call ids."""
        cached = self._qt_cache.get(query_text)
        if cached is not None:
            return cached[0], cached[1], None
        terms = sorted(set(tokenize(query_text, self.index.params.stopwords)))
        extra: dict[str, int] | None = None
        next_id = len(self.index.vocab) + len(self._ext)
        q_ids = np.empty(len(terms), dtype=np.int64)
        q_idf = np.empty(len(terms), dtype=np.float64)
        for i, t in enumerate(terms):
            tid = self._lookup(t, None)
            if tid < 0:
                if extra is None:
                    extra = {}
                tid = next_id
                extra[t] = tid
                next_id += 1
            q_ids[i] = tid
            q_idf[i] = self.index.idf(self.index.term_df(t))
        if extra is None:
            self._qt_cache[query_text] = (q_ids, q_idf)
        return q_ids, q_idf, extra

    def encode(self, text: str, extra: dict[str, int] | None = None) -> np.ndarray:
        """Map text to term ids over vocab + registered query terms; OOV -> -1."""
        tokens = tokenize(text, self.index.params.stopwords)
        ids = np.empty(len(tokens), dtype=np.int64)
        for i, t in enumerate(tokens):
            ids[i] = self._lookup(t, extra)
        return ids

    def score_encoded(self, query: Query, encoded: Sequence[np.ndarray]) -> np.ndarray:
        """Fast path over pre-encoded texts (see ``encode``)."""
        q_ids, q_idf, extra = self._query_table(query.text)
        if extra:
            raise ScorerError(
                f"query {query.query_id!r} has unregistered terms "
                f"{sorted(extra)}; pass queries to BM25Scorer up front"
            )
        return self._score_arrays(q_ids, q_idf, encoded)

    def _score_arrays(self, q_ids, q_idf, encoded: Sequence[np.ndarray]) -> np.ndarray:
        if self.index.N == 0:
            raise ScorerError("cannot score against an empty index")
        if not encoded:
            return np.zeros(0, dtype=np.float64)
        if len(encoded) == 1:
            flat = encoded[0]
            offsets = np.array([0, len(flat)], dtype=np.int64)
        else:
            offsets = np.zeros(len(encoded) + 1, dtype=np.int64)
            for i, a in enumerate(encoded):
                offsets[i + 1] = offsets[i] + len(a)
            flat = np.concatenate(encoded) if offsets[-1] else np.zeros(0, dtype=np.int64)
        return BACKEND.bm25_scores(
            flat, offsets, q_ids, q_idf,
            self.index.params.k1, self.index.params.b, self.index.avgdl,
        )

    def score_pairs(self, query: Query, docs: Sequence[tuple[str, str]]) -> list[float]:
        q_ids, q_idf, extra = self._query_table(query.text)
        encoded = [self.encode(text, extra) for _, text in docs]
        return self._score_arrays(q_ids, q_idf, encoded).tolist()


def bm25_score(query: Query | str, doc_id: str, index: Bm25Index) -> float:
    """Score one indexed document at its original text."""
    text = query.text if isinstance(query, Query) else query
    if index.N == 0:
        raise ScorerError("cannot score against an empty index")
    terms = index.doc_term_ids(doc_id)  # KeyError for unknown doc_id
    params = index.params
    dl = len(terms)
    score = 0.0
    for t in sorted(set(tokenize(text, params.stopwords))):
        tid = index.vocab.get(t)
        if tid is None:
            continue
        tf = float(np.count_nonzero(terms == tid))
        if tf == 0.0:
            continue
        norm = params.k1 * (1.0 - params.b + params.b * dl / index.avgdl)
        score += index.idf(int(index.df[tid])) * tf * (params.k1 + 1.0) / (tf + norm)
    return score
