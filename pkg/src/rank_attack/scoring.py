"""Scorer interface, re-ranking, and rank computation for document variants.

A scorer is pointwise: it maps (query, document text) pairs to finite
real scores and never sees other candidates. Because of that, the rank a
single modified document would take in a re-ranked list is fully
determined by the other candidates' cached original scores, so
``RankContext`` can answer rank-of-variant queries without re-scoring the
whole list per variant. The result is identical to a full re-rank.

Ranks are 1-based. Ties break by ascending doc_id everywhere.
"""

from __future__ import annotations

import bisect
import math
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import Query, RunEntry
from .errors import ScorerError


@dataclass(frozen=True)
class ScoredDoc:
    doc_id: str
    score: float


class Scorer:
    """Pointwise relevance scorer over (doc_id, text) pairs."""

    name: str = "scorer"

    def score_pairs(self, query: Query, docs: Sequence[tuple[str, str]]) -> list[float]:
        raise NotImplementedError


class Ranking:
    """Scored documents for one query, ordered best-first, ranks 1..k."""

    def __init__(self, query_id: str, docs: Sequence[ScoredDoc]):
        self.query_id = query_id
        self.docs = tuple(docs)
        self._rank = {d.doc_id: i + 1 for i, d in enumerate(self.docs)}
        if len(self._rank) != len(self.docs):
            raise ValueError(f"duplicate doc_id in ranking for query {query_id!r}")

    def rank_of(self, doc_id: str) -> int:
        try:
            return self._rank[doc_id]
        except KeyError:
            raise KeyError(f"doc {doc_id!r} not in ranking for query {self.query_id!r}") from None

    def __len__(self) -> int:
        return len(self.docs)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._rank

    def to_run_entries(self, tag: str) -> list[RunEntry]:
        return [
            RunEntry(self.query_id, d.doc_id, i + 1, d.score, tag)
            for i, d in enumerate(self.docs)
        ]


def _check_scores(query_id: str, docs: Sequence[tuple[str, str]], scores: Sequence[float]) -> None:
    if len(scores) != len(docs):
        raise ScorerError(
            f"scorer returned {len(scores)} scores for {len(docs)} docs (query {query_id!r})"
        )
    for (doc_id, _), s in zip(docs, scores):
        if not math.isfinite(s):
            raise ScorerError(f"non-finite score {s!r} for pair ({query_id!r}, {doc_id!r})")


def rerank(query: Query, candidates: Sequence[tuple[str, str]], scorer: Scorer) -> Ranking:
    """Score all candidates and order them by descending score, doc_id ascending."""
    if not candidates:
        raise ValueError(f"no candidates to rerank for query {query.query_id!r}")
    scores = scorer.score_pairs(query, candidates)
    _check_scores(query.query_id, candidates, scores)
    order = sorted(
        (ScoredDoc(doc_id, float(s)) for (doc_id, _), s in zip(candidates, scores)),
        key=lambda d: (-d.score, d.doc_id),
    )
    return Ranking(query.query_id, order)


class RankContext:
    """Per-query cache answering "what rank would this variant take?".

    Original candidate scores are computed once. A variant of candidate
    ``doc_id`` with new score s' lands at rank
    1 + #{others: score > s'} + #{others: score == s' and doc_id' < doc_id}.
    """

    def __init__(self, query: Query, candidates: Sequence[tuple[str, str]], scorer: Scorer):
        if not candidates:
            raise ValueError(f"no candidates for query {query.query_id!r}")
        self.query = query
        self.scorer = scorer
        self.candidates = list(candidates)
        scores = scorer.score_pairs(query, self.candidates)
        _check_scores(query.query_id, self.candidates, scores)
        self._score_by_doc = {
            doc_id: float(s) for (doc_id, _), s in zip(self.candidates, scores)
        }
        if len(self._score_by_doc) != len(self.candidates):
            raise ValueError(f"duplicate candidate doc_id for query {query.query_id!r}")
        order = sorted(self._score_by_doc.items(), key=lambda kv: (-kv[1], kv[0]))
        self._ranking = Ranking(query.query_id, [ScoredDoc(d, s) for d, s in order])
        # descending scores negated for searchsorted; ids grouped per score
        self._neg_scores = np.array([-s for _, s in order], dtype=np.float64)
        self._ids_by_score: dict[float, list[str]] = {}
        for d, s in order:
            self._ids_by_score.setdefault(s, []).append(d)
        for ids in self._ids_by_score.values():
            ids.sort()

    def ranking(self) -> Ranking:
        return self._ranking

    def original_rank(self, doc_id: str) -> int:
        return self._ranking.rank_of(doc_id)

    def original_score(self, doc_id: str) -> float:
        try:
            return self._score_by_doc[doc_id]
        except KeyError:
            raise KeyError(
                f"doc {doc_id!r} not a candidate for query {self.query.query_id!r}"
            ) from None

    def rank_of_score(self, doc_id: str, score: float) -> int:
        """Rank doc_id would take if its score were ``score`` (others unchanged)."""
        if not math.isfinite(score):
            raise ScorerError(
                f"non-finite score {score!r} for pair ({self.query.query_id!r}, {doc_id!r})"
            )
        own = self.original_score(doc_id)
        greater = int(np.searchsorted(self._neg_scores, -score, side="left"))
        if own > score:
            greater -= 1  # the doc's own original entry
        equal_ids = self._ids_by_score.get(score, ())
        equal_less = bisect.bisect_left(equal_ids, doc_id)
        return greater + equal_less + 1

    def rank_of_variant(self, doc_id: str, text: str) -> int:
        score = self.scorer.score_pairs(self.query, [(doc_id, text)])[0]
        return self.rank_of_score(doc_id, float(score))


class ConstantScorer(Scorer):
    """Same score for every pair; useful for protocol and tie-break tests."""

    name = "constant"

    def __init__(self, value: float = 0.5):
        self.value = value

    def score_pairs(self, query: Query, docs: Sequence[tuple[str, str]]) -> list[float]:
        return [self.value] * len(docs)


class TokenRewardScorer(Scorer):
    """Base score plus a fixed bonus per whole-word occurrence of one token.

    A deliberately gameable stand-in for a neural scorer: injecting the
    rewarded token raises the score linearly. Matching is case-insensitive
    on word boundaries.
    """

    name = "token-reward"

    def __init__(self, token: str = "true", bonus: float = 0.1,
                 base: dict[str, float] | float = 0.0):
        self.token = token
        self.bonus = bonus
        self.base = base
        self._pattern = re.compile(rf"(?<![0-9A-Za-z]){re.escape(token.lower())}(?![0-9A-Za-z])")

    def _base_for(self, doc_id: str) -> float:
        if isinstance(self.base, dict):
            return self.base.get(doc_id, 0.0)
        return self.base

    def score_pairs(self, query: Query, docs: Sequence[tuple[str, str]]) -> list[float]:
        return [
            self._base_for(doc_id) + self.bonus * len(self._pattern.findall(text.lower()))
            for doc_id, text in docs
        ]
