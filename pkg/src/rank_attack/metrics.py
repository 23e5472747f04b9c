"""Attack-efficacy and retrieval-effectiveness metrics.

Rank conventions: ranks are 1-based; a rank *improvement* means the rank
number got smaller. Success rate counts strictly improved pairs; mean
rank change averages (rank_before - rank_after), so positive values mean
the attack promoted documents.

nDCG uses gain 2^grade - 1 with discount log2(rank + 1), normalized by
the ideal DCG over all judged documents of the query; unjudged documents
gain 0. A query with no positive-gain judgments scores 0 by convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import stdtr

from .corpus import QrelsTable
from .kernels import BACKEND
from .scoring import Ranking


@dataclass(frozen=True)
class PairDelta:
    query_id: str
    doc_id: str
    rank_before: int
    rank_after: int

    def __post_init__(self):
        if self.rank_before < 1 or self.rank_after < 1:
            raise ValueError(
                f"ranks must be >= 1, got before={self.rank_before} after={self.rank_after}"
            )


def success_rate(deltas: Sequence[PairDelta]) -> float:
    """Fraction of pairs whose rank strictly improved; ties count as failure."""
    if not deltas:
        raise ValueError("success_rate of an empty pair set is undefined")
    improved = sum(1 for d in deltas if d.rank_after < d.rank_before)
    return improved / len(deltas)


def mean_rank_change(deltas: Sequence[PairDelta]) -> float:
    """Mean of (rank_before - rank_after); positive = promotion."""
    if not deltas:
        raise ValueError("mean_rank_change of an empty pair set is undefined")
    return sum(d.rank_before - d.rank_after for d in deltas) / len(deltas)


def bucketed_mrc(deltas: Sequence[PairDelta], bucket_size: int = 100) -> dict[int, float]:
    """MRC grouped by before-rank bucket floor((rank_before - 1) / bucket_size).

    Empty buckets are absent from the result.
    """
    if bucket_size < 1:
        raise ValueError(f"bucket_size must be >= 1, got {bucket_size}")
    if not deltas:
        return {}
    before = np.array([d.rank_before for d in deltas], dtype=np.int64)
    after = np.array([d.rank_after for d in deltas], dtype=np.int64)
    n_buckets = int((before.max() - 1) // bucket_size) + 1
    sums, counts = BACKEND.bucket_mrc_sums(before, after, bucket_size, n_buckets)
    return {
        int(i): float(sums[i] / counts[i])
        for i in range(n_buckets)
        if counts[i] > 0
    }


def _gain(grade: int) -> float:
    return float(2 ** grade - 1)


def ndcg_at_k(ranking: Ranking, qrels: QrelsTable, k: int = 10) -> float:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    judged = qrels.judged(ranking.query_id)
    ideal_gains = sorted((_gain(g) for g in judged.values() if g > 0), reverse=True)
    idcg = sum(g / math.log2(i + 2) for i, g in enumerate(ideal_gains[:k]))
    if idcg == 0.0:
        return 0.0
    dcg = 0.0
    for i, doc in enumerate(ranking.docs[:k]):
        grade = judged.get(doc.doc_id)
        if grade:
            dcg += _gain(grade) / math.log2(i + 2)
    return dcg / idcg


def precision_at_k(
    ranking: Ranking, qrels: QrelsTable, k: int = 10, rel_threshold: int = 1
) -> float:
    """|{top-k docs with grade >= rel_threshold}| / k; unjudged count as non-relevant.

    k stays in the denominator even when fewer than k documents were returned.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    judged = qrels.judged(ranking.query_id)
    hits = sum(
        1
        for doc in ranking.docs[:k]
        if judged.get(doc.doc_id) is not None and judged[doc.doc_id] >= rel_threshold
    )
    return hits / k


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    significant: bool
    zero_variance: bool
    corrections: int
    alpha: float = 0.05


def paired_ttest(
    before: Sequence[float], after: Sequence[float], corrections: int = 1
) -> TTestResult:
    """Two-sided paired Student's t-test with Bonferroni correction.

    Significance requires p < alpha / corrections. Zero variance of the
    differences leaves t undefined; such results are flagged and reported
    non-significant.
    """
    if len(before) != len(after):
        raise ValueError(f"length mismatch: {len(before)} vs {len(after)}")
    n = len(before)
    if n < 2:
        raise ValueError(f"paired t-test needs >= 2 pairs, got {n}")
    if corrections < 1:
        raise ValueError(f"corrections must be >= 1, got {corrections}")
    diffs = np.asarray(after, dtype=np.float64) - np.asarray(before, dtype=np.float64)
    sd = float(diffs.std(ddof=1))
    if sd == 0.0:
        return TTestResult(math.nan, math.nan, False, True, corrections)
    t = float(diffs.mean() / (sd / math.sqrt(n)))
    p = 2.0 * float(stdtr(n - 1, -abs(t)))
    return TTestResult(t, p, p < 0.05 / corrections, False, corrections)


@dataclass
class MetricReport:
    """Aggregate metrics for one attack configuration or bound scenario.

    Fields not applicable to a given report stay None. ``flags`` carries
    irregularities (zero-variance tests, queries without judgments, docs
    assigned fallback ranks).
    """

    sr: float | None = None
    mrc: float | None = None
    bucket_mrc: dict[int, float] = field(default_factory=dict)
    ndcg_at_10: float | None = None
    p_at_10: float | None = None
    p_value: float | None = None
    significant: bool = False
    corrections: int = 1
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.sr is not None and not 0.0 <= self.sr <= 1.0:
            raise ValueError(f"sr out of range: {self.sr}")
        for name in ("ndcg_at_10", "p_at_10"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} out of range: {v}")
        if self.significant:
            if self.p_value is None or not self.p_value * self.corrections <= 0.05:
                raise ValueError("significant flag inconsistent with corrected p-value")


def deltas_from_rankings(
    before: Mapping[str, Ranking], after: Mapping[str, Ranking]
) -> list[PairDelta]:
    """Pair up documents of matching queries from two ranking sets.

    Documents missing from the after-ranking get rank len(after) + 1 (can
    only happen with externally supplied runs).
    """
    deltas: list[PairDelta] = []
    for qid, rb in before.items():
        ra = after.get(qid)
        if ra is None:
            continue
        fallback = len(ra) + 1
        for i, doc in enumerate(rb.docs):
            rank_after = ra.rank_of(doc.doc_id) if doc.doc_id in ra else fallback
            deltas.append(PairDelta(qid, doc.doc_id, i + 1, rank_after))
    return deltas
