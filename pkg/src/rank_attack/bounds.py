"""Search-provider simulation: best/worst-case effectiveness bounds.

The lower bound lets only judged non-relevant documents attack; the upper
bound lets only judged relevant documents attack. Unjudged documents are
never attacked. Each attacking document picks, from the identity attack
plus the configured specs, the variant that minimizes its own re-ranked
position; the identity fallback means an attack is never forced to hurt
its document, which is what makes lower <= original <= upper hold on
fixtures whose gain structure matches the relevance threshold.

Scorers are pointwise, so one document's variant rank is computed against
the other candidates' cached original scores; the result equals a full
re-rank of the modified list.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .attacks import AttackSpec, IdentitySpec, apply_spec
from .corpus import Document, DocumentStore, Query, QrelsTable, RunEntry, group_run_by_query
from .metrics import MetricReport, TTestResult, ndcg_at_k, paired_ttest, precision_at_k
from .scoring import RankContext, Ranking, ScoredDoc

SCENARIOS = ("lower", "original", "upper")


@dataclass(frozen=True)
class BoundScenario:
    kind: str
    rel_threshold: int = 2

    def __post_init__(self):
        if self.kind not in SCENARIOS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")

    def attacks_doc(self, grade: int | None) -> bool:
        """Whether a document with this judgment attacks under the scenario."""
        if self.kind == "original" or grade is None:
            return False
        if self.kind == "upper":
            return grade >= self.rel_threshold
        return grade < self.rel_threshold


@dataclass(frozen=True)
class BestAttack:
    doc_id: str
    spec_id: str
    text: str
    score: float
    rank: int


def best_attack_per_pair(
    doc: Document,
    specs: Sequence[AttackSpec],
    context: RankContext,
    seed: int | None = None,
) -> BestAttack:
    """Pick the variant with the minimal re-ranked position for this pair.

    The identity variant is always a candidate and wins ties; among specs,
    ties break by spec_id order.
    """
    best = BestAttack(
        doc.doc_id,
        IdentitySpec().spec_id,
        doc.text,
        context.original_score(doc.doc_id),
        context.original_rank(doc.doc_id),
    )
    for spec in sorted(specs, key=lambda s: s.spec_id):
        attacked = apply_spec(doc, spec, seed)
        score = float(context.scorer.score_pairs(context.query, [(doc.doc_id, attacked.text)])[0])
        rank = context.rank_of_score(doc.doc_id, score)
        if rank < best.rank:
            best = BestAttack(doc.doc_id, spec.spec_id, attacked.text, score, rank)
    return best


@dataclass
class BoundResult:
    scenario: BoundScenario
    rankings: dict[str, Ranking]
    per_query_ndcg: dict[str, float]
    per_query_p10: dict[str, float]
    attacks: dict[str, dict[str, str]] = field(default_factory=dict)  # qid -> doc_id -> spec_id
    flags: list[str] = field(default_factory=list)

    def mean_ndcg(self) -> float:
        return sum(self.per_query_ndcg.values()) / len(self.per_query_ndcg)

    def mean_p10(self) -> float:
        return sum(self.per_query_p10.values()) / len(self.per_query_p10)


def bound_run(
    run: Sequence[RunEntry],
    store: DocumentStore,
    topics: Mapping[str, Query],
    qrels: QrelsTable,
    scenario: BoundScenario,
    specs: Sequence[AttackSpec],
    scorer,
    seed: int | None = None,
    k: int = 10,
    contexts: Mapping[str, RankContext] | None = None,
) -> BoundResult:
    """Re-rank every query with scenario-matching documents replaced by
    their best attack variants, and measure nDCG@k / P@k."""
    grouped = group_run_by_query(run)
    result = BoundResult(scenario, {}, {}, {})
    for qid in sorted(grouped):
        query = topics[qid]
        candidates = [(e.doc_id, store.get(e.doc_id).text) for e in grouped[qid]]
        ctx = contexts[qid] if contexts is not None else RankContext(query, candidates, scorer)
        judged = qrels.judged(qid)
        if not judged:
            result.flags.append(f"query {qid}: no judgments; nothing attacked")
        replaced: dict[str, ScoredDoc] = {}
        chosen: dict[str, str] = {}
        for doc_id, text in candidates:
            if scenario.attacks_doc(judged.get(doc_id)):
                best = best_attack_per_pair(Document(doc_id, text), specs, ctx, seed)
                replaced[doc_id] = ScoredDoc(doc_id, best.score)
                chosen[doc_id] = best.spec_id
        merged = [
            replaced.get(doc_id, ScoredDoc(doc_id, ctx.original_score(doc_id)))
            for doc_id, _ in candidates
        ]
        ranking = Ranking(qid, sorted(merged, key=lambda d: (-d.score, d.doc_id)))
        result.rankings[qid] = ranking
        result.per_query_ndcg[qid] = ndcg_at_k(ranking, qrels, k)
        result.per_query_p10[qid] = precision_at_k(
            ranking, qrels, k, rel_threshold=scenario.rel_threshold
        )
        if chosen:
            result.attacks[qid] = chosen
    return result


@dataclass
class BoundsRow:
    scorer_name: str
    results: dict[str, BoundResult]  # keyed by scenario kind
    ndcg_tests: dict[str, TTestResult]
    p10_tests: dict[str, TTestResult]
    corrections: int

    def report(self, kind: str) -> MetricReport:
        res = self.results[kind]
        test = self.ndcg_tests.get(kind)
        return MetricReport(
            ndcg_at_10=res.mean_ndcg(),
            p_at_10=res.mean_p10(),
            p_value=None if test is None or test.zero_variance else test.p,
            significant=bool(test and test.significant),
            corrections=self.corrections,
            flags=list(res.flags),
        )


def compute_bounds(
    run: Sequence[RunEntry],
    store: DocumentStore,
    topics: Mapping[str, Query],
    qrels: QrelsTable,
    specs: Sequence[AttackSpec],
    scorer,
    seed: int | None = None,
    rel_threshold: int = 2,
    k: int = 10,
) -> BoundsRow:
    """Original, lower, and upper scenarios with significance vs original.

    The Bonferroni factor counts the significance tests in this table:
    2 scenarios x 2 metrics = 4.
    """
    grouped = group_run_by_query(run)
    contexts = {
        qid: RankContext(topics[qid], [(e.doc_id, store.get(e.doc_id).text) for e in entries], scorer)
        for qid, entries in grouped.items()
    }
    corrections = 4
    results: dict[str, BoundResult] = {}
    for kind in ("original", "lower", "upper"):
        scenario = BoundScenario(kind, rel_threshold)
        results[kind] = bound_run(
            run, store, topics, qrels, scenario, specs, scorer, seed, k, contexts
        )
    qids = sorted(results["original"].per_query_ndcg)
    ndcg_tests: dict[str, TTestResult] = {}
    p10_tests: dict[str, TTestResult] = {}
    for kind in ("lower", "upper"):
        before_n = [results["original"].per_query_ndcg[q] for q in qids]
        after_n = [results[kind].per_query_ndcg[q] for q in qids]
        before_p = [results["original"].per_query_p10[q] for q in qids]
        after_p = [results[kind].per_query_p10[q] for q in qids]
        ndcg_tests[kind] = paired_ttest(before_n, after_n, corrections)
        p10_tests[kind] = paired_ttest(before_p, after_p, corrections)
    return BoundsRow(getattr(scorer, "name", "scorer"), results, ndcg_tests, p10_tests, corrections)
