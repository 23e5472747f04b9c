import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rank_attack.attacks import AttackSpec, AttackToken, build_grid, default_lexicon, inject
from rank_attack.bm25 import BM25Scorer, Bm25Params, bm25_score, build_index, tokenize
from rank_attack.corpus import Document, Query, parse_collection
from rank_attack.errors import ScorerError
from rank_attack.kernels import get_backend
from rank_attack.scoring import RankContext, rerank


def store_of(**docs):
    return parse_collection([f"{doc_id}\t{text}" for doc_id, text in docs.items()])


class TestTokenize:
    def test_lowercase_and_split_non_alnum(self):
        assert tokenize("Fleas live-a_long TIME!") == ["fleas", "live", "a", "long", "time"]

    def test_unicode(self):
        assert tokenize("Flöhe LEBEN") == ["flöhe", "leben"]

    def test_stopwords_dropped(self):
        assert tokenize("a b a c", frozenset(["a"])) == ["b", "c"]


class TestIndexStats:
    def test_hand_counted_stats(self):
        index = build_index(store_of(d1="a b", d2="a"))
        assert index.N == 2
        assert index.term_df("a") == 2
        assert index.term_df("b") == 1
        assert index.avgdl == 1.5

    def test_df_bounded_by_N(self):
        index = build_index(store_of(d1="x x x", d2="x y"))
        assert index.term_df("x") == 2 <= index.N

    def test_empty_corpus_scoring_is_error(self):
        index = build_index(store_of())
        assert index.N == 0
        scorer = BM25Scorer(index)
        with pytest.raises(ScorerError):
            scorer.score_pairs(Query("q", "x"), [("d", "x")])

    def test_stopword_list_drops_terms_and_shortens_docs(self):
        index = build_index(store_of(d1="a b", d2="a"), Bm25Params(stopwords=frozenset(["a"])))
        assert index.term_df("a") == 0
        assert index.doc_length("d1") == 1
        assert index.doc_length("d2") == 0


class TestBm25Score:
    def test_golden_hand_evaluated(self):
        # mpmath oracle: idf = ln 2, tf part = 2*2.2/(2 + 1.2*(0.25 + 0.75*1.5))
        index = build_index(store_of(d1="x x y", d2="y"))
        assert bm25_score(Query("q", "x"), "d1", index) == pytest.approx(
            0.8355746834147286, abs=1e-12
        )

    def test_absent_terms_contribute_zero(self):
        index = build_index(store_of(d1="x x y", d2="y"))
        only_x = bm25_score(Query("q", "x"), "d1", index)
        with_absent = bm25_score(Query("q", "x zzz"), "d1", index)
        assert with_absent == pytest.approx(only_x, abs=1e-15)
        assert bm25_score(Query("q", "zzz qqq"), "d1", index) == 0.0

    def test_unknown_doc_id_is_error(self):
        index = build_index(store_of(d1="x"))
        with pytest.raises(KeyError):
            bm25_score(Query("q", "x"), "nope", index)

    def test_duplicate_query_terms_count_once(self):
        index = build_index(store_of(d1="x x y", d2="y"))
        assert bm25_score(Query("q", "x x"), "d1", index) == pytest.approx(
            bm25_score(Query("q", "x"), "d1", index)
        )

    def test_scorer_agrees_with_direct_scoring(self):
        store = store_of(d1="x x y", d2="y", d3="x q r s")
        index = build_index(store)
        scorer = BM25Scorer(index)
        query = Query("q", "x y")
        for doc in store:
            direct = bm25_score(query, doc.doc_id, index)
            via_pairs = scorer.score_pairs(query, [(doc.doc_id, doc.text)])[0]
            assert via_pairs == pytest.approx(direct, abs=1e-12)

    def test_appending_non_query_token_strictly_decreases(self):
        index = build_index(store_of(d1="x x y", d2="y"))
        scorer = BM25Scorer(index)
        query = Query("q", "x")
        base = scorer.score_pairs(query, [("d1", "x x y")])[0]
        longer = scorer.score_pairs(query, [("d1", "x x y zzz")])[0]
        assert longer < base

    def test_oov_query_terms_match_in_attacked_text(self):
        # "zebra" is absent from the corpus: df=0 idf is still positive and
        # a variant text containing it must score above one that does not
        index = build_index(store_of(d1="x y", d2="y z"))
        scorer = BM25Scorer(index)
        query = Query("q", "zebra")
        without, with_it = scorer.score_pairs(query, [("d1", "x y"), ("d1", "x y zebra")])
        assert without == 0.0
        assert with_it > 0.0


class TestFrozenStatsImmunity:
    @settings(max_examples=100, deadline=None)
    @given(
        doc_words=st.lists(st.sampled_from("x y q w e r".split()), min_size=1, max_size=30),
        token=st.sampled_from([t.surface for t in default_lexicon()]),
        position=st.sampled_from(["start", "end", "random"]),
        n=st.integers(min_value=1, max_value=5),
        seed=st.integers(min_value=0, max_value=2**40),
    )
    def test_non_query_injection_never_raises_score(self, doc_words, token, position, n, seed):
        text = " ".join(doc_words)
        store = store_of(d1=text, d2="x y", d3="q w")
        scorer = BM25Scorer(build_index(store))
        query = Query("q", "x q")  # disjoint from every lexicon token
        attacked = inject(
            Document("d1", text),
            AttackSpec(AttackToken(token, "prompt"), position, n),
            seed=seed,
        )
        before, after = scorer.score_pairs(query, [("d1", text), ("d1", attacked.text)])
        assert after <= before + 1e-15

    def test_stopword_injection_leaves_score_exactly_unchanged(self):
        params = Bm25Params(stopwords=frozenset(["information"]))
        store = store_of(d1="x y z", d2="x w")
        scorer = BM25Scorer(build_index(store, params))
        query = Query("q", "x")
        attacked = inject(
            Document("d1", "x y z"),
            AttackSpec(AttackToken("information", "control"), "start", 5),
        )
        before, after = scorer.score_pairs(query, [("d1", "x y z"), ("d1", attacked.text)])
        assert after == before


class TestRerank:
    class MapScorer:
        name = "map"

        def __init__(self, scores):
            self.scores = scores

        def score_pairs(self, query, docs):
            return [self.scores[doc_id] for doc_id, _ in docs]

    def test_orders_by_descending_score(self):
        scorer = self.MapScorer({"d1": 0.2, "d2": 0.9})
        ranking = rerank(Query("q", ""), [("d1", ""), ("d2", "")], scorer)
        assert [d.doc_id for d in ranking.docs] == ["d2", "d1"]
        assert ranking.rank_of("d2") == 1

    def test_ties_break_by_ascending_doc_id(self):
        scorer = self.MapScorer({"d1": 0.5, "d2": 0.5})
        ranking = rerank(Query("q", ""), [("d2", ""), ("d1", "")], scorer)
        assert [d.doc_id for d in ranking.docs] == ["d1", "d2"]

    @given(st.lists(st.tuples(st.text("ab", min_size=1, max_size=4),
                              st.floats(-100, 100, allow_nan=False)),
                    min_size=1, max_size=20, unique_by=lambda t: t[0]))
    def test_output_is_permutation(self, items):
        scorer = self.MapScorer(dict(items))
        ranking = rerank(Query("q", ""), [(d, "") for d, _ in items], scorer)
        assert sorted(d.doc_id for d in ranking.docs) == sorted(d for d, _ in items)
        assert [ranking.rank_of(d.doc_id) for d in ranking.docs] == list(
            range(1, len(items) + 1)
        )

    @given(st.lists(st.tuples(st.text("ab", min_size=1, max_size=4),
                              st.floats(-100, 100, allow_nan=False)),
                    min_size=1, max_size=20, unique_by=lambda t: t[0]),
           st.floats(min_value=0.001, max_value=1000))
    def test_positive_scaling_preserves_ranks(self, items, factor):
        base = self.MapScorer(dict(items))
        scaled = self.MapScorer({d: s * factor for d, s in items})
        candidates = [(d, "") for d, _ in items]
        r1 = rerank(Query("q", ""), candidates, base)
        r2 = rerank(Query("q", ""), candidates, scaled)
        assert [d.doc_id for d in r1.docs] == [d.doc_id for d in r2.docs]

    def test_nan_score_rejected(self):
        scorer = self.MapScorer({"d1": float("nan")})
        with pytest.raises(ScorerError, match="d1"):
            rerank(Query("q", ""), [("d1", "")], scorer)

    def test_empty_candidates_rejected(self):
        with pytest.raises(ValueError):
            rerank(Query("q", ""), [], self.MapScorer({}))


class TestRankContext:
    def _fixture(self):
        store = store_of(d1="x x y", d2="y", d3="x q", d4="w w w")
        scorer = BM25Scorer(build_index(store))
        query = Query("q", "x y")
        candidates = [(d.doc_id, d.text) for d in store]
        return store, scorer, query, candidates

    def test_variant_rank_equals_full_rerank(self):
        store, scorer, query, candidates = self._fixture()
        ctx = RankContext(query, candidates, scorer)
        for doc_id, _ in candidates:
            for variant in ["x x x y", "zzz", "", "y y y y y y", "x"]:
                expected = rerank(
                    query,
                    [(d, variant if d == doc_id else t) for d, t in candidates],
                    scorer,
                ).rank_of(doc_id)
                assert ctx.rank_of_variant(doc_id, variant) == expected

    def test_identity_variant_keeps_original_rank(self):
        store, scorer, query, candidates = self._fixture()
        ctx = RankContext(query, candidates, scorer)
        for doc_id, text in candidates:
            assert ctx.rank_of_variant(doc_id, text) == ctx.original_rank(doc_id)

    def test_ranking_matches_rerank(self):
        store, scorer, query, candidates = self._fixture()
        ctx = RankContext(query, candidates, scorer)
        direct = rerank(query, candidates, scorer)
        assert [d.doc_id for d in ctx.ranking().docs] == [d.doc_id for d in direct.docs]


class TestKernelBackends:
    def test_numba_and_numpy_agree(self):
        numba_backend = get_backend("numba")
        numpy_backend = get_backend("numpy")
        rng = np.random.default_rng(5)
        doc_terms = rng.integers(-1, 30, size=500).astype(np.int64)
        offsets = np.array([0, 40, 40, 200, 330, 500], dtype=np.int64)
        q_ids = np.array([2, 7, 29], dtype=np.int64)
        q_idf = np.array([0.3, 1.1, 2.2])
        args = (doc_terms, offsets, q_ids, q_idf, 1.2, 0.75, 93.3)
        np.testing.assert_allclose(
            numba_backend.bm25_scores(*args), numpy_backend.bm25_scores(*args), rtol=1e-12
        )
        before = rng.integers(1, 1000, size=400).astype(np.int64)
        after = rng.integers(1, 1000, size=400).astype(np.int64)
        s1, c1 = numba_backend.bucket_mrc_sums(before, after, 100, 10)
        s2, c2 = numpy_backend.bucket_mrc_sums(before, after, 100, 10)
        np.testing.assert_allclose(s1, s2)
        np.testing.assert_array_equal(c1, c2)

    def test_env_flag_selects_backend(self):
        assert get_backend("numpy").name == "numpy"
        assert get_backend("numba").name == "numba"
        with pytest.raises(ValueError):
            get_backend("fortran")

    def test_empty_query_terms(self):
        backend = get_backend("numpy")
        scores = backend.bm25_scores(
            np.array([1, 2], dtype=np.int64), np.array([0, 2], dtype=np.int64),
            np.zeros(0, dtype=np.int64), np.zeros(0), 1.2, 0.75, 2.0,
        )
        assert scores.tolist() == [0.0]
