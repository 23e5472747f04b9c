import http.server
import json
import sys
import threading
from pathlib import Path

import pytest

from rank_attack.corpus import Query
from rank_attack.errors import ScorerError
from rank_attack.wire import (
    ExternalScorer,
    HttpScorerTransport,
    SubprocessScorerTransport,
    conformance_check,
    synthetic_requests,
)

STUB = str(Path(__file__).parent / "helpers" / "wire_stub.py")


def stub_transport(mode="ok", timeout=20.0):
    return SubprocessScorerTransport([sys.executable, STUB, mode], timeout=timeout)


def stub_score(qid, docid, text):
    import hashlib

    digest = hashlib.sha256(f"{qid}|{docid}|{text}".encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


class TestSubprocessTransport:
    def test_scores_join_out_of_order_responses(self):
        transport = stub_transport()
        try:
            reqs = [
                {"qid": "q1", "query": "x", "docid": f"d{i}", "text": f"t{i}"}
                for i in range(7)
            ]
            scores = transport.score_batch(reqs)
            assert set(scores) == {("q1", f"d{i}") for i in range(7)}
            for r in reqs:
                assert scores[(r["qid"], r["docid"])] == pytest.approx(
                    stub_score(r["qid"], r["docid"], r["text"])
                )
        finally:
            transport.close()

    def test_session_survives_multiple_batches(self):
        transport = stub_transport()
        try:
            for batch_no in range(3):
                reqs = [
                    {"qid": f"q{batch_no}", "query": "x", "docid": f"d{i}", "text": "t"}
                    for i in range(4)
                ]
                assert len(transport.score_batch(reqs)) == 4
        finally:
            transport.close()

    def test_nan_score_is_error_naming_pair(self):
        transport = stub_transport("nan")
        try:
            with pytest.raises(ScorerError, match="d0"):
                transport.score_batch(
                    [{"qid": "q1", "query": "x", "docid": "d0", "text": "t"}] * 1
                )
        finally:
            transport.close()

    def test_unknown_key_is_error(self):
        transport = stub_transport("badkey")
        try:
            with pytest.raises(ScorerError, match="unknown or duplicate"):
                transport.score_batch(
                    [{"qid": "q1", "query": "x", "docid": "d0", "text": "t"}]
                )
        finally:
            transport.close()

    def test_bad_handshake_rejected(self):
        transport = stub_transport("badproto")
        try:
            with pytest.raises(ScorerError, match="handshake"):
                transport.score_batch(
                    [{"qid": "q1", "query": "x", "docid": "d0", "text": "t"}]
                )
        finally:
            transport.close()

    def test_error_line_surfaces(self):
        transport = stub_transport("error")
        try:
            with pytest.raises(ScorerError, match="boom"):
                transport.score_batch(
                    [{"qid": "q1", "query": "x", "docid": "d7", "text": "t"}]
                )
        finally:
            transport.close()

    def test_dropped_response_times_out(self):
        transport = stub_transport("drop", timeout=1.5)
        try:
            with pytest.raises(ScorerError, match="timed out"):
                transport.score_batch(
                    [
                        {"qid": "q1", "query": "x", "docid": f"d{i}", "text": "t"}
                        for i in range(3)
                    ]
                )
        finally:
            transport.close()

    def test_duplicate_pairs_in_batch_rejected(self):
        transport = stub_transport()
        try:
            with pytest.raises(ScorerError, match="duplicate"):
                transport.score_batch(
                    [{"qid": "q1", "query": "x", "docid": "d0", "text": "t"}] * 2
                )
        finally:
            transport.close()


class TestExternalScorer:
    def test_order_preserving_and_constant_stub(self):
        class HalfTransport:
            def score_batch(self, requests):
                return {(r["qid"], r["docid"]): 0.5 for r in requests}

            def close(self):
                pass

        scorer = ExternalScorer(HalfTransport())
        docs = [(f"d{i}", f"text {i}") for i in range(5)]
        assert scorer.score_pairs(Query("q1", "x"), docs) == [0.5] * 5

    def test_empty_batch(self):
        transport = stub_transport()
        scorer = ExternalScorer(transport)
        try:
            assert scorer.score_pairs(Query("q1", "x"), []) == []
        finally:
            scorer.close()

    def test_sub_batching_yields_identical_scores(self):
        docs = [(f"d{i}", f"text {i}") for i in range(20)]
        transport = stub_transport()
        try:
            whole = ExternalScorer(transport).score_pairs(Query("q1", "x"), docs)
            split = ExternalScorer(transport, batch_size=3).score_pairs(Query("q1", "x"), docs)
            assert whole == split
        finally:
            transport.close()

    def test_stuffed_document_outscores_original_on_injectable_scorer(self):
        # the flea example: an endpoint that folds prompt-token counts into
        # its relevance estimate scores the stuffed variant higher
        original = "Fleas live a long time. Buy flea remedies here."
        stuffed = "true true true " + original
        transport = stub_transport("reward")
        scorer = ExternalScorer(transport)
        try:
            query = Query("q1", "How long do fleas live?")
            s_orig, s_stuffed = scorer.score_pairs(
                query, [("d", original), ("d2", stuffed)]
            )
            assert s_stuffed > s_orig
            assert 0.0 <= s_orig <= 1.0 and 0.0 <= s_stuffed <= 1.0
        finally:
            transport.close()


class _NdjsonHandler(http.server.BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers["Content-Length"])
        lines = self.rfile.read(length).decode("utf-8").splitlines()
        out = [json.dumps({"proto": "rank-attack/1"})]
        for line in reversed(lines):  # out of order on purpose
            req = json.loads(line)
            out.append(
                json.dumps(
                    {
                        "qid": req["qid"],
                        "docid": req["docid"],
                        "score": stub_score(req["qid"], req["docid"], req["text"]),
                    }
                )
            )
        body = ("\n".join(out) + "\n").encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture()
def http_scorer_url():
    server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), _NdjsonHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}/score"
    server.shutdown()


class TestHttpTransport:
    def test_batch_over_http(self, http_scorer_url):
        transport = HttpScorerTransport(http_scorer_url, timeout=10.0)
        reqs = [{"qid": "q1", "query": "x", "docid": f"d{i}", "text": "t"} for i in range(5)]
        scores = transport.score_batch(reqs)
        assert set(scores) == {("q1", f"d{i}") for i in range(5)}

    def test_unreachable_endpoint(self):
        transport = HttpScorerTransport("http://127.0.0.1:9/score", timeout=0.5)
        with pytest.raises(ScorerError, match="unreachable"):
            transport.score_batch([{"qid": "q", "query": "", "docid": "d", "text": ""}])


class TestConformance:
    def test_stub_passes(self):
        transport = stub_transport()
        try:
            report = conformance_check(transport, n_requests=200, batch_sizes=(16, 5))
        finally:
            transport.close()
        assert report.passed
        assert report.joined
        assert report.max_split_delta == 0.0

    def test_nan_stub_fails(self):
        transport = stub_transport("nan")
        try:
            report = conformance_check(transport, n_requests=10, batch_sizes=(4, 2))
        finally:
            transport.close()
        assert not report.passed

    def test_synthetic_requests_unique_keys(self):
        reqs = synthetic_requests(500, seed=3)
        assert len({(r["qid"], r["docid"]) for r in reqs}) == 500
