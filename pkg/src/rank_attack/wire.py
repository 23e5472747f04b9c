"""Wire client for external relevance scorers, plus a conformance harness.

Protocol (newline-delimited JSON): the server opens each session with a
handshake line ``{"proto": "rank-attack/1"}``, then answers each request
``{"qid", "query", "docid", "text"}`` with ``{"qid", "docid", "score"}``.
Responses may arrive out of order within a batch; (qid, docid) is the
join key. Lines carrying an ``"error"`` field abort the batch.

Two transports speak the protocol: a long-lived child process over
stdin/stdout, and HTTP POST where each request body is an NDJSON batch
and the response body is the handshake line followed by the responses.
"""

from __future__ import annotations

import json
import queue
import random
import subprocess
import threading
import time
import urllib.request
from dataclasses import dataclass, field
from typing import Callable, Sequence

from . import WIRE_PROTO
from .corpus import Query
from .errors import ScorerError
from .scoring import Scorer

ScoreRequest = dict  # {"qid", "query", "docid", "text"}


def _parse_response_line(line: str, pending: set[tuple[str, str]]) -> tuple[tuple[str, str], float]:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ScorerError(f"unparseable scorer response line: {line!r}") from e
    if "error" in obj:
        key = (obj.get("qid", "?"), obj.get("docid", "?"))
        raise ScorerError(f"scorer error for pair {key}: {obj['error']}")
    try:
        key = (obj["qid"], obj["docid"])
        score = obj["score"]
    except KeyError as e:
        raise ScorerError(f"scorer response missing field {e} in line {line!r}") from e
    if not isinstance(score, (int, float)) or isinstance(score, bool) or score != score \
            or score in (float("inf"), float("-inf")):
        raise ScorerError(f"non-finite or non-numeric score for pair {key}: {score!r}")
    if key not in pending:
        raise ScorerError(f"scorer response for unknown or duplicate pair {key}")
    pending.discard(key)
    return key, float(score)


class SubprocessScorerTransport:
    """One scorer child process; the session lives until close()."""

    def __init__(self, argv: Sequence[str], timeout: float = 60.0):
        if timeout <= 0:
            raise ValueError("timeout must be > 0")
        self.argv = list(argv)
        self.timeout = timeout
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue[str | None] = queue.Queue()

    def _readline(self, deadline: float) -> str:
        # a reader thread feeds the queue; select() on the buffered stream
        # would miss lines already drained into the Python-level buffer
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise ScorerError(f"scorer timed out after {self.timeout}s: {self.argv}")
        try:
            line = self._lines.get(timeout=remaining)
        except queue.Empty:
            raise ScorerError(f"scorer timed out after {self.timeout}s: {self.argv}") from None
        if line is None:
            raise ScorerError(f"scorer process closed its stdout early: {self.argv}")
        return line

    def _ensure_started(self) -> None:
        if self._proc is not None:
            return
        try:
            self._proc = subprocess.Popen(
                self.argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as e:
            raise ScorerError(f"failed to start scorer {self.argv}: {e}") from e

        def _pump(stdout):
            for line in stdout:
                self._lines.put(line)
            self._lines.put(None)

        threading.Thread(target=_pump, args=(self._proc.stdout,), daemon=True).start()
        deadline = time.monotonic() + self.timeout
        handshake = self._readline(deadline)
        try:
            proto = json.loads(handshake).get("proto")
        except json.JSONDecodeError:
            proto = None
        if proto != WIRE_PROTO:
            raise ScorerError(
                f"bad handshake from scorer {self.argv}: expected proto {WIRE_PROTO!r}, "
                f"got line {handshake!r}"
            )

    def score_batch(self, requests: Sequence[ScoreRequest]) -> dict[tuple[str, str], float]:
        if not requests:
            return {}
        self._ensure_started()
        pending = {(r["qid"], r["docid"]) for r in requests}
        if len(pending) != len(requests):
            raise ScorerError("duplicate (qid, docid) pairs in one batch")
        payload = "".join(json.dumps(r) + "\n" for r in requests)
        write_error: list[BaseException] = []

        def _write():
            try:
                self._proc.stdin.write(payload)
                self._proc.stdin.flush()
            except BaseException as e:  # surfaced after reads fail
                write_error.append(e)

        writer = threading.Thread(target=_write, daemon=True)
        writer.start()
        scores: dict[tuple[str, str], float] = {}
        deadline = time.monotonic() + self.timeout
        try:
            while pending:
                line = self._readline(deadline)
                key, score = _parse_response_line(line, pending)
                scores[key] = score
        except ScorerError:
            if write_error:
                raise ScorerError(f"scorer stdin write failed: {write_error[0]}") from write_error[0]
            raise
        writer.join(timeout=1.0)
        return scores

    def close(self) -> None:
        if self._proc is None:
            return
        try:
            self._proc.stdin.close()
            self._proc.wait(timeout=5.0)
        except (OSError, subprocess.TimeoutExpired):
            self._proc.kill()
        self._proc = None


class HttpScorerTransport:
    """POSTs each batch as NDJSON; the response opens with the handshake line."""

    def __init__(self, url: str, timeout: float = 60.0):
        if timeout <= 0:
            raise ValueError("timeout must be > 0")
        self.url = url
        self.timeout = timeout

    def score_batch(self, requests: Sequence[ScoreRequest]) -> dict[tuple[str, str], float]:
        if not requests:
            return {}
        pending = {(r["qid"], r["docid"]) for r in requests}
        if len(pending) != len(requests):
            raise ScorerError("duplicate (qid, docid) pairs in one batch")
        body = "".join(json.dumps(r) + "\n" for r in requests).encode("utf-8")
        req = urllib.request.Request(
            self.url, data=body, headers={"Content-Type": "application/x-ndjson"}
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                lines = resp.read().decode("utf-8").splitlines()
        except OSError as e:
            raise ScorerError(f"scorer endpoint {self.url} unreachable: {e}") from e
        if not lines:
            raise ScorerError(f"empty response from scorer endpoint {self.url}")
        try:
            proto = json.loads(lines[0]).get("proto")
        except json.JSONDecodeError:
            proto = None
        if proto != WIRE_PROTO:
            raise ScorerError(
                f"bad handshake from {self.url}: expected proto {WIRE_PROTO!r}, got {lines[0]!r}"
            )
        scores: dict[tuple[str, str], float] = {}
        for line in lines[1:]:
            if not line.strip():
                continue
            key, score = _parse_response_line(line, pending)
            scores[key] = score
        if pending:
            missing = sorted(pending)[:5]
            raise ScorerError(f"scorer left {len(pending)} pairs unanswered, e.g. {missing}")
        return scores

    def close(self) -> None:
        pass


class ExternalScorer(Scorer):
    """Adapts a wire transport to the Scorer interface (order-preserving)."""

    def __init__(self, transport, name: str = "external", batch_size: int | None = None):
        self.transport = transport
        self.name = name
        self.batch_size = batch_size

    def score_pairs(self, query: Query, docs: Sequence[tuple[str, str]]) -> list[float]:
        if not docs:
            return []
        requests = [
            {"qid": query.query_id, "query": query.text, "docid": doc_id, "text": text}
            for doc_id, text in docs
        ]
        scores: dict[tuple[str, str], float] = {}
        step = self.batch_size or len(requests)
        for i in range(0, len(requests), step):
            scores.update(self.transport.score_batch(requests[i : i + step]))
        return [scores[(query.query_id, doc_id)] for doc_id, _ in docs]

    def close(self) -> None:
        self.transport.close()


_WORDS = (
    "flea time remedy search rank relevance passage query retrieval long "
    "live buy here document true false neural lexical token attack"
).split()


def synthetic_requests(n: int, seed: int = 0) -> list[ScoreRequest]:
    rng = random.Random(seed)
    reqs = []
    for i in range(n):
        reqs.append(
            {
                "qid": f"q{rng.randrange(max(1, n // 10))}",
                "query": " ".join(rng.choices(_WORDS, k=rng.randint(2, 6))),
                "docid": f"d{i}",
                "text": " ".join(rng.choices(_WORDS, k=rng.randint(5, 40))),
            }
        )
    return reqs


@dataclass
class ConformanceReport:
    requests: int
    joined: bool
    unit_range_ok: bool
    max_split_delta: float
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def conformance_check(
    transport,
    n_requests: int = 1000,
    seed: int = 0,
    batch_sizes: tuple[int, int] = (128, 7),
    require_unit_range: bool = True,
    tol: float = 1e-5,
) -> ConformanceReport:
    """Fuzz an endpoint: joins, score range, and batch-splitting invariance.

    The same request set is scored twice with different batch splits (the
    second pass shuffled); per-pair scores must agree within ``tol``.
    """
    requests = synthetic_requests(n_requests, seed)
    report = ConformanceReport(n_requests, joined=False, unit_range_ok=True, max_split_delta=0.0)

    def _run_pass(reqs: list[ScoreRequest], batch: int) -> dict[tuple[str, str], float]:
        out: dict[tuple[str, str], float] = {}
        for i in range(0, len(reqs), batch):
            out.update(transport.score_batch(reqs[i : i + batch]))
        return out

    try:
        first = _run_pass(requests, batch_sizes[0])
        shuffled = list(requests)
        random.Random(seed + 1).shuffle(shuffled)
        second = _run_pass(shuffled, batch_sizes[1])
    except ScorerError as e:
        report.failures.append(str(e))
        return report

    keys = {(r["qid"], r["docid"]) for r in requests}
    if set(first) == keys and set(second) == keys:
        report.joined = True
    else:
        report.failures.append("response keys do not join request keys")
    if require_unit_range:
        bad = [k for k, s in first.items() if not 0.0 <= s <= 1.0]
        if bad:
            report.unit_range_ok = False
            report.failures.append(f"{len(bad)} scores outside [0, 1], e.g. {bad[:3]}")
    if report.joined:
        report.max_split_delta = max(abs(first[k] - second[k]) for k in keys)
        if report.max_split_delta > tol:
            report.failures.append(
                f"batch-splitting changed scores by up to {report.max_split_delta:.3g} > {tol}"
            )
    return report
