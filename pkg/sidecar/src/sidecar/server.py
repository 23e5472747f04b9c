"""Wire-protocol scorer server: NDJSON over stdio or HTTP.

Each session opens with the handshake line {"proto": "rank-attack/1"}.
Requests {"qid", "query", "docid", "text"} are micro-batched per model
call; responses {"qid", "docid", "score"} may leave in a different order
than requests arrived (the protocol joins on the key, not on order).
Malformed requests get an {"error": ...} line and the session continues.

A startup self-test scores a fixed probe set one-by-one and batched and
refuses to serve when batching shifts any score by more than 1e-5.
"""

from __future__ import annotations

import http.server
import json
import logging
import queue
import sys
import threading
from dataclasses import dataclass
from typing import Sequence

from . import WIRE_PROTO

log = logging.getLogger("sidecar")

BATCH_TOLERANCE = 1e-5

_PROBES = [
    ("how long do fleas live", "Fleas live a long time. Buy flea remedies here."),
    ("how long do fleas live", "true true true Fleas live a long time."),
    ("retrieval", "a passage about something else entirely"),
    ("empty", ""),
]


@dataclass
class Request:
    qid: str
    docid: str
    prompt: str


class ScoringEngine:
    """Fills templates and scores micro-batches; one model, lock-guarded."""

    def __init__(self, model, batch_size: int = 16):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.model = model
        self.batch_size = batch_size
        self._lock = threading.Lock()

    def selftest(self) -> float:
        prompts = [self.model.template.fill(q, d) for q, d in _PROBES]
        singly = [self.model.score_prompts([p])[0] for p in prompts]
        batched = self.model.score_prompts(prompts)
        worst = max(abs(a - b) for a, b in zip(singly, batched))
        if worst > BATCH_TOLERANCE:
            raise RuntimeError(
                f"startup self-test failed: batching changes scores by {worst:.3g} "
                f"(> {BATCH_TOLERANCE})"
            )
        return worst

    def score(self, requests: Sequence[Request]) -> list[float]:
        scores: list[float] = []
        with self._lock:
            for i in range(0, len(requests), self.batch_size):
                chunk = requests[i : i + self.batch_size]
                scores.extend(self.model.score_prompts([r.prompt for r in chunk]))
        return scores


def _parse_request(line: str, template) -> Request | dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError:
        return {"error": f"unparseable request line: {line.strip()[:80]!r}"}
    missing = [k for k in ("qid", "query", "docid", "text") if k not in obj]
    if missing:
        return {
            "error": f"request missing fields {missing}",
            "qid": obj.get("qid", "?"),
            "docid": obj.get("docid", "?"),
        }
    return Request(obj["qid"], obj["docid"], template.fill(obj["query"], obj["text"]))


def serve_stdio(engine: ScoringEngine, stdin=None, stdout=None,
                max_wait: float = 0.005) -> None:
    """Serve one session over stdin/stdout until EOF."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    out_lock = threading.Lock()

    def emit(obj) -> None:
        with out_lock:
            stdout.write(json.dumps(obj) + "\n")
            stdout.flush()

    emit({"proto": WIRE_PROTO})
    lines: queue.Queue[str | None] = queue.Queue()

    def pump():
        for line in stdin:
            lines.put(line)
        lines.put(None)

    threading.Thread(target=pump, daemon=True).start()

    eof = False
    while not eof:
        batch: list[Request] = []
        line = lines.get()
        while True:
            if line is None:
                eof = True
                break
            if line.strip():
                parsed = _parse_request(line, engine.model.template)
                if isinstance(parsed, dict):
                    emit(parsed)
                else:
                    batch.append(parsed)
                    if len(batch) >= engine.batch_size:
                        break
            try:
                line = lines.get(timeout=max_wait)
            except queue.Empty:
                break
        if batch:
            for req, score in zip(batch, engine.score(batch)):
                emit({"qid": req.qid, "docid": req.docid, "score": score})


class _Handler(http.server.BaseHTTPRequestHandler):
    engine: ScoringEngine = None  # set by serve_http

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length).decode("utf-8")
        out_lines = [json.dumps({"proto": WIRE_PROTO})]
        batch: list[Request] = []
        for line in body.splitlines():
            if not line.strip():
                continue
            parsed = _parse_request(line, self.engine.model.template)
            if isinstance(parsed, dict):
                out_lines.append(json.dumps(parsed))
            else:
                batch.append(parsed)
        if batch:
            for req, score in zip(batch, self.engine.score(batch)):
                out_lines.append(json.dumps({"qid": req.qid, "docid": req.docid, "score": score}))
        payload = ("\n".join(out_lines) + "\n").encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/x-ndjson")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, fmt, *args):
        log.debug("http: " + fmt, *args)


def make_http_server(engine: ScoringEngine, host: str = "127.0.0.1", port: int = 0):
    handler = type("BoundHandler", (_Handler,), {"engine": engine})
    return http.server.ThreadingHTTPServer((host, port), handler)


def serve_http(engine: ScoringEngine, host: str, port: int) -> None:
    server = make_http_server(engine, host, port)
    log.info("serving on http://%s:%d", *server.server_address)
    print(f"listening on {server.server_address[0]}:{server.server_address[1]}",
          file=sys.stderr, flush=True)
    server.serve_forever()
