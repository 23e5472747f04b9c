#!/usr/bin/env python3
"""Minimal wire-protocol scorer used by the client tests.

Scores are a deterministic hash of (qid, docid, text) mapped into [0, 1].
Responses are emitted in reverse order every 3 requests to exercise
out-of-order joining. Modes (argv[1]):

  ok         normal behaviour (default)
  nan        emits a NaN score for every pair
  badkey     responds with a wrong docid
  drop       never answers pairs whose docid ends in 1
  badproto   opens with a wrong handshake line
  error      emits an {"error": ...} line for pairs whose docid ends in 7
  reward     prompt-injection-prone scoring: sigmoid of the count of the
             word "true" in the document text
"""

import hashlib
import json
import math
import re
import sys

MODE = "ok"


def score_of(req):
    if MODE == "reward":
        count = len(re.findall(r"(?<![0-9A-Za-z])true(?![0-9A-Za-z])", req["text"].lower()))
        return 1.0 / (1.0 + math.exp(-(0.7 * count - 2.0)))
    material = f"{req['qid']}|{req['docid']}|{req['text']}".encode()
    digest = hashlib.sha256(material).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


def main():
    global MODE
    mode = MODE = sys.argv[1] if len(sys.argv) > 1 else "ok"
    proto = "rank-attack/0" if mode == "badproto" else "rank-attack/1"
    sys.stdout.write(json.dumps({"proto": proto}) + "\n")
    sys.stdout.flush()

    batch = []

    def flush_batch():
        for req in reversed(batch):
            if mode == "drop" and req["docid"].endswith("1"):
                continue
            if mode == "error" and req["docid"].endswith("7"):
                out = {"qid": req["qid"], "docid": req["docid"], "error": "boom"}
            else:
                score = float("nan") if mode == "nan" else score_of(req)
                docid = req["docid"] + "X" if mode == "badkey" else req["docid"]
                out = {"qid": req["qid"], "docid": docid, "score": score}
            sys.stdout.write(json.dumps(out) + "\n")
        sys.stdout.flush()
        batch.clear()

    import select

    while True:
        line = sys.stdin.readline()
        if not line:
            break
        if line.strip():
            batch.append(json.loads(line))
        # flush on a full mini-batch or when no more input is ready: bursts
        # arrive out of order, stragglers are answered immediately
        more_ready = select.select([sys.stdin], [], [], 0)[0]
        if len(batch) >= 3 or (batch and not more_ready):
            flush_batch()
    flush_batch()


if __name__ == "__main__":
    main()
