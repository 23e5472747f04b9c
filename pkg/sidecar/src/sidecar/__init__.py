"""Relevance scorer server for prompt-based sequence-to-sequence rankers.

Fills a prompt template with each (query, document) pair, scores the
probability of the positive output token against the negative one at the
first decoded position, and serves the result over the rank-attack wire
protocol (NDJSON with a handshake line, over stdio or HTTP).
"""

__version__ = "0.1.0"

WIRE_PROTO = "rank-attack/1"
