"""Toolkit for query-independent adversarial attacks on relevance rankers.

Generates attacked document variants (token injection, keyword stuffing,
LLM rewriting), re-scores them with pluggable relevance models (built-in
BM25 or external scorers over a wire protocol), and reports attack
efficacy (success rate, mean rank change) and retrieval-effectiveness
bounds (nDCG@10 / P@10 under worst/best-case manipulation scenarios).
"""

__version__ = "0.1.0"

WIRE_PROTO = "rank-attack/1"
