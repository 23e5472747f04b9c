"""Hot numeric kernels with a numba backend and a pure-numpy fallback.

The backend is picked once at import time from the ``RANK_ATTACK_BACKEND``
environment variable ("numba" or "numpy"); unset prefers numba when it
imports, falling back to numpy otherwise. ``get_backend`` exposes both for
the benchmark in benchmarks/bench_kernels.py.

Kernel contracts:

- ``bm25_scores(doc_terms, doc_offsets, q_ids, q_idf, k1, b, avgdl)``
  Documents are flattened term-id arrays: doc i occupies
  ``doc_terms[doc_offsets[i]:doc_offsets[i+1]]``. Term ids are global
  integers; -1 marks out-of-vocabulary tokens that count toward document
  length only. ``q_ids``/``q_idf`` are the query's unique term ids and
  their idf values. Returns one score per document: for each query term
  with in-doc frequency tf > 0, add
  ``idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))``.

- ``bucket_mrc_sums(before, after, bucket_size, n_buckets)``
  Accumulates sum(before - after) and counts per bucket
  ``(before - 1) // bucket_size``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable

import numpy as np

_ENV_VAR = "RANK_ATTACK_BACKEND"


@dataclass(frozen=True)
class Backend:
    name: str
    bm25_scores: Callable
    bucket_mrc_sums: Callable


def _bm25_scores_numpy(doc_terms, doc_offsets, q_ids, q_idf, k1, b, avgdl):
    n_docs = len(doc_offsets) - 1
    scores = np.zeros(n_docs, dtype=np.float64)
    if len(q_ids) == 0:
        return scores
    for i in range(n_docs):
        lo, hi = doc_offsets[i], doc_offsets[i + 1]
        dl = hi - lo
        if dl == 0:
            continue
        terms = doc_terms[lo:hi]
        tf = (terms[:, None] == q_ids[None, :]).sum(axis=0).astype(np.float64)
        denom = tf + k1 * (1.0 - b + b * dl / avgdl)
        present = tf > 0
        scores[i] = np.sum(q_idf[present] * tf[present] * (k1 + 1.0) / denom[present])
    return scores


def _bucket_mrc_sums_numpy(before, after, bucket_size, n_buckets):
    buckets = (before - 1) // bucket_size
    deltas = (before - after).astype(np.float64)
    sums = np.bincount(buckets, weights=deltas, minlength=n_buckets)
    counts = np.bincount(buckets, minlength=n_buckets)
    return sums, counts.astype(np.int64)


def _build_numpy() -> Backend:
    return Backend("numpy", _bm25_scores_numpy, _bucket_mrc_sums_numpy)


def _build_numba() -> Backend:
    from numba import njit

    @njit(cache=True)
    def bm25_scores(doc_terms, doc_offsets, q_ids, q_idf, k1, b, avgdl):
        n_docs = len(doc_offsets) - 1
        m = len(q_ids)
        scores = np.zeros(n_docs, dtype=np.float64)
        tf = np.zeros(m, dtype=np.float64)
        for i in range(n_docs):
            lo, hi = doc_offsets[i], doc_offsets[i + 1]
            dl = hi - lo
            if dl == 0 or m == 0:
                continue
            for j in range(m):
                tf[j] = 0.0
            for p in range(lo, hi):
                t = doc_terms[p]
                if t < 0:
                    continue
                for j in range(m):
                    if t == q_ids[j]:
                        tf[j] += 1.0
                        break
            norm = k1 * (1.0 - b + b * dl / avgdl)
            s = 0.0
            for j in range(m):
                if tf[j] > 0.0:
                    s += q_idf[j] * tf[j] * (k1 + 1.0) / (tf[j] + norm)
            scores[i] = s
        return scores

    @njit(cache=True)
    def bucket_mrc_sums(before, after, bucket_size, n_buckets):
        sums = np.zeros(n_buckets, dtype=np.float64)
        counts = np.zeros(n_buckets, dtype=np.int64)
        for i in range(len(before)):
            bucket = (before[i] - 1) // bucket_size
            sums[bucket] += before[i] - after[i]
            counts[bucket] += 1
        return sums, counts

    return Backend("numba", bm25_scores, bucket_mrc_sums)


def get_backend(name: str | None = None) -> Backend:
    """Build the named backend; None resolves via env var then availability."""
    if name is None:
        name = os.environ.get(_ENV_VAR, "").strip().lower() or None
    if name == "numpy":
        return _build_numpy()
    if name == "numba":
        return _build_numba()
    if name is None:
        try:
            return _build_numba()
        except ImportError:
            return _build_numpy()
    raise ValueError(f"unknown backend {name!r}; expected 'numba' or 'numpy'")


BACKEND = get_backend()
