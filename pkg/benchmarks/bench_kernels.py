#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Synthesizes a corpus-shaped workload (flattened term-id arrays, short
queries) and times both backends on the BM25 scoring kernel and the
rank-change bucket aggregation. Run:

    python benchmarks/bench_kernels.py [--docs 20000] [--repeats 5]

Setting RANK_ATTACK_BACKEND=numpy|numba selects the backend used by the
package at import time; this script always measures both.
"""

import argparse
import time

import numpy as np

from rank_attack.kernels import get_backend


def make_workload(n_docs: int, seed: int = 7):
    rng = np.random.default_rng(seed)
    lengths = rng.integers(20, 120, size=n_docs)
    offsets = np.zeros(n_docs + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    doc_terms = rng.integers(-1, 5000, size=int(offsets[-1])).astype(np.int64)
    q_ids = rng.choice(5000, size=4, replace=False).astype(np.int64)
    q_idf = rng.uniform(0.2, 3.0, size=4)
    before = rng.integers(1, 1001, size=n_docs).astype(np.int64)
    after = np.clip(before + rng.integers(-50, 51, size=n_docs), 1, 1000).astype(np.int64)
    return doc_terms, offsets, q_ids, q_idf, before, after


def bench(fn, args, repeats: int) -> float:
    fn(*args)  # warmup (includes JIT compile for numba)
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--docs", type=int, default=20000)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    doc_terms, offsets, q_ids, q_idf, before, after = make_workload(args.docs)
    backends = [get_backend("numpy")]
    try:
        backends.append(get_backend("numba"))
    except ImportError:
        print("numba unavailable; benchmarking numpy only")

    results = {}
    for backend in backends:
        bm25_args = (doc_terms, offsets, q_ids, q_idf, 1.2, 0.75, 70.0)
        bucket_args = (before, after, 100, 10)
        results[backend.name] = {
            "bm25_scores": bench(backend.bm25_scores, bm25_args, args.repeats),
            "bucket_mrc_sums": bench(backend.bucket_mrc_sums, bucket_args, args.repeats),
        }

    ref = backends[0]
    for other in backends[1:]:
        a = ref.bm25_scores(doc_terms, offsets, q_ids, q_idf, 1.2, 0.75, 70.0)
        b = other.bm25_scores(doc_terms, offsets, q_ids, q_idf, 1.2, 0.75, 70.0)
        np.testing.assert_allclose(a, b, rtol=1e-12)

    print(f"workload: {args.docs} docs, {len(doc_terms)} tokens, best of {args.repeats}")
    header = f"{'kernel':<18}" + "".join(f"{name:>12}" for name in results)
    print(header)
    for kernel in ("bm25_scores", "bucket_mrc_sums"):
        row = f"{kernel:<18}"
        for name in results:
            row += f"{results[name][kernel] * 1e3:>10.2f}ms"
        print(row)
    if len(results) == 2:
        names = list(results)
        for kernel in ("bm25_scores", "bucket_mrc_sums"):
            speedup = results[names[0]][kernel] / results[names[1]][kernel]
            print(f"{kernel}: {names[1]} is {speedup:.1f}x vs {names[0]}")


if __name__ == "__main__":
    main()
