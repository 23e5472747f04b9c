"""Experiment pipelines behind the CLI subcommands.

Each stage writes its artifact with a fingerprint header (tool version,
config hash, seed, lexicon hash). Stages are resumable: when the target
file already exists with a matching header, the stage is skipped. All
parallel fan-out is keyed and re-sorted before emission, so outputs are
byte-identical at any worker count.
"""

from __future__ import annotations

import hashlib
import io
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from typing import Any, Callable, Iterable, Sequence, TypeVar

from .attacks import (
    AttackSpec,
    AttackedDocument,
    IdentitySpec,
    apply_spec,
    decode_spec_id,
    default_lexicon,
    load_lexicon,
    parse_attacked_tsv,
    build_grid,
    write_attacked_tsv,
    write_lexicon,
)
from .bm25 import BM25Scorer, Bm25Params, build_index
from .bounds import compute_bounds
from .config import ExperimentConfig
from .corpus import (
    Query,
    RunEntry,
    group_run_by_query,
    load_collection,
    load_qrels,
    load_run,
    load_topics,
    write_run,
)
from .errors import DataFormatError, UsageError
from .metrics import (
    PairDelta,
    bucketed_mrc,
    mean_rank_change,
    ndcg_at_k,
    paired_ttest,
    precision_at_k,
    success_rate,
)
from .reports import (
    render_bounds_text,
    render_eval_text,
    render_token_summary,
    standard_header,
    write_bounds_csv,
    write_eval_csv,
)
from .rewrite import (
    AuditLog,
    StubGenerator,
    HttpGenerator,
    SubprocessGenerator,
    default_prompts,
    load_prompts,
    rewrite_many,
    select_prompt,
)
from .scoring import ConstantScorer, RankContext, Scorer, TokenRewardScorer
from .wire import ExternalScorer, HttpScorerTransport, SubprocessScorerTransport

T = TypeVar("T")
R = TypeVar("R")


def _parallel_map(fn: Callable[[T], R], items: Sequence[T], workers: int) -> list[R]:
    """Order-preserving map; more workers never changes the result order."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def load_inputs(cfg: ExperimentConfig, need_qrels: bool = False):
    store = load_collection(cfg.path("collection"))
    topics = {q.query_id: q for q in load_topics(cfg.path("topics"))}
    run = load_run(cfg.path("run"))
    missing = sorted({e.query_id for e in run} - set(topics))
    if missing:
        raise DataFormatError(f"run references queries missing from topics: {missing[:10]}")
    grouped = group_run_by_query(run)
    run = [e for qid in sorted(grouped) for e in grouped[qid][: cfg.rerank_depth]]
    qrels = None
    qrels_path = cfg.path("qrels", required=need_qrels)
    if qrels_path is not None and os.path.exists(qrels_path):
        qrels = load_qrels(qrels_path)
    elif need_qrels:
        raise DataFormatError(f"qrels file not found: {qrels_path}")
    return store, topics, run, qrels


def load_grid_tokens(cfg: ExperimentConfig):
    lexicon_path = cfg.path("lexicon", required=False)
    tokens = load_lexicon(lexicon_path) if lexicon_path else default_lexicon()
    return tokens


def grid_from_config(cfg: ExperimentConfig) -> list[AttackSpec | IdentitySpec]:
    tokens = load_grid_tokens(cfg)
    grid_cfg = cfg.grid
    positions = grid_cfg.get("positions", ["start", "end", "random"])
    reps = grid_cfg.get("repetitions", [1, 2, 3, 4, 5])
    if "random" in positions and reps and cfg.seed is None:
        raise UsageError("config needs a seed: grid contains random-position specs")
    specs: list[AttackSpec | IdentitySpec] = []
    if grid_cfg.get("include_identity", False):
        specs.append(IdentitySpec())
    if positions and reps:
        specs.extend(build_grid(tokens, positions, reps))
    if not specs:
        raise UsageError("config grid is empty (no positions/repetitions and no identity)")
    return specs


def lexicon_hash(cfg: ExperimentConfig) -> str:
    lexicon_path = cfg.path("lexicon", required=False)
    if lexicon_path:
        with open(lexicon_path, "rb") as f:
            payload = f.read()
    else:
        buf = io.StringIO()
        write_lexicon(default_lexicon(), buf)
        payload = buf.getvalue().encode("utf-8")
    return hashlib.sha256(payload).hexdigest()[:16]


def inputs_hash(cfg: ExperimentConfig) -> str:
    """Content hash of the input files; headers embed it so identical
    headers really do imply identical bodies, and stale artifacts are
    recomputed when an input changes."""
    digest = hashlib.sha256()
    for key in ("collection", "topics", "qrels", "run"):
        path = cfg.path(key, required=False)
        if path is None or not os.path.exists(path):
            continue
        digest.update(key.encode())
        with open(path, "rb") as f:
            for chunk in iter(lambda: f.read(1 << 20), b""):
                digest.update(chunk)
    return digest.hexdigest()[:16]


def build_scorer(cfg: ExperimentConfig, store=None, queries: Iterable[Query] = ()) -> Scorer:
    spec = dict(cfg.scorer)
    kind = spec.get("type", "bm25")
    if kind == "bm25":
        if store is None:
            raise UsageError("bm25 scorer needs a collection")
        stopwords: frozenset[str] = frozenset()
        stopwords_path = spec.get("stopwords")
        if stopwords_path:
            with open(os.path.join(cfg.base_dir, stopwords_path), encoding="utf-8") as f:
                stopwords = frozenset(w.strip().lower() for w in f if w.strip())
        params = Bm25Params(float(spec.get("k1", 1.2)), float(spec.get("b", 0.75)), stopwords)
        return BM25Scorer(build_index(store, params), queries)
    if kind == "subprocess":
        transport = SubprocessScorerTransport(spec["argv"], float(spec.get("timeout", 60.0)))
        return ExternalScorer(transport, name=spec.get("name", "external"),
                              batch_size=spec.get("batch_size"))
    if kind == "http":
        transport = HttpScorerTransport(spec["url"], float(spec.get("timeout", 60.0)))
        return ExternalScorer(transport, name=spec.get("name", "external"),
                              batch_size=spec.get("batch_size"))
    if kind == "token-reward":
        return TokenRewardScorer(spec.get("token", "true"), float(spec.get("bonus", 0.1)),
                                 spec.get("base", 0.0))
    if kind == "constant":
        return ConstantScorer(float(spec.get("value", 0.5)))
    raise UsageError(f"unknown scorer type {kind!r}")


@contextmanager
def _scorer_for(cfg: ExperimentConfig, store, queries):
    """Build the configured scorer and tear down its transport afterwards."""
    scorer = build_scorer(cfg, store, queries)
    try:
        yield scorer
    finally:
        close = getattr(scorer, "close", None)
        if close is not None:
            close()


def _header(cfg: ExperimentConfig, **extra) -> list[str]:
    fingerprint = {"inputs_hash": inputs_hash(cfg), **extra}
    return standard_header(cfg.config_hash(), cfg.seed, lexicon_hash(cfg), fingerprint)


def _should_skip(path: str, header: Sequence[str]) -> bool:
    if not os.path.exists(path):
        return False
    expected = [f"# {line}" for line in header]
    try:
        with open(path, encoding="utf-8") as f:
            got = [f.readline().rstrip("\n") for _ in expected]
    except OSError:
        return False
    if got == expected:
        print(f"[skip] {path}: up to date (matching header)", file=sys.stderr)
        return True
    return False


def _out(cfg: ExperimentConfig, name: str) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return os.path.join(cfg.out_dir, name)


def run_attack(cfg: ExperimentConfig) -> str:
    """Write the attacked corpus: every run document under every grid spec."""
    store, _, run, _ = load_inputs(cfg)
    specs = grid_from_config(cfg)
    out_path = _out(cfg, "attacked.tsv")
    header = _header(cfg, specs=len(specs))
    if _should_skip(out_path, header):
        return out_path
    doc_ids = sorted({e.doc_id for e in run})

    def _rows_for(doc_id: str) -> list[AttackedDocument]:
        doc = store.get(doc_id)
        return [apply_spec(doc, spec, cfg.seed) for spec in specs]

    # stream in ordered chunks: bounded memory at corpus scale, and chunk
    # boundaries don't depend on worker count so output bytes are stable
    with open(out_path, "w", encoding="utf-8") as f:
        for line in header:
            f.write(f"# {line}\n")
        chunk = 64
        for start in range(0, len(doc_ids), chunk):
            for rows in _parallel_map(_rows_for, doc_ids[start : start + chunk], cfg.workers):
                write_attacked_tsv(rows, f)
    return out_path


def build_contexts(cfg: ExperimentConfig, store, topics, run, scorer) -> dict[str, RankContext]:
    grouped = group_run_by_query(run)
    qids = sorted(grouped)

    def _ctx(qid: str) -> RankContext:
        candidates = [(e.doc_id, store.get(e.doc_id).text) for e in grouped[qid]]
        return RankContext(topics[qid], candidates, scorer)

    return dict(zip(qids, _parallel_map(_ctx, qids, cfg.workers)))


def run_rerank(cfg: ExperimentConfig) -> str:
    store, topics, run, qrels = load_inputs(cfg)
    with _scorer_for(cfg, store, topics.values()) as scorer:
        out_path = _out(cfg, "rerank.run")
        header = _header(cfg, scorer=scorer.name)
        if _should_skip(out_path, header):
            return out_path
        contexts = build_contexts(cfg, store, topics, run, scorer)
        entries = [
            e
            for qid in sorted(contexts)
            for e in contexts[qid].ranking().to_run_entries(scorer.name)
        ]
        with open(out_path, "w", encoding="utf-8") as f:
            write_run(entries, f, header)
        if qrels is not None:
            metrics_path = _out(cfg, "rerank_metrics.csv")
            with open(metrics_path, "w", encoding="utf-8") as f:
                for line in header:
                    f.write(f"# {line}\n")
                f.write("query_id,ndcg_at_10,p_at_10\n")
                for qid in sorted(contexts):
                    ranking = contexts[qid].ranking()
                    f.write(
                        f"{qid},{ndcg_at_k(ranking, qrels, 10):.10g},"
                        f"{precision_at_k(ranking, qrels, 10):.10g}\n"
                    )
    return out_path


def run_evaluate(cfg: ExperimentConfig, attacked_path: str | None = None) -> dict[str, str]:
    """Per-spec SR/MRC with Bonferroni-corrected significance, plus the
    per-token best-configuration summary."""
    store, topics, run, _ = load_inputs(cfg)
    attacked_path = attacked_path or _out(cfg, "attacked.tsv")
    if not os.path.exists(attacked_path):
        raise DataFormatError(f"attacked corpus not found: {attacked_path} (run 'attack' first)")
    queries_by_doc: dict[str, list[str]] = {}
    for e in run:
        queries_by_doc.setdefault(e.doc_id, []).append(e.query_id)

    deltas: dict[str, dict[tuple[str, str], PairDelta]] = {}
    with _scorer_for(cfg, store, topics.values()) as scorer:
        contexts = build_contexts(cfg, store, topics, run, scorer)
        is_bm25 = isinstance(scorer, BM25Scorer)
        with open(attacked_path, encoding="utf-8") as f:
            for row in parse_attacked_tsv(f, source=attacked_path):
                qids = queries_by_doc.get(row.source_doc_id)
                if not qids:
                    continue
                per_spec = deltas.setdefault(row.spec_id, {})
                encoded = scorer.encode(row.text) if is_bm25 else None
                for qid in qids:
                    ctx = contexts[qid]
                    if encoded is not None:
                        score = float(scorer.score_encoded(ctx.query, [encoded])[0])
                        rank_after = ctx.rank_of_score(row.source_doc_id, score)
                    else:
                        rank_after = ctx.rank_of_variant(row.source_doc_id, row.text)
                    per_spec[(qid, row.source_doc_id)] = PairDelta(
                        qid, row.source_doc_id,
                        ctx.original_rank(row.source_doc_id), rank_after,
                    )
        scorer_name = scorer.name

    if not deltas:
        raise DataFormatError(f"attacked corpus {attacked_path} covers no document of the run")
    all_pairs = {(e.query_id, e.doc_id) for e in run}
    missing = [
        (spec_id, pair)
        for spec_id, per_spec in sorted(deltas.items())
        for pair in sorted(all_pairs - set(per_spec))
    ]
    if missing:
        sample = ", ".join(f"{s}:{p}" for s, p in missing[:10])
        raise DataFormatError(
            f"attacked corpus is missing {len(missing)} (spec, pair) scores, e.g. {sample}"
        )

    m = len(deltas)
    rows: list[dict[str, Any]] = []
    for spec_id in sorted(deltas):
        ordered = [deltas[spec_id][k] for k in sorted(deltas[spec_id])]
        before = [float(d.rank_before) for d in ordered]
        after = [float(d.rank_after) for d in ordered]
        test = paired_ttest(before, after, corrections=m)
        info = decode_spec_id(spec_id)
        rows.append({
            "spec_id": spec_id,
            "token": info["token"],
            "category": info["category"],
            "position": info["position"],
            "n": info["n"],
            "mrc": f"{mean_rank_change(ordered):.10g}",
            "sr": f"{success_rate(ordered):.10g}",
            "t": "" if test.zero_variance else f"{test.t:.6g}",
            "p": "" if test.zero_variance else f"{test.p:.6g}",
            "significant": test.significant,
            "zero_variance": test.zero_variance,
        })

    header = _header(cfg, scorer=scorer_name, bonferroni_m=m)
    outputs: dict[str, str] = {}
    if "csv" in cfg.report_formats:
        path = _out(cfg, "evaluate.csv")
        with open(path, "w", encoding="utf-8") as f:
            write_eval_csv(rows, f, header)
        outputs["csv"] = path
        # per-before-rank-bucket MRC (100-rank buckets), one row per
        # (spec, non-empty bucket); bucket i covers ranks 100i+1..100(i+1)
        path = _out(cfg, "bucket_mrc.csv")
        with open(path, "w", encoding="utf-8") as f:
            for line in header:
                f.write(f"# {line}\n")
            f.write("spec_id,bucket,rank_lo,rank_hi,mrc,pairs\n")
            for spec_id in sorted(deltas):
                ordered = [deltas[spec_id][k] for k in sorted(deltas[spec_id])]
                counts: dict[int, int] = {}
                for d in ordered:
                    bucket = (d.rank_before - 1) // 100
                    counts[bucket] = counts.get(bucket, 0) + 1
                for bucket, value in sorted(bucketed_mrc(ordered).items()):
                    f.write(
                        f"{spec_id},{bucket},{bucket * 100 + 1},{bucket * 100 + 100},"
                        f"{value:.10g},{counts[bucket]}\n"
                    )
        outputs["buckets"] = path
    if "txt" in cfg.report_formats:
        path = _out(cfg, "evaluate.txt")
        with open(path, "w", encoding="utf-8") as f:
            f.write(render_eval_text(rows, header))
        outputs["txt"] = path
        path = _out(cfg, "token_summary.txt")
        with open(path, "w", encoding="utf-8") as f:
            f.write(render_token_summary(rows, header))
        outputs["summary"] = path
    return outputs


def run_bounds(cfg: ExperimentConfig) -> dict[str, str]:
    store, topics, run, qrels = load_inputs(cfg, need_qrels=True)
    specs = [s for s in grid_from_config(cfg) if isinstance(s, AttackSpec)]
    with _scorer_for(cfg, store, topics.values()) as scorer:
        row = compute_bounds(
            run, store, topics, qrels, specs, scorer,
            seed=cfg.seed, rel_threshold=cfg.rel_threshold,
        )
    header = _header(cfg, scorer=row.scorer_name, bonferroni_m=row.corrections,
                     rel_threshold=cfg.rel_threshold)
    outputs: dict[str, str] = {}
    if "csv" in cfg.report_formats:
        path = _out(cfg, "bounds.csv")
        with open(path, "w", encoding="utf-8") as f:
            write_bounds_csv(row, f, header)
        outputs["csv"] = path
    if "txt" in cfg.report_formats:
        path = _out(cfg, "bounds.txt")
        with open(path, "w", encoding="utf-8") as f:
            f.write(render_bounds_text(row, header))
        outputs["txt"] = path
    return outputs


def build_generator(cfg: ExperimentConfig, kind: str):
    gen_cfg = dict(cfg.rewrite.get("generator", {"type": "stub"}))
    gen_type = gen_cfg.get("type", "stub")
    if gen_type == "stub":
        return StubGenerator(gen_cfg.get("kind", kind))
    if gen_type == "http":
        return HttpGenerator(gen_cfg["url"], float(gen_cfg.get("timeout", 120.0)),
                             gen_cfg.get("name", "http"))
    if gen_type == "subprocess":
        return SubprocessGenerator(gen_cfg["argv"], float(gen_cfg.get("timeout", 120.0)),
                                   gen_cfg.get("name", "subprocess"))
    raise UsageError(f"unknown generator type {gen_type!r}")


def run_rewrite(cfg: ExperimentConfig) -> str:
    """Rewrite every run document with one prompt (configured or pilot-selected)."""
    store, topics, run, _ = load_inputs(cfg)
    rw = cfg.rewrite
    kind = rw.get("kind", "paraphrase")
    prompts_path = rw.get("prompts")
    prompts = (
        load_prompts(os.path.join(cfg.base_dir, prompts_path)) if prompts_path else default_prompts()
    )
    candidates = [p for p in prompts if p.kind == kind]
    if not candidates:
        raise UsageError(f"no prompts of kind {kind!r} available")
    gen = build_generator(cfg, kind)
    audit_path = rw.get("audit_log")
    audit = AuditLog(os.path.join(cfg.base_dir, audit_path) if audit_path
                     else _out(cfg, "rewrite_audit.jsonl"))

    try:
        prompt_id = rw.get("prompt_id")
        if prompt_id is not None:
            chosen = next((p for p in candidates if p.prompt_id == prompt_id), None)
            if chosen is None:
                raise UsageError(f"prompt_id {prompt_id!r} not among {kind} prompts")
        elif len(candidates) == 1:
            chosen = candidates[0]
        else:
            pilot_n = int(rw.get("pilot_pairs", 50))
            with _scorer_for(cfg, store, topics.values()) as scorer:
                contexts = build_contexts(cfg, store, topics, run, scorer)
                grouped = group_run_by_query(run)
                pairs = []
                for qid in sorted(grouped):
                    for e in grouped[qid]:
                        pairs.append((topics[qid], store.get(e.doc_id)))
                pairs = pairs[:pilot_n]
                chosen = select_prompt(candidates, pairs, gen, contexts, audit)

        out_path = _out(cfg, "rewritten.tsv")
        header = _header(cfg, generator=gen.name, prompt_id=chosen.prompt_id, kind=kind)
        if _should_skip(out_path, header):
            return out_path
        doc_ids = sorted({e.doc_id for e in run})
        docs = [store.get(d) for d in doc_ids]
        rows = rewrite_many(docs, chosen, gen, audit,
                            max_in_flight=int(rw.get("max_in_flight", 1)))
        with open(out_path, "w", encoding="utf-8") as f:
            write_attacked_tsv(rows, f, header)
        return out_path
    finally:
        gen.close()


def run_report(cfg: ExperimentConfig, input_csv: str | None = None) -> dict[str, str]:
    """Re-render the text reports from a previously written evaluate CSV."""
    from .reports import read_eval_csv

    path = input_csv or _out(cfg, "evaluate.csv")
    if not os.path.exists(path):
        raise DataFormatError(f"evaluate CSV not found: {path}")
    with open(path, encoding="utf-8") as f:
        all_lines = f.read().splitlines()
    header = [ln[2:] for ln in all_lines if ln.startswith("# ")]
    rows = read_eval_csv(all_lines)
    outputs = {}
    txt_path = _out(cfg, "evaluate.txt")
    with open(txt_path, "w", encoding="utf-8") as f:
        f.write(render_eval_text(rows, header))
    outputs["txt"] = txt_path
    summary_path = _out(cfg, "token_summary.txt")
    with open(summary_path, "w", encoding="utf-8") as f:
        f.write(render_token_summary(rows, header))
    outputs["summary"] = summary_path
    return outputs
