"""LLM-based rewriting attacks: paraphrase and summary-prepend.

Generators are pluggable transports with one contract: prompt string in,
generated text out. No query text ever reaches a generator. Every call
can be mirrored to an append-only JSONL audit log so a full experiment's
request/response pairs are reviewable afterwards.

The offline stub generator keeps the whole pipeline runnable with no
network or model weights: used with the identity template ("{passage}"),
its paraphrase mode prepends "True " and slips " relevant" in after the
first word of the second sentence (or appends it when there is only
one sentence); its summarize mode emits the passage's first 8 words
prefixed by "relevant true". Both modes are deterministic.
"""

from __future__ import annotations

import json
import os
import re
import subprocess
import threading
import time
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .attacks import AttackedDocument
from .corpus import Document, Query
from .errors import DataFormatError, GeneratorError, RankAttackError, ScorerError
from .metrics import PairDelta, mean_rank_change
from .scoring import RankContext

KINDS = ("paraphrase", "summarize")

IDENTITY_TEMPLATE = "{passage}"


@dataclass(frozen=True)
class RewritePrompt:
    prompt_id: str
    template: str
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown prompt kind {self.kind!r}")
        if self.template.count("{passage}") != 1:
            raise ValueError(
                f"prompt {self.prompt_id!r} must contain exactly one {{passage}} slot"
            )

    def fill(self, passage: str) -> str:
        return self.template.replace("{passage}", passage)


def parse_prompts(lines: Iterable[str], source: str = "<prompts>") -> list[RewritePrompt]:
    prompts: list[RewritePrompt] = []
    seen: set[str] = set()
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            obj = json.loads(line)
            prompt = RewritePrompt(obj["prompt_id"], obj["template"], obj["kind"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise DataFormatError(f"{source}:{line_no}: bad prompt record: {e}") from e
        if prompt.prompt_id in seen:
            raise DataFormatError(f"{source}:{line_no}: duplicate prompt_id {prompt.prompt_id!r}")
        seen.add(prompt.prompt_id)
        prompts.append(prompt)
    return prompts


def load_prompts(path: str | os.PathLike[str]) -> list[RewritePrompt]:
    with open(path, encoding="utf-8") as f:
        return parse_prompts(f, source=os.fspath(path))


def default_prompts() -> list[RewritePrompt]:
    from importlib.resources import files

    data = files("rank_attack").joinpath("data/default_prompts.jsonl").read_text("utf-8")
    return parse_prompts(data.splitlines(), source="data/default_prompts.jsonl")


class AuditLog:
    """Append-only JSONL of generator request/response pairs."""

    def __init__(self, path: str | os.PathLike[str]):
        self.path = os.fspath(path)
        self._lock = threading.Lock()

    def record(self, generator: str, doc_id: str, prompt_id: str, prompt: str, text: str) -> None:
        entry = {
            "generator": generator,
            "doc_id": doc_id,
            "prompt_id": prompt_id,
            "request": {"prompt": prompt},
            "response": {"text": text},
        }
        line = json.dumps(entry, ensure_ascii=False) + "\n"
        with self._lock, open(self.path, "a", encoding="utf-8") as f:
            f.write(line)


_SECOND_SENTENCE_WORD = re.compile(r"[.!?]\s+(\S+)")


class StubGenerator:
    """Deterministic offline generator; use with the identity template."""

    def __init__(self, kind: str):
        if kind not in KINDS:
            raise ValueError(f"unknown stub kind {kind!r}")
        self.kind = kind
        self.name = f"stub-{kind}"

    def generate(self, prompt: str) -> str:
        passage = prompt
        if self.kind == "paraphrase":
            m = _SECOND_SENTENCE_WORD.search(passage)
            if m:
                pos = m.end(1)
                body = passage[:pos] + " relevant" + passage[pos:]
            else:
                body = passage + " relevant"
            return "True " + body
        words = passage.split()[:8]
        return " ".join(["relevant", "true"] + words)

    def close(self) -> None:
        pass


class HttpGenerator:
    """POSTs {"prompt": ...} as JSON and expects {"text": ...} back."""

    def __init__(self, url: str, timeout: float = 120.0, name: str = "http"):
        if timeout <= 0:
            raise ValueError("timeout must be > 0")
        self.url = url
        self.timeout = timeout
        self.name = name

    def generate(self, prompt: str) -> str:
        body = json.dumps({"prompt": prompt}).encode("utf-8")
        req = urllib.request.Request(
            self.url, data=body, headers={"Content-Type": "application/json"}
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                obj = json.loads(resp.read().decode("utf-8"))
        except OSError as e:
            raise GeneratorError(f"generator {self.url} unreachable: {e}", retryable=True) from e
        except json.JSONDecodeError as e:
            raise GeneratorError(f"generator {self.url} returned non-JSON: {e}", retryable=True) from e
        if "text" not in obj or not isinstance(obj["text"], str):
            raise GeneratorError(f"generator {self.url} response missing 'text'", retryable=True)
        return obj["text"]

    def close(self) -> None:
        pass


class SubprocessGenerator:
    """Long-lived child speaking one JSON object per line on stdin/stdout."""

    def __init__(self, argv: Sequence[str], timeout: float = 120.0, name: str = "subprocess"):
        if timeout <= 0:
            raise ValueError("timeout must be > 0")
        self.argv = list(argv)
        self.timeout = timeout
        self.name = name
        self._proc: subprocess.Popen | None = None
        self._lock = threading.Lock()

    def _ensure_started(self) -> None:
        if self._proc is None:
            try:
                self._proc = subprocess.Popen(
                    self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                    text=True, bufsize=1,
                )
            except OSError as e:
                raise GeneratorError(f"failed to start generator {self.argv}: {e}") from e

    def generate(self, prompt: str) -> str:
        with self._lock:  # one in-flight request per child
            self._ensure_started()
            deadline = time.monotonic() + self.timeout
            try:
                self._proc.stdin.write(json.dumps({"prompt": prompt}) + "\n")
                self._proc.stdin.flush()
            except OSError as e:
                raise GeneratorError(f"generator {self.argv} stdin failed: {e}", retryable=True) from e
            import select as _select

            remaining = deadline - time.monotonic()
            ready, _, _ = _select.select([self._proc.stdout], [], [], max(remaining, 0.0))
            if not ready:
                raise GeneratorError(f"generator {self.argv} timed out", retryable=True)
            line = self._proc.stdout.readline()
        if not line:
            raise GeneratorError(f"generator {self.argv} closed its stdout", retryable=True)
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise GeneratorError(f"generator {self.argv} sent non-JSON: {line!r}", retryable=True) from e
        if "text" not in obj or not isinstance(obj["text"], str):
            raise GeneratorError(f"generator {self.argv} response missing 'text'", retryable=True)
        return obj["text"]

    def close(self) -> None:
        if self._proc is None:
            return
        try:
            self._proc.stdin.close()
            self._proc.wait(timeout=5.0)
        except (OSError, subprocess.TimeoutExpired):
            self._proc.kill()
        self._proc = None


def rewrite_spec_id(kind: str, prompt_id: str, generator_name: str) -> str:
    return f"rewrite.{kind}.{prompt_id}.{generator_name}"


def _generate_checked(doc: Document, prompt: RewritePrompt, gen, audit: AuditLog | None) -> str:
    filled = prompt.fill(doc.text)
    text = gen.generate(filled).strip()
    if audit is not None:
        audit.record(gen.name, doc.doc_id, prompt.prompt_id, filled, text)
    if not text:
        raise GeneratorError(
            f"empty generation for doc {doc.doc_id!r} with prompt {prompt.prompt_id!r}"
        )
    return text


def paraphrase(doc: Document, prompt: RewritePrompt, gen, audit: AuditLog | None = None) -> AttackedDocument:
    """Replace the passage with the generator's rewrite of it."""
    if prompt.kind != "paraphrase":
        raise ValueError(f"prompt {prompt.prompt_id!r} is not a paraphrase prompt")
    text = _generate_checked(doc, prompt, gen, audit)
    return AttackedDocument(doc.doc_id, rewrite_spec_id("paraphrase", prompt.prompt_id, gen.name), text)


def summarize_prepend(doc: Document, prompt: RewritePrompt, gen, audit: AuditLog | None = None) -> AttackedDocument:
    """Prepend a generated summary sentence; the original text stays a byte-identical suffix."""
    if prompt.kind != "summarize":
        raise ValueError(f"prompt {prompt.prompt_id!r} is not a summarize prompt")
    summary = _generate_checked(doc, prompt, gen, audit)
    return AttackedDocument(
        doc.doc_id,
        rewrite_spec_id("summarize", prompt.prompt_id, gen.name),
        summary + " " + doc.text,
    )


def apply_rewrite(doc: Document, prompt: RewritePrompt, gen, audit: AuditLog | None = None) -> AttackedDocument:
    if prompt.kind == "paraphrase":
        return paraphrase(doc, prompt, gen, audit)
    return summarize_prepend(doc, prompt, gen, audit)


class RewritePilotError(RankAttackError):
    """Pilot aborted; carries MRC for the prompts that completed."""

    def __init__(self, message: str, partial: dict[str, float]):
        super().__init__(message)
        self.partial = partial


def select_prompt(
    candidates: Sequence[RewritePrompt],
    pilot_pairs: Sequence[tuple[Query, Document]],
    gen,
    contexts: Mapping[str, RankContext],
    audit: AuditLog | None = None,
) -> RewritePrompt:
    """Pick the candidate prompt with the highest MRC over the pilot pairs.

    Every pilot document is rewritten under every candidate and re-ranked
    in its query's context. Ties break by prompt_id order. A scorer or
    generator failure aborts with the per-prompt MRCs gathered so far.
    """
    if not candidates:
        raise ValueError("no candidate prompts")
    if not pilot_pairs:
        raise ValueError("empty pilot set")
    mrc_by_prompt: dict[str, float] = {}
    for prompt in candidates:
        deltas = []
        for query, doc in pilot_pairs:
            ctx = contexts[query.query_id]
            try:
                attacked = apply_rewrite(doc, prompt, gen, audit)
                rank_after = ctx.rank_of_variant(doc.doc_id, attacked.text)
            except (ScorerError, GeneratorError) as e:
                raise RewritePilotError(
                    f"pilot aborted at prompt {prompt.prompt_id!r}, "
                    f"pair ({query.query_id!r}, {doc.doc_id!r}): {e}",
                    partial=dict(mrc_by_prompt),
                ) from e
            deltas.append(
                PairDelta(query.query_id, doc.doc_id, ctx.original_rank(doc.doc_id), rank_after)
            )
        mrc_by_prompt[prompt.prompt_id] = mean_rank_change(deltas)
    best_id = min(mrc_by_prompt, key=lambda pid: (-mrc_by_prompt[pid], pid))
    return next(p for p in candidates if p.prompt_id == best_id)


def rewrite_many(
    docs: Sequence[Document],
    prompt: RewritePrompt,
    gen,
    audit: AuditLog | None = None,
    max_in_flight: int = 1,
    retries: int = 2,
) -> list[AttackedDocument]:
    """Rewrite a batch with bounded concurrency; output ordered by input.

    Retryable generator failures are re-attempted up to ``retries`` times.
    """

    def _one(doc: Document) -> AttackedDocument:
        attempt = 0
        while True:
            try:
                return apply_rewrite(doc, prompt, gen, audit)
            except GeneratorError as e:
                attempt += 1
                if not e.retryable or attempt > retries:
                    raise

    if max_in_flight <= 1:
        return [_one(d) for d in docs]
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return list(pool.map(_one, docs))
