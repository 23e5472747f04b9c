"""Corpus, topics, qrels, and run file I/O in TREC/MSMARCO conventions.

Formats:
- Collection: TSV ``doc_id<TAB>text``, UTF-8, LF line endings.
- Topics: TSV ``query_id<TAB>text``.
- Qrels: whitespace-separated 4-column ``qid 0 docid grade``.
- Runs: 6-column ``qid Q0 docid rank score tag``, space-separated.

All parsers skip leading lines starting with ``#`` (the headers our own
writers embed) and report errors with a source name and line number.
Stores and tables are immutable after construction and safe to share
across threads.
"""

from __future__ import annotations

import io
import mmap
import os
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

from .errors import DataFormatError, DuplicateIdError


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str


@dataclass(frozen=True)
class Query:
    query_id: str
    text: str


@dataclass(frozen=True)
class QrelRecord:
    query_id: str
    doc_id: str
    grade: int


@dataclass(frozen=True)
class RunEntry:
    query_id: str
    doc_id: str
    rank: int
    score: float
    tag: str


def _iter_data_lines(lines: Iterable[str], source: str) -> Iterator[tuple[int, str]]:
    """Yield (line_no, line) minus trailing newline, skipping leading '#' headers."""
    in_header = True
    for i, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if in_header and line.startswith("#"):
            continue
        in_header = False
        if not line.strip():
            continue
        yield i, line


class DocumentStore:
    """Read-only mapping from doc_id to Document.

    Two implementations share this contract: fully in-memory, and on-disk
    with an offset index for corpora exceeding memory.
    """

    def get(self, doc_id: str) -> Document:
        raise NotImplementedError

    def __contains__(self, doc_id: str) -> bool:
        raise NotImplementedError

    def __len__(self) -> int:
        raise NotImplementedError

    def ids(self) -> Iterator[str]:
        raise NotImplementedError

    def __iter__(self) -> Iterator[Document]:
        for doc_id in self.ids():
            yield self.get(doc_id)


class InMemoryDocumentStore(DocumentStore):
    def __init__(self, docs: dict[str, str]):
        self._docs = docs

    def get(self, doc_id: str) -> Document:
        try:
            return Document(doc_id, self._docs[doc_id])
        except KeyError:
            raise KeyError(f"unknown doc_id: {doc_id!r}") from None

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._docs

    def __len__(self) -> int:
        return len(self._docs)

    def ids(self) -> Iterator[str]:
        return iter(self._docs)


class OnDiskDocumentStore(DocumentStore):
    """Offset-indexed view over a collection TSV; text stays on disk.

    Lookups slice an mmap, so concurrent readers need no locking.
    """

    def __init__(self, path: str | os.PathLike[str]):
        self._path = os.fspath(path)
        self._offsets: dict[str, tuple[int, int]] = {}
        with open(self._path, "rb") as f:
            offset = 0
            in_header = True
            for line_no, raw in enumerate(f, start=1):
                length = len(raw)
                line = raw.rstrip(b"\n").rstrip(b"\r")
                if in_header and line.startswith(b"#"):
                    offset += length
                    continue
                in_header = False
                if line.strip():
                    tab = line.find(b"\t")
                    if tab < 0:
                        raise DataFormatError(
                            f"{self._path}:{line_no}: expected 'doc_id<TAB>text'"
                        )
                    doc_id = line[:tab].decode("utf-8")
                    if not doc_id:
                        raise DataFormatError(f"{self._path}:{line_no}: empty doc_id")
                    if doc_id in self._offsets:
                        raise DuplicateIdError(
                            f"{self._path}:{line_no}: duplicate doc_id {doc_id!r}"
                        )
                    self._offsets[doc_id] = (offset + tab + 1, offset + len(line))
                offset += length
        self._file = open(self._path, "rb")
        if self._offsets:
            self._mmap = mmap.mmap(self._file.fileno(), 0, access=mmap.ACCESS_READ)
        else:
            self._mmap = None

    def get(self, doc_id: str) -> Document:
        try:
            start, end = self._offsets[doc_id]
        except KeyError:
            raise KeyError(f"unknown doc_id: {doc_id!r}") from None
        return Document(doc_id, self._mmap[start:end].decode("utf-8"))

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._offsets

    def __len__(self) -> int:
        return len(self._offsets)

    def ids(self) -> Iterator[str]:
        return iter(self._offsets)

    def close(self) -> None:
        if self._mmap is not None:
            self._mmap.close()
        self._file.close()


def parse_collection(lines: Iterable[str], source: str = "<collection>") -> InMemoryDocumentStore:
    """Parse ``doc_id<TAB>text`` lines into an in-memory store.

    Duplicate ids and lines without a TAB are hard errors. Text is kept
    verbatim (no normalization) so attacks see the raw passage.
    """
    docs: dict[str, str] = {}
    for line_no, line in _iter_data_lines(lines, source):
        tab = line.find("\t")
        if tab < 0:
            raise DataFormatError(f"{source}:{line_no}: expected 'doc_id<TAB>text'")
        doc_id, text = line[:tab], line[tab + 1 :]
        if not doc_id:
            raise DataFormatError(f"{source}:{line_no}: empty doc_id")
        if doc_id in docs:
            raise DuplicateIdError(f"{source}:{line_no}: duplicate doc_id {doc_id!r}")
        docs[doc_id] = text
    return InMemoryDocumentStore(docs)


def load_collection(path: str | os.PathLike[str], on_disk: bool = False) -> DocumentStore:
    if on_disk:
        return OnDiskDocumentStore(path)
    with open(path, encoding="utf-8") as f:
        return parse_collection(f, source=os.fspath(path))


def parse_topics(lines: Iterable[str], source: str = "<topics>") -> list[Query]:
    """Parse ``query_id<TAB>text`` lines; ids must be unique."""
    queries: list[Query] = []
    seen: set[str] = set()
    for line_no, line in _iter_data_lines(lines, source):
        tab = line.find("\t")
        if tab < 0:
            raise DataFormatError(f"{source}:{line_no}: expected 'query_id<TAB>text'")
        query_id, text = line[:tab], line[tab + 1 :]
        if not query_id:
            raise DataFormatError(f"{source}:{line_no}: empty query_id")
        if query_id in seen:
            raise DuplicateIdError(f"{source}:{line_no}: duplicate query_id {query_id!r}")
        seen.add(query_id)
        queries.append(Query(query_id, text))
    return queries


def load_topics(path: str | os.PathLike[str]) -> list[Query]:
    with open(path, encoding="utf-8") as f:
        return parse_topics(f, source=os.fspath(path))


class QrelsTable:
    """Graded relevance judgments keyed by (query_id, doc_id).

    ``lookup`` returns None for unjudged pairs, which is distinct from an
    explicit grade of 0.
    """

    def __init__(self, records: Sequence[QrelRecord]):
        self._by_query: dict[str, dict[str, int]] = {}
        for rec in records:
            self._by_query.setdefault(rec.query_id, {})[rec.doc_id] = rec.grade

    def lookup(self, query_id: str, doc_id: str) -> int | None:
        return self._by_query.get(query_id, {}).get(doc_id)

    def judged(self, query_id: str) -> dict[str, int]:
        """All judgments for one query; empty dict if the query is unjudged."""
        return dict(self._by_query.get(query_id, {}))

    def query_ids(self) -> list[str]:
        return list(self._by_query)

    def __len__(self) -> int:
        return sum(len(d) for d in self._by_query.values())


def parse_qrels(lines: Iterable[str], source: str = "<qrels>") -> QrelsTable:
    """Parse 4-column qrels. Conflicting duplicate pairs are errors;
    exact duplicates are tolerated (idempotent)."""
    records: list[QrelRecord] = []
    seen: dict[tuple[str, str], int] = {}
    for line_no, line in _iter_data_lines(lines, source):
        parts = line.split()
        if len(parts) != 4:
            raise DataFormatError(
                f"{source}:{line_no}: expected 4 columns 'qid 0 docid grade', got {len(parts)}"
            )
        qid, _, docid, grade_str = parts
        try:
            grade = int(grade_str)
        except ValueError:
            raise DataFormatError(
                f"{source}:{line_no}: non-integer grade {grade_str!r}"
            ) from None
        if grade < 0:
            raise DataFormatError(f"{source}:{line_no}: negative grade {grade}")
        key = (qid, docid)
        if key in seen:
            if seen[key] != grade:
                raise DataFormatError(
                    f"{source}:{line_no}: conflicting grades for pair {key}: "
                    f"{seen[key]} vs {grade}"
                )
            continue
        seen[key] = grade
        records.append(QrelRecord(qid, docid, grade))
    return QrelsTable(records)


def load_qrels(path: str | os.PathLike[str]) -> QrelsTable:
    with open(path, encoding="utf-8") as f:
        return parse_qrels(f, source=os.fspath(path))


def parse_run(lines: Iterable[str], source: str = "<run>") -> list[RunEntry]:
    """Parse a 6-column TREC run, preserving entry order."""
    entries: list[RunEntry] = []
    for line_no, line in _iter_data_lines(lines, source):
        parts = line.split()
        if len(parts) != 6:
            raise DataFormatError(
                f"{source}:{line_no}: expected 6 columns 'qid Q0 docid rank score tag', "
                f"got {len(parts)}"
            )
        qid, _, docid, rank_str, score_str, tag = parts
        try:
            rank = int(rank_str)
        except ValueError:
            raise DataFormatError(f"{source}:{line_no}: non-integer rank {rank_str!r}") from None
        try:
            score = float(score_str)
        except ValueError:
            raise DataFormatError(f"{source}:{line_no}: non-numeric score {score_str!r}") from None
        entries.append(RunEntry(qid, docid, rank, score, tag))
    return entries


def load_run(path: str | os.PathLike[str]) -> list[RunEntry]:
    with open(path, encoding="utf-8") as f:
        return parse_run(f, source=os.fspath(path))


def validate_run(entries: Sequence[RunEntry]) -> None:
    """Check per-query invariants: ranks 1..k without gaps, scores non-increasing."""
    by_query: dict[str, list[RunEntry]] = {}
    for e in entries:
        by_query.setdefault(e.query_id, []).append(e)
    for qid, group in by_query.items():
        group = sorted(group, key=lambda e: e.rank)
        for i, e in enumerate(group, start=1):
            if e.rank != i:
                raise DataFormatError(
                    f"run invariant violated for query {qid!r}: "
                    f"expected rank {i}, found {e.rank}"
                )
        for a, b in zip(group, group[1:]):
            if b.score > a.score:
                raise DataFormatError(
                    f"run invariant violated for query {qid!r}: "
                    f"score inversion at rank {b.rank}"
                )


def write_run(entries: Sequence[RunEntry], out: io.TextIOBase, header: Sequence[str] = ()) -> None:
    """Write entries in 6-column TREC format after validating invariants."""
    validate_run(entries)
    for line in header:
        out.write(f"# {line}\n")
    for e in entries:
        # repr() keeps the shortest round-trip form so parse(write(x)) == x
        out.write(f"{e.query_id} Q0 {e.doc_id} {e.rank} {e.score!r} {e.tag}\n")


def group_run_by_query(entries: Sequence[RunEntry]) -> dict[str, list[RunEntry]]:
    """Group entries per query, ordered by rank within each query."""
    grouped: dict[str, list[RunEntry]] = {}
    for e in entries:
        grouped.setdefault(e.query_id, []).append(e)
    for qid in grouped:
        grouped[qid].sort(key=lambda e: e.rank)
    return grouped
