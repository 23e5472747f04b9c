"""Query-independent document attacks: preemption and keyword stuffing.

An attack inserts n copies of a fixed token at the start, the end, or
random word gaps of a document. No query ever reaches this module; the
API enforces the query-independence of the attack model.

Random-position insertions draw gaps uniformly (with replacement, both
ends included) from a per-(seed, doc_id, spec_id) RNG stream, so outputs
are reproducible regardless of execution order or parallel fan-out.
Start/end positions are seed-independent.

Whitespace: inserted tokens are joined to their neighbours with exactly
one space; untouched gaps keep the document's original whitespace. On an
empty document every position degenerates to the bare token sequence.
"""

from __future__ import annotations

import hashlib
import io
import os
import random
import re
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

from .corpus import Document
from .errors import DataFormatError, DuplicateIdError

CATEGORIES = ("prompt", "control", "synonym", "subword")
POSITIONS = ("start", "end", "random")
_POS_CODE = {"start": "s", "end": "e", "random": "r"}

_WORD_RE = re.compile(r"\S+")


@dataclass(frozen=True)
class AttackToken:
    surface: str
    category: str

    def __post_init__(self):
        if not self.surface:
            raise ValueError("token surface must be non-empty")
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown token category {self.category!r}")


def _encode_surface(surface: str) -> str:
    """Injective, filename-safe encoding: alphanumerics kept, the rest hex-escaped."""
    out = []
    for ch in surface:
        if ch.isalnum():
            out.append(ch)
        else:
            out.append(f"_{ord(ch):02x}")
    return "".join(out)


@dataclass(frozen=True)
class AttackSpec:
    token: AttackToken
    position: str
    repetitions: int
    spec_id: str = ""

    def __post_init__(self):
        if self.position not in POSITIONS:
            raise ValueError(f"unknown position {self.position!r}")
        if self.repetitions < 1:
            raise ValueError(f"repetitions must be >= 1, got {self.repetitions}")
        derived = (
            f"{self.token.category}.{_encode_surface(self.token.surface)}"
            f".{_POS_CODE[self.position]}{self.repetitions}"
        )
        if self.spec_id and self.spec_id != derived:
            raise ValueError(f"spec_id {self.spec_id!r} does not match fields ({derived!r})")
        object.__setattr__(self, "spec_id", derived)


@dataclass(frozen=True)
class IdentitySpec:
    """No-op attack; always sorts before real specs in tie-breaks."""

    spec_id: str = "identity"


@dataclass(frozen=True)
class AttackedDocument:
    source_doc_id: str
    spec_id: str
    text: str


_HEX_ESCAPE = re.compile(r"_([0-9a-f]{2})")
_CODE_POS = {"s": "start", "e": "end", "r": "random"}


def decode_spec_id(spec_id: str) -> dict[str, object]:
    """Recover display fields from a spec_id.

    Injection ids decode fully (category, surface, position, n); the
    identity and rewrite families carry no grid coordinates.
    """
    if spec_id == "identity":
        return {"token": "", "category": "identity", "position": "", "n": 0}
    if spec_id.startswith("rewrite."):
        return {"token": spec_id, "category": "rewrite", "position": "", "n": 0}
    try:
        category, encoded, tail = spec_id.split(".")
        position = _CODE_POS[tail[0]]
        n = int(tail[1:])
        surface = _HEX_ESCAPE.sub(lambda m: chr(int(m.group(1), 16)), encoded)
    except (ValueError, KeyError, IndexError):
        raise DataFormatError(f"unparseable spec_id {spec_id!r}") from None
    if category not in CATEGORIES:
        raise DataFormatError(f"unparseable spec_id {spec_id!r}")
    return {"token": surface, "category": category, "position": position, "n": n}


def _pair_rng(seed: int, doc_id: str, spec_id: str) -> random.Random:
    material = f"{seed}\x1f{doc_id}\x1f{spec_id}".encode("utf-8")
    digest = hashlib.blake2b(material, digest_size=8).digest()
    return random.Random(int.from_bytes(digest, "big"))


def _insert_at_gaps(text: str, token: str, gap_counts: dict[int, int]) -> str:
    """Insert tokens at word gaps; gap i sits before word i, gap m after the last."""
    words = list(_WORD_RE.finditer(text))
    m = len(words)
    if m == 0:
        n = sum(gap_counts.values())
        return " ".join([token] * n)
    pieces: list[str] = []
    for g in range(m + 1):
        count = gap_counts.get(g, 0)
        if g == 0:
            gap_ws = text[: words[0].start()]
        elif g == m:
            gap_ws = text[words[m - 1].end():]
        else:
            gap_ws = text[words[g - 1].end(): words[g].start()]
        if count:
            ins = " ".join([token] * count)
            if g == 0:
                pieces.append(ins + " ")
            elif g == m:
                pieces.append(" " + ins)
            else:
                pieces.append(" " + ins + " ")
        else:
            pieces.append(gap_ws)
        if g < m:
            pieces.append(text[words[g].start(): words[g].end()])
    return "".join(pieces)


def inject(doc: Document, spec: AttackSpec, seed: int | None = None) -> AttackedDocument:
    """Produce the attacked variant of ``doc`` under ``spec``.

    ``seed`` is required only for random-position specs; it is combined
    with (doc_id, spec_id) into an isolated RNG stream.
    """
    token, n = spec.token.surface, spec.repetitions
    text = doc.text
    if spec.position == "start":
        attacked = ((token + " ") * n + text) if text else " ".join([token] * n)
    elif spec.position == "end":
        attacked = (text + (" " + token) * n) if text else " ".join([token] * n)
    else:
        if seed is None:
            raise ValueError("random-position injection requires a seed")
        rng = _pair_rng(seed, doc.doc_id, spec.spec_id)
        n_gaps = len(_WORD_RE.findall(text)) + 1
        gap_counts: dict[int, int] = {}
        for _ in range(n):
            g = rng.randrange(n_gaps)
            gap_counts[g] = gap_counts.get(g, 0) + 1
        attacked = _insert_at_gaps(text, token, gap_counts)
    return AttackedDocument(doc.doc_id, spec.spec_id, attacked)


def apply_spec(doc: Document, spec: AttackSpec | IdentitySpec, seed: int | None = None) -> AttackedDocument:
    if isinstance(spec, IdentitySpec):
        return AttackedDocument(doc.doc_id, spec.spec_id, doc.text)
    return inject(doc, spec, seed)


def build_grid(
    lexicon: Sequence[AttackToken],
    positions: Sequence[str] = POSITIONS,
    rep_range: Iterable[int] = range(1, 6),
) -> list[AttackSpec]:
    """Cartesian product lexicon x positions x repetitions, in that order."""
    if not lexicon:
        raise ValueError("lexicon must be non-empty")
    reps = list(rep_range)
    specs = [
        AttackSpec(token, pos, n)
        for token in lexicon
        for pos in positions
        for n in reps
    ]
    seen: set[str] = set()
    for s in specs:
        if s.spec_id in seen:
            raise DuplicateIdError(f"duplicate spec_id in grid: {s.spec_id!r}")
        seen.add(s.spec_id)
    return specs


def default_lexicon() -> list[AttackToken]:
    """The 21-token default: 5 prompt, 7 control, 5 synonym, 4 sub-word."""
    prompt = ["true", "false", "relevant:", "relevant: true", "relevant: false"]
    control = ["bar", "baz", "information:", "information: bar",
               "information: baz", "relevant: bar", "information: true"]
    synonym = ["pertinent", "significant", "related", "associated", "important"]
    subword = ["relevancy", "relevance", "relevantly", "irrelevant"]
    lex = [AttackToken(s, "prompt") for s in prompt]
    lex += [AttackToken(s, "control") for s in control]
    lex += [AttackToken(s, "synonym") for s in synonym]
    lex += [AttackToken(s, "subword") for s in subword]
    return lex


def parse_lexicon(lines: Iterable[str], source: str = "<lexicon>") -> list[AttackToken]:
    """Parse ``category<TAB>surface`` lines."""
    tokens: list[AttackToken] = []
    seen: set[str] = set()
    for line_no, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip() or line.startswith("#"):
            continue
        tab = line.find("\t")
        if tab < 0:
            raise DataFormatError(f"{source}:{line_no}: expected 'category<TAB>surface'")
        category, surface = line[:tab], line[tab + 1 :]
        if category not in CATEGORIES:
            raise DataFormatError(f"{source}:{line_no}: unknown category {category!r}")
        if not surface:
            raise DataFormatError(f"{source}:{line_no}: empty token surface")
        if surface in seen:
            raise DuplicateIdError(f"{source}:{line_no}: duplicate surface {surface!r}")
        seen.add(surface)
        tokens.append(AttackToken(surface, category))
    return tokens


def load_lexicon(path: str | os.PathLike[str]) -> list[AttackToken]:
    with open(path, encoding="utf-8") as f:
        return parse_lexicon(f, source=os.fspath(path))


def write_lexicon(tokens: Sequence[AttackToken], out: io.TextIOBase) -> None:
    for t in tokens:
        out.write(f"{t.category}\t{t.surface}\n")


def write_attacked_tsv(
    rows: Iterable[AttackedDocument], out: io.TextIOBase, header: Sequence[str] = ()
) -> None:
    for line in header:
        out.write(f"# {line}\n")
    for row in rows:
        out.write(f"{row.source_doc_id}\t{row.spec_id}\t{row.text}\n")


def parse_attacked_tsv(lines: Iterable[str], source: str = "<attacked>") -> Iterator[AttackedDocument]:
    in_header = True
    for line_no, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if in_header and line.startswith("#"):
            continue
        in_header = False
        if not line.strip():
            continue
        parts = line.split("\t", 2)
        if len(parts) != 3:
            raise DataFormatError(
                f"{source}:{line_no}: expected 'source_doc_id<TAB>spec_id<TAB>text'"
            )
        yield AttackedDocument(parts[0], parts[1], parts[2])
