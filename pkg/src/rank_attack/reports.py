"""Report emission: machine-readable CSV plus aligned text tables.

Per-attack cells use the compact notation ``+12.8*_{50, s, 5}``: mean
rank change with significance star, then subscripts success rate (as a
percentage), position code, and repetition count. ``parse_cell`` inverts
``format_cell`` exactly.

Every file starts with '# ' comment lines carrying the experiment
fingerprint (tool version, config/lexicon hashes, seed, Bonferroni
factor); identical headers imply identical bodies.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from . import __version__
from .bounds import BoundsRow

_CELL_RE = re.compile(
    r"^(?P<mrc>[+-]\d+(?:\.\d+)?)(?P<sig>\*?)_\{(?P<sr>\d+(?:\.\d+)?), (?P<pos>[ser]), (?P<n>\d+)\}$"
)


@dataclass(frozen=True)
class CellValue:
    mrc: float
    sr_pct: float
    pos: str
    n: int
    significant: bool


def format_cell(mrc: float, sr: float, pos: str, n: int, significant: bool) -> str:
    """``sr`` is a fraction in [0, 1]; rendered as an integer percentage."""
    star = "*" if significant else ""
    return f"{mrc:+.1f}{star}_{{{round(sr * 100):g}, {pos}, {n}}}"


def parse_cell(cell: str) -> CellValue:
    m = _CELL_RE.match(cell.strip())
    if m is None:
        raise ValueError(f"unparseable report cell {cell!r}")
    return CellValue(
        mrc=float(m.group("mrc")),
        sr_pct=float(m.group("sr")),
        pos=m.group("pos"),
        n=int(m.group("n")),
        significant=bool(m.group("sig")),
    )


def standard_header(
    config_hash: str, seed: int | None, lexicon_hash: str, extra: Mapping[str, object] = {}
) -> list[str]:
    lines = [
        f"rank-attack v{__version__}",
        f"config_hash: {config_hash}",
        f"seed: {seed}",
        f"lexicon_hash: {lexicon_hash}",
    ]
    lines.extend(f"{k}: {v}" for k, v in extra.items())
    return lines


EVAL_COLUMNS = [
    "spec_id", "token", "category", "position", "n",
    "mrc", "sr", "t", "p", "significant", "zero_variance",
]


def write_eval_csv(rows: Sequence[Mapping[str, object]], out: io.TextIOBase,
                   header: Sequence[str] = ()) -> None:
    for line in header:
        out.write(f"# {line}\n")
    writer = csv.DictWriter(out, fieldnames=EVAL_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row.get(k, "") for k in EVAL_COLUMNS})


def read_eval_csv(lines: Iterable[str]) -> list[dict[str, str]]:
    data = [ln for ln in lines if not ln.startswith("#")]
    return list(csv.DictReader(data))


def _align(rows: Sequence[Sequence[str]]) -> str:
    if not rows:
        return ""
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    return "\n".join(lines) + "\n"


def render_eval_text(rows: Sequence[Mapping[str, object]], header: Sequence[str] = ()) -> str:
    table = [["token", "category", "position", "n", "MRC", "SR", "significant"]]
    for r in rows:
        table.append([
            str(r["token"]), str(r["category"]), str(r["position"]), str(r["n"]),
            f"{float(r['mrc']):+.2f}", f"{float(r['sr']):.3f}",
            "yes" if str(r["significant"]).lower() in ("true", "yes", "1") else "no",
        ])
    head = "".join(f"# {line}\n" for line in header)
    return head + _align(table)


def best_config_rows(rows: Sequence[Mapping[str, object]]) -> list[dict[str, object]]:
    """Per token, the grid configuration with the highest MRC (spec_id breaks
    ties). Identity and rewrite rows have no grid cell and are skipped."""
    best: dict[str, Mapping[str, object]] = {}
    for r in rows:
        if str(r["position"]) not in ("start", "end", "random"):
            continue
        token = str(r["token"])
        cur = best.get(token)
        if cur is None or (-float(r["mrc"]), str(r["spec_id"])) < (-float(cur["mrc"]), str(cur["spec_id"])):
            best[token] = r
    out = []
    for token, r in best.items():
        out.append({
            "token": token,
            "category": r["category"],
            "cell": format_cell(
                float(r["mrc"]), float(r["sr"]),
                {"start": "s", "end": "e", "random": "r"}[str(r["position"])],
                int(r["n"]),
                str(r["significant"]).lower() in ("true", "yes", "1"),
            ),
        })
    out.sort(key=lambda r: (str(r["category"]), str(r["token"])))
    return out


def render_token_summary(rows: Sequence[Mapping[str, object]], header: Sequence[str] = ()) -> str:
    table = [["token", "category", "best"]]
    for r in best_config_rows(rows):
        table.append([str(r["token"]), str(r["category"]), str(r["cell"])])
    head = "".join(f"# {line}\n" for line in header)
    return head + _align(table)


def _bound_cell(value: float, significant: bool) -> str:
    return f"{value:.4f}" + ("†" if significant else "")


def render_bounds_text(row: BoundsRow, header: Sequence[str] = ()) -> str:
    """Worst/original/best effectiveness table; daggers mark significance
    against the original ranking after Bonferroni correction."""
    table = [[
        "scorer",
        "worst nDCG@10", "orig nDCG@10", "best nDCG@10",
        "worst P@10", "orig P@10", "best P@10",
    ]]
    cells = [row.scorer_name]
    for kind in ("lower", "original", "upper"):
        res = row.results[kind]
        sig = kind != "original" and row.ndcg_tests[kind].significant
        cells.append(_bound_cell(res.mean_ndcg(), sig))
    for kind in ("lower", "original", "upper"):
        res = row.results[kind]
        sig = kind != "original" and row.p10_tests[kind].significant
        cells.append(_bound_cell(res.mean_p10(), sig))
    table.append([cells[0], cells[1], cells[2], cells[3], cells[4], cells[5], cells[6]])
    head = "".join(f"# {line}\n" for line in header)
    return head + _align(table)


BOUNDS_COLUMNS = [
    "scorer", "scenario", "ndcg_at_10", "p_at_10",
    "ndcg_p", "ndcg_significant", "p10_p", "p10_significant", "flags",
]


def write_bounds_csv(row: BoundsRow, out: io.TextIOBase, header: Sequence[str] = ()) -> None:
    for line in header:
        out.write(f"# {line}\n")
    writer = csv.DictWriter(out, fieldnames=BOUNDS_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for kind in ("lower", "original", "upper"):
        res = row.results[kind]
        ndcg_test = row.ndcg_tests.get(kind)
        p10_test = row.p10_tests.get(kind)
        writer.writerow({
            "scorer": row.scorer_name,
            "scenario": {"lower": "worst", "original": "original", "upper": "best"}[kind],
            "ndcg_at_10": f"{res.mean_ndcg():.10g}",
            "p_at_10": f"{res.mean_p10():.10g}",
            "ndcg_p": "" if ndcg_test is None or ndcg_test.zero_variance else f"{ndcg_test.p:.6g}",
            "ndcg_significant": bool(ndcg_test and ndcg_test.significant),
            "p10_p": "" if p10_test is None or p10_test.zero_variance else f"{p10_test.p:.6g}",
            "p10_significant": bool(p10_test and p10_test.significant),
            "flags": "; ".join(res.flags),
        })
