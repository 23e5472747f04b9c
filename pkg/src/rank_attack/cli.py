"""Command line entry point.

Subcommands: attack, rerank, evaluate, bounds, rewrite, report, plus the
scorer-check diagnostic that fuzzes an external scorer endpoint for
protocol conformance. Exit codes: 0 success, 1 usage, 2 data error,
3 scorer/transport error.
"""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .config import ENV_CONFIG, load_config
from .errors import DataFormatError, GeneratorError, ScorerError, UsageError
from .wire import HttpScorerTransport, SubprocessScorerTransport, conformance_check


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems must exit 1, not argparse's 2
        raise UsageError(message)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help=f"config file path (or ${ENV_CONFIG})")
    p.add_argument("--collection")
    p.add_argument("--topics")
    p.add_argument("--qrels")
    p.add_argument("--run")
    p.add_argument("--lexicon")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--rerank-depth", dest="rerank_depth", type=int)


def _config_from(args: argparse.Namespace):
    overrides = {
        key: getattr(args, key, None)
        for key in ("collection", "topics", "qrels", "run", "lexicon",
                    "seed", "workers", "out_dir", "rerank_depth")
    }
    return load_config(args.config, overrides)


def build_parser() -> _Parser:
    parser = _Parser(prog="rank-attack", description=__doc__)
    parser.add_argument("--version", action="version", version=f"rank-attack {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in [
        ("attack", "generate the attacked corpus for every (run doc, grid spec)"),
        ("rerank", "re-rank the run with the configured scorer"),
        ("evaluate", "compute per-spec SR/MRC with significance from the attacked corpus"),
        ("bounds", "compute worst/original/best effectiveness bounds"),
        ("rewrite", "rewrite run documents through a text generator"),
    ]:
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name == "evaluate":
            p.add_argument("--attacked", help="attacked corpus path (default: <out_dir>/attacked.tsv)")

    p = sub.add_parser("report", help="re-render text reports from an evaluate CSV")
    _add_common(p)
    p.add_argument("--input", help="evaluate CSV path (default: <out_dir>/evaluate.csv)")

    p = sub.add_parser("scorer-check", help="fuzz an external scorer for protocol conformance")
    p.add_argument("--url", help="HTTP scorer endpoint")
    p.add_argument("--cmd", nargs=argparse.REMAINDER,
                   help="subprocess scorer argv (everything after --cmd)")
    p.add_argument("--requests", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-sizes", type=int, nargs=2, default=(128, 7))
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--any-range", action="store_true",
                   help="do not require scores within [0, 1]")
    return parser


def _cmd_scorer_check(args: argparse.Namespace) -> int:
    if bool(args.url) == bool(args.cmd):
        raise UsageError("scorer-check needs exactly one of --url or --cmd")
    transport = (
        HttpScorerTransport(args.url, args.timeout)
        if args.url
        else SubprocessScorerTransport(args.cmd, args.timeout)
    )
    try:
        report = conformance_check(
            transport,
            n_requests=args.requests,
            seed=args.seed,
            batch_sizes=tuple(args.batch_sizes),
            require_unit_range=not args.any_range,
            tol=args.tolerance,
        )
    finally:
        transport.close()
    print(f"requests: {report.requests}")
    print(f"joined: {report.joined}")
    print(f"unit_range_ok: {report.unit_range_ok}")
    print(f"max_split_delta: {report.max_split_delta:.3g}")
    for failure in report.failures:
        print(f"FAIL: {failure}")
    print("PASS" if report.passed else "FAIL")
    return 0 if report.passed else 3


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "scorer-check":
            return _cmd_scorer_check(args)

        from . import pipeline

        cfg = _config_from(args)
        if args.command == "attack":
            path = pipeline.run_attack(cfg)
            print(path)
        elif args.command == "rerank":
            path = pipeline.run_rerank(cfg)
            print(path)
        elif args.command == "evaluate":
            outputs = pipeline.run_evaluate(cfg, attacked_path=args.attacked)
            for path in outputs.values():
                print(path)
        elif args.command == "bounds":
            outputs = pipeline.run_bounds(cfg)
            for path in outputs.values():
                print(path)
        elif args.command == "rewrite":
            path = pipeline.run_rewrite(cfg)
            print(path)
        elif args.command == "report":
            outputs = pipeline.run_report(cfg, input_csv=args.input)
            for path in outputs.values():
                print(path)
        return 0
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (DataFormatError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except (ScorerError, GeneratorError) as e:
        print(f"scorer error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
