"""CLI: ``python -m sidecar serve|selfcheck``."""

from __future__ import annotations

import argparse
import logging
import sys

from .models import PromptTemplate, load_model
from .selfcheck import format_report, run_selfcheck
from .server import ScoringEngine, serve_http, serve_stdio


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", default="toy:",
                   help="model descriptor: toy: or hf:<name-or-path>")
    p.add_argument("--template", default="Query: {query} Document: {document} Relevant:")
    p.add_argument("--positive-token", default="true")
    p.add_argument("--negative-token", default="false")
    p.add_argument("--max-length", type=int, default=512)
    p.add_argument("--device", default="cpu")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sidecar", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the scorer server")
    _add_model_args(p)
    p.add_argument("--transport", choices=("stdio", "http"), default="stdio")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8310)
    p.add_argument("--batch-size", type=int, default=16)

    p = sub.add_parser("selfcheck", help="score the four-row attack illustration")
    _add_model_args(p)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="sidecar: %(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    template = PromptTemplate(args.template, args.positive_token, args.negative_token)
    model = load_model(args.model, template, args.max_length, args.device)

    if args.command == "selfcheck":
        rows = run_selfcheck(model)
        sys.stdout.write(format_report(rows))
        return 0

    engine = ScoringEngine(model, batch_size=args.batch_size)
    worst = engine.selftest()
    logging.getLogger("sidecar").info("startup self-test: max batch delta %.3g", worst)
    if args.transport == "stdio":
        serve_stdio(engine)
    else:
        serve_http(engine, args.host, args.port)
    return 0


if __name__ == "__main__":
    sys.exit(main())
