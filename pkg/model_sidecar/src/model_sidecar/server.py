"""Console entry point: parse flags, build the app, serve it."""

from __future__ import annotations

import argparse
import logging
import sys

from .app import create_app
from .config import BACKENDS, SidecarConfig
from .errors import SidecarError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="model-sidecar",
        description="inference sidecar for embedding, fill, and tagging requests",
    )
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8791)
    parser.add_argument("--backend", choices=BACKENDS, default="auto")
    parser.add_argument("--max-batch", dest="max_batch", type=int, default=128)
    parser.add_argument(
        "--model",
        action="append",
        default=[],
        metavar="CAPABILITY=ID",
        help="override the checkpoint for one capability (repeatable)",
    )
    return parser


def parse_config(argv: list[str] | None = None) -> SidecarConfig:
    args = build_parser().parse_args(argv)
    model_ids = {}
    for override in args.model:
        capability, sep, model_id = override.partition("=")
        if not sep or not model_id:
            raise SidecarError(f"--model expects CAPABILITY=ID, got {override!r}")
        model_ids[capability] = model_id
    return SidecarConfig(
        host=args.host,
        port=args.port,
        backend=args.backend,
        max_batch=args.max_batch,
        model_ids=model_ids,
    )


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level="INFO", format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )
    try:
        config = parse_config(argv)
        app = create_app(config)
    except SidecarError as exc:
        print(f"model-sidecar: {exc}", file=sys.stderr)
        return 1
    import uvicorn

    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
    return 0


if __name__ == "__main__":
    sys.exit(main())
