"""Entry points: serve-generation and serve-filter."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .engines import AdapterConfig, StartupError
from .server import AdapterBackend, serve_forever


def _parser(kind: str, default_engine: str, model_flag: str) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=f"serve-{kind}",
        description=f"Serve wire-schema-v1 {kind} requests.",
    )
    parser.add_argument("--engine", default=default_engine)
    parser.add_argument(f"--{model_flag}", dest="model", default=None)
    parser.add_argument("--device", default=None)
    parser.add_argument("--inference-steps", type=int, default=30)
    parser.add_argument("--output-dir", default="generated")
    parser.add_argument("--bind", choices=["tcp", "http"], default="tcp")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=0)
    return parser


def _run(kind: str, args) -> int:
    config = AdapterConfig(
        engine=args.engine,
        inference_steps=args.inference_steps,
        output_dir=Path(args.output_dir),
    )
    if args.device:
        config.device = args.device
    if args.model:
        if kind == "generation":
            config.model_id = args.model
        else:
            config.vlm_id = args.model
    try:
        backend = AdapterBackend(config, kind)
    except StartupError as exc:
        print(f"startup error: {exc}", file=sys.stderr)
        return 1
    serve_forever(backend, args.bind, args.host, args.port)
    return 0


def serve_generation(argv=None) -> int:
    args = _parser("generation", "stub", "model-id").parse_args(argv)
    return _run("generation", args)


def serve_filter(argv=None) -> int:
    args = _parser("filter", "stub", "vlm-id").parse_args(argv)
    return _run("filter", args)


if __name__ == "__main__":
    sys.exit(serve_generation())
