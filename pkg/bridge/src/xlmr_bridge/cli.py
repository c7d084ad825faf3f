"""Command line: ``xlmr-bridge serve ...`` and ``xlmr-bridge finetune ...``."""

from __future__ import annotations

import argparse
import sys

from .finetune import DEFAULT_BASE_MODEL, DEFAULT_EPOCHS, DEFAULT_LR, FinetuneConfig, finetune
from .server import BridgeConfig, serve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xlmr-bridge")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="answer scorer protocol requests")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--model", help="checkpoint directory or hub identifier")
    group.add_argument("--stub", type=float, default=None,
                       help="serve this constant probability, no model loaded")
    p.add_argument("--transport", choices=["stdio", "tcp"], default="stdio")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--scorer-id", default="xlmr-ft")
    p.add_argument("--max-tokens", type=int, default=512)
    p.add_argument("--device", default="cpu")

    p = sub.add_parser("finetune", help="fine-tune a classifier on labeled segments")
    p.add_argument("--segments", required=True, help="segment JSONL from `segvote segment`")
    p.add_argument("--corpus", required=True, help="gold corpus JSONL with labels")
    p.add_argument("--out", required=True, help="output checkpoint directory")
    p.add_argument("--base-model", default=DEFAULT_BASE_MODEL)
    p.add_argument("--epochs", type=int, default=DEFAULT_EPOCHS)
    p.add_argument("--lr", type=float, default=DEFAULT_LR)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--max-tokens", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--device", default="cpu")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0

    if args.command == "serve":
        try:
            config = BridgeConfig(
                model=args.model,
                stub=args.stub,
                transport=args.transport,
                host=args.host,
                port=args.port,
                scorer_id=args.scorer_id,
                max_tokens=args.max_tokens,
                device=args.device,
            )
        except ValueError as exc:
            print(f"xlmr-bridge: {exc}", file=sys.stderr)
            return 2
        return serve(config)

    config = FinetuneConfig(
        segments=args.segments,
        corpus=args.corpus,
        out=args.out,
        base_model=args.base_model,
        epochs=args.epochs,
        lr=args.lr,
        batch_size=args.batch_size,
        max_tokens=args.max_tokens,
        seed=args.seed,
        device=args.device,
    )
    try:
        finetune(config)
    except (OSError, ValueError) as exc:
        print(f"xlmr-bridge: error: {exc}", file=sys.stderr)
        return 1
    return 0


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
