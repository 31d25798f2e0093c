"""Sidecar commands: train a descriptor encoder, then serve it."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .catalog import TrainDataError
from .train import TrainConfig, finetune


def cmd_train(args: argparse.Namespace) -> int:
    config = TrainConfig(
        base_model=args.base_model,
        max_seq_len=args.max_seq_len,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        seed=args.seed,
        mixed_precision=not args.no_mixed_precision,
    )
    summary = finetune(args.catalog, config, args.out)
    print(
        f"train: {len(summary.step_losses)} steps, "
        f"final loss {summary.final_loss:.6f}, artifact at {summary.artifact_dir}"
    )
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    from .serve import serve

    serve(args.artifact, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="encoder-sidecar",
        description="Fine-tune and serve a descriptor embedding encoder.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="contrastively fine-tune on a catalog export")
    tr.add_argument("--catalog", type=Path, required=True)
    tr.add_argument("--out", type=Path, required=True)
    defaults = TrainConfig()
    tr.add_argument("--base-model", default=defaults.base_model)
    tr.add_argument("--max-seq-len", type=int, default=defaults.max_seq_len)
    tr.add_argument("--epochs", type=int, default=defaults.epochs)
    tr.add_argument("--batch-size", type=int, default=defaults.batch_size)
    tr.add_argument("--learning-rate", type=float, default=defaults.learning_rate)
    tr.add_argument("--seed", type=int, default=defaults.seed)
    tr.add_argument("--no-mixed-precision", action="store_true")
    tr.set_defaults(func=cmd_train)

    sv = sub.add_parser("serve", help="serve a trained artifact over HTTP")
    sv.add_argument("--artifact", type=Path, required=True)
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8901)
    sv.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TrainDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
