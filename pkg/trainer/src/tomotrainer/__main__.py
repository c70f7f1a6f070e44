"""Entry points: ``python -m tomotrainer train ...`` and ``... serve <ckpt>``."""

import argparse
import sys
from pathlib import Path

from .serving import serve
from .training import TrainConfig, train


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="tomotrainer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the toy conditional noise predictor")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--uncond-prob", type=float, default=0.2)
    p.add_argument("--schedule", choices=("cosine", "linear"), default="cosine")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--base-channels", type=int, default=32)

    p = sub.add_parser("serve", help="speak TDNZ0001 on stdin/stdout")
    p.add_argument("checkpoint", type=Path)

    args = parser.parse_args(argv)
    if args.command == "serve":
        return serve(args.checkpoint)

    cfg = TrainConfig(
        manifest=args.manifest,
        checkpoint=args.checkpoint,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        uncond_prob=args.uncond_prob,
        schedule=args.schedule,
        seed=args.seed,
        base_channels=args.base_channels,
    )
    result = train(cfg)
    print(
        f"trained {len(result.losses)} steps: eval loss "
        f"{result.eval_before:.4f} -> {result.eval_after:.4f}; "
        f"unconditional {result.n_uncond}/{result.n_total}; "
        f"checkpoint {result.checkpoint}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
