"""Command line for training, prediction, and cross-validation.

Subcommands: ``train-seg``, ``train-reg``, ``predict``, ``cv``. All file
interchange (manifests, images, masks, prediction CSVs) follows the dataset
toolkit's formats, so its ``eval seg`` / ``eval psi`` subcommands consume
the outputs directly.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .data import REGRESSION, SEGMENTATION
from .predict import cross_validate, predict
from .train import TrainConfig, train


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory (checkpoint + log)")
    p.add_argument("--held-out-fold", type=int, default=None,
                   help="fold to exclude from training (default: train on all)")
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--base-channels", type=int, default=32, help="segmenter width")
    p.add_argument("--input-size", type=int, default=256)


def _config(args, task: str) -> TrainConfig:
    return TrainConfig(
        task=task,
        manifest=Path(args.manifest),
        out_dir=Path(args.out),
        held_out_fold=args.held_out_fold,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
        mask_source=getattr(args, "mask_source", "gt"),
        pred_mask_dir=Path(args.pred_mask_dir) if getattr(args, "pred_mask_dir", None) else None,
        base_channels=args.base_channels,
        input_size=args.input_size,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drrtrain", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="cmd", required=True)

    ts = sub.add_parser("train-seg", help="train the pelvis segmenter")
    _train_flags(ts)
    ts.set_defaults(task=SEGMENTATION)

    tr = sub.add_parser("train-reg", help="train the PSI regressor")
    _train_flags(tr)
    tr.add_argument("--mask-source", choices=("gt", "pred", "none"), default="gt",
                    help="pelvis extraction mask for the regressor input")
    tr.add_argument("--pred-mask-dir", default=None,
                    help="directory of predicted masks (with --mask-source pred)")
    tr.set_defaults(task=REGRESSION)

    pr = sub.add_parser("predict", help="predict a held-out fold from a checkpoint")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--manifest", required=True)
    pr.add_argument("--fold", type=int, default=None, help="default: predict every record")
    pr.add_argument("--out", required=True)
    pr.add_argument("--batch-size", type=int, default=4)

    cv = sub.add_parser("cv", help="k-fold cross validation")
    _train_flags(cv)
    cv.add_argument("--task", choices=(SEGMENTATION, REGRESSION), required=True)
    cv.add_argument("--k", type=int, default=4)
    cv.add_argument("--mask-source", choices=("gt", "pred", "none"), default="gt")
    cv.add_argument("--pred-mask-dir", default=None)

    return parser


def run(argv) -> int:
    args = build_parser().parse_args(argv)
    if args.cmd in ("train-seg", "train-reg"):
        checkpoint = train(_config(args, args.task))
        print(json.dumps({"checkpoint": str(checkpoint)}))
    elif args.cmd == "predict":
        result = predict(args.checkpoint, args.manifest, args.fold, args.out,
                         batch_size=args.batch_size)
        print(json.dumps({"predictions": str(result)}))
    elif args.cmd == "cv":
        result = cross_validate(_config(args, args.task), k=args.k)
        print(json.dumps({"predictions": str(result)}))
    return 0


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
