"""Train the toy classifier and export its weights.

Usage: vit-train-export --spec trainspec.json --out weights.vitw
                        [--report report.json] [--epochs N] [--seed S]
"""

from __future__ import annotations

import argparse
import sys

from .export import export
from .train import TrainSpec, train


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="vit-train-export", description=__doc__)
    parser.add_argument("--spec", required=True, help="training spec JSON")
    parser.add_argument("--out", required=True, help="output VITW weight file")
    parser.add_argument("--report", help="write the training report JSON here")
    parser.add_argument("--epochs", type=int, help="override the spec's epoch count")
    parser.add_argument("--seed", type=int, help="override the spec's seed")
    args = parser.parse_args(argv)

    spec = TrainSpec.from_json(args.spec)
    if args.epochs is not None:
        spec.epochs = args.epochs
    if args.seed is not None:
        spec.seed = args.seed

    model, report = train(spec)
    export(model, args.out)
    if args.report:
        report.to_json(args.report)
    print(
        f"trained {spec.arch} (side {spec.image_side}) for {spec.epochs} epochs: "
        f"held-out accuracy {report.holdout_accuracy:.3f}, "
        f"final loss {report.final_loss:.4f} -> {args.out}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
