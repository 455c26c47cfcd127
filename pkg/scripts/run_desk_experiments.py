#!/usr/bin/env python3
"""Desk-scale mirror of the full experiment protocol on synthetic data.

Builds a 23-class source dataset and a 4-class target dataset at 32x32,
then runs: (1) pre-training from scratch, with and without the channel
gates; (2) transfer post-training from the pre-trained weights after
classifier surgery; (3) post-training with image augmentation. Prints a
summary table of test accuracy and mean epoch time per variant.

Usage: python scripts/run_desk_experiments.py --out runs/desk [--epochs 40]
       [--runs 3] [--seed 0]
"""
import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))
from make_synthetic_fish import make_dataset  # noqa: E402

from sefish import AugmentConfig, ModelSpec, TrainConfig, ingest, pretrain, repeat_runs  # noqa: E402

SPEC = dict(
    height=32,
    width=32,
    stages=((8, 5), (16, 3), (32, 3)),
    reduction_ratio=4,
    fc_units=32,
)


def mean_epoch_seconds(reports):
    return float(np.mean([r.seconds for r in reports]))


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True)
    parser.add_argument("--epochs", type=int, default=40)
    parser.add_argument("--runs", type=int, default=3, help="post-training repeats")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    out = Path(args.out)
    source_dir = out / "data" / "source23"
    target_dir = out / "data" / "target4"
    if not source_dir.exists():
        make_dataset(source_dir, num_classes=23, per_class=12, size=32, seed=args.seed)
    if not target_dir.exists():
        make_dataset(target_dir, num_classes=4, per_class=20, size=32, seed=args.seed + 1)
    source = ingest(source_dir)
    target = ingest(target_dir)

    rows = []

    print("== pre-training (23 synthetic classes) ==")
    pre_weights = {}
    for se_blocks in (True, False):
        label = "gated" if se_blocks else "plain"
        spec = ModelSpec(num_classes=23, se_blocks=se_blocks, **SPEC)
        config = TrainConfig(spec=spec, epochs=args.epochs, batch_size=16, seed=args.seed)
        result = pretrain(config, source, out / f"pretrain_{label}")
        pre_weights[se_blocks] = result.run_dir / "weights_final.bin"
        rows.append((f"pretrain ({label})", result.test_accuracy,
                     mean_epoch_seconds(result.reports)))
        print(f"  {label}: test accuracy {result.test_accuracy:.4f}")

    print(f"== post-training (4 classes, {args.runs} runs) ==")
    for augmented in (False, True):
        label = "augmented" if augmented else "baseline"
        config = TrainConfig(
            epochs=args.epochs,
            batch_size=8,
            seed=args.seed,
            augment=AugmentConfig() if augmented else None,
            initial_weights=str(pre_weights[True]),
        )
        repeated = repeat_runs(config, target, args.runs, out / f"posttrain_{label}")
        secs = mean_epoch_seconds(
            [r for res in repeated.results for r in res.reports]
        )
        rows.append((f"posttrain ({label})", repeated.mean_accuracy, secs))
        print(f"  {label}: mean test accuracy {repeated.mean_accuracy:.4f}")

    print()
    print(f"{'experiment':<24} {'test acc':>9} {'s/epoch':>9}")
    for name, acc, secs in rows:
        print(f"{name:<24} {acc:>9.4f} {secs:>9.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
