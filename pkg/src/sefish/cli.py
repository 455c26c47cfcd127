"""Command-line entry point.

Subcommands: pretrain, posttrain, evaluate, gradcheck, inspect, expand.
Exit codes: 0 success, 2 usage/config, 3 data, 4 weights compatibility,
5 numerical failure. Errors print one machine-parsable line to stderr:
``<ErrorClass>: <detail>``. The input dataset directory is never written to.
"""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import config as C
from . import gradcheck as G
from . import metrics as M
from .data import AugmentConfig, SplitManifest, augment, batches, decode_image, ingest
from .errors import (
    CompatibilityError,
    DataError,
    NumericalError,
    SefishError,
    SpecError,
    WeightsFormatError,
)
from .model import load_model, load_weights
from .train import posttrain, pretrain, repeat_runs

OUT_ROOT_ENV = "SEFISH_OUT"

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_COMPAT = 4
EXIT_NUMERIC = 5


def _resolve_out_dir(args, command: str, seed: int) -> Path:
    if args.out:
        return Path(args.out)
    root = os.environ.get(OUT_ROOT_ENV)
    if not root:
        raise SpecError(f"--out not given and {OUT_ROOT_ENV} is not set")
    out = Path(root) / f"{command}_seed{seed}"
    if out.exists():
        raise SpecError(f"default output directory {out} already exists; pass --out")
    return out


def _load_cfg(args) -> dict[str, dict]:
    return C.read_config_file(args.config) if args.config else {}


def _train_overrides(cfg: dict[str, dict], args, default_batch: int) -> dict[str, dict]:
    train = dict(cfg.get("train", {}))
    if args.seed is not None:
        train["seed"] = args.seed
    if args.epochs is not None:
        train["epochs"] = args.epochs
    if args.batch_size is not None:
        train["batch_size"] = args.batch_size
    train.setdefault("batch_size", default_batch)
    out = dict(cfg)
    out["train"] = train
    return out


def _augment_setting(cfg: dict[str, dict], args) -> AugmentConfig | None:
    flag = getattr(args, "augment", None)
    if flag == "on" or (flag is None and "augment" in cfg):
        return C.augment_from(cfg)
    return None


def _manifest(args) -> SplitManifest | None:
    return SplitManifest.load(args.manifest) if getattr(args, "manifest", None) else None


def cmd_pretrain(args) -> int:
    cfg = _train_overrides(_load_cfg(args), args, default_batch=16)
    dataset = ingest(args.data)
    spec = C.model_spec_from(cfg, default_classes=len(dataset.class_names))
    aug = _augment_setting(cfg, args)
    config = C.train_config_from(cfg, spec, aug)
    rule = config.checkpoint_rule or "best_validation"
    out_dir = _resolve_out_dir(args, "pretrain", config.seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    C.write_snapshot(out_dir / "config.ini", spec, config, rule,
                     {"data": args.data, "out": str(out_dir)})
    print(f"spec fingerprint: {spec.fingerprint()}")
    result = pretrain(config, dataset, out_dir, manifest=_manifest(args))
    print(f"best epoch {result.best_epoch}, evaluated epoch {result.evaluated_epoch}")
    print(f"test accuracy: {result.test_accuracy:.4f}")
    print(f"run directory: {out_dir}")
    return 0


def cmd_posttrain(args) -> int:
    cfg = _train_overrides(_load_cfg(args), args, default_batch=8)
    dataset = ingest(args.data)
    weights = load_weights(args.weights)
    target = args.classes if args.classes is not None else len(dataset.class_names)
    file_spec = C.model_spec_from(cfg) if "model" in cfg else None
    aug = _augment_setting(cfg, args)
    config = C.train_config_from(cfg, file_spec, aug, initial_weights=args.weights)
    rule = config.checkpoint_rule or "final_epoch"
    out_dir = _resolve_out_dir(args, "posttrain", config.seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    snapshot_spec = dataclasses.replace(weights.spec, num_classes=target)
    C.write_snapshot(out_dir / "config.ini", snapshot_spec, config, rule,
                     {"data": args.data, "weights": args.weights, "out": str(out_dir)})
    print(f"spec fingerprint: {snapshot_spec.fingerprint()}")
    if args.repeat is not None:
        repeated = repeat_runs(config, dataset, args.repeat, out_dir, command="posttrain")
        accs = ", ".join(f"{a:.4f}" for a in repeated.accuracies)
        print(f"per-run accuracies: {accs}")
        print(f"mean accuracy over {args.repeat} runs: {repeated.mean_accuracy:.4f}")
    else:
        result = posttrain(config, dataset, out_dir, manifest=_manifest(args), target_classes=target)
        print(f"test accuracy: {result.test_accuracy:.4f}")
    print(f"run directory: {out_dir}")
    return 0


def cmd_evaluate(args) -> int:
    if not args.all and not args.manifest:
        raise SpecError("evaluate needs --manifest FILE or --all")
    dataset = ingest(args.data)
    model = load_model(args.weights)
    if model.spec.num_classes != len(dataset.class_names):
        raise CompatibilityError(
            f"weights expect {model.spec.num_classes} classes, dataset has {len(dataset.class_names)}"
        )
    spec = model.spec
    if args.all:
        manifest = SplitManifest(
            seed=0, fractions=(0.0, 0.0, 1.0),
            assignments={str(p.relative_to(dataset.root)): "test" for p, _ in dataset.samples},
        )
    else:
        manifest = SplitManifest.load(args.manifest)
    stream = batches(dataset, manifest, "test", args.batch_size, spec.height, spec.width)
    accuracy, cm = M.evaluate(model, stream, class_names=dataset.class_names)
    print(f"samples: {cm.total}")
    print(f"accuracy: {accuracy:.4f}")
    for name, row in zip(cm.class_names, cm.counts):
        print(f"  {name}: " + " ".join(str(int(v)) for v in row))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        M.write_confusion_csv(cm, out / "confusion.csv")
        M.write_run_json(
            {"command": "evaluate", "accuracy": accuracy, "samples": cm.total,
             "confusion": cm.counts.tolist(), "class_names": list(cm.class_names)},
            out / "run.json",
        )
    return 0


def cmd_gradcheck(args) -> int:
    results = G.run_all(h=args.step)
    failed = False
    for res in results:
        status = "ok" if res.max_rel_err < args.tolerance else "FAIL"
        print(f"{res.name}: max_rel_err={res.max_rel_err:.3e} [{status}]")
        failed = failed or status == "FAIL"
    if failed:
        raise NumericalError(f"gradient check exceeded tolerance {args.tolerance}")
    return 0


def cmd_inspect(args) -> int:
    weights = load_weights(args.weights)
    print("format version: 1")
    print(f"spec fingerprint: {weights.fingerprint}")
    print(f"spec: {weights.spec.canonical_json()}")
    trainable = 0
    stats = 0
    for name, role, arr in weights.entries:
        print(f"  {name} [{role}] {'x'.join(map(str, arr.shape))}")
        if role == "param":
            trainable += arr.size
        else:
            stats += arr.size
    print(f"trainable parameters: {trainable}")
    print(f"state values: {stats}")
    print(f"total values: {trainable + stats}")
    return 0


def cmd_expand(args) -> int:
    cfg = _load_cfg(args)
    aug = C.augment_from(cfg)
    dataset = ingest(args.data)
    out_root = Path(args.out)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(args.seed)))
    written = 0
    for path, label in dataset.samples:
        arr = decode_image(path)
        class_dir = out_root / dataset.class_names[label]
        class_dir.mkdir(parents=True, exist_ok=True)
        for k in range(args.per_image):
            out_arr = augment(arr, aug, rng)
            img = Image.fromarray((np.clip(out_arr, 0.0, 1.0) * 255.0).round().astype(np.uint8))
            img.save(class_dir / f"{path.stem}_aug{k}.png")
            written += 1
    print(f"wrote {written} augmented images to {out_root}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sefish", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_train_flags(p, needs_data=True):
        if needs_data:
            p.add_argument("--data", required=True, help="dataset root (class-per-directory)")
        p.add_argument("--config", help="INI config file")
        p.add_argument("--out", help=f"run directory (default: ${OUT_ROOT_ENV}/<command>_seed<seed>)")
        p.add_argument("--seed", type=int, help="run seed")
        p.add_argument("--epochs", type=int, help="training epochs")
        p.add_argument("--batch-size", type=int, dest="batch_size", help="minibatch size")
        p.add_argument("--manifest", help="reuse an existing split manifest file")
        p.add_argument("--augment", choices=("on", "off"), help="apply training-split augmentation")

    p = sub.add_parser("pretrain", help="train from fresh initialization")
    add_train_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("posttrain", help="fine-tune from pre-trained weights after classifier surgery")
    add_train_flags(p)
    p.add_argument("--weights", required=True, help="initial weights file")
    p.add_argument("--classes", type=int, help="target class count (default: dataset classes)")
    p.add_argument("--repeat", type=int, help="run n seeds and report mean accuracy")
    p.set_defaults(func=cmd_posttrain)

    p = sub.add_parser("evaluate", help="run inference and report accuracy/confusion")
    p.add_argument("--data", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--manifest", help="evaluate the manifest's test split")
    p.add_argument("--all", action="store_true", help="evaluate every image in the dataset")
    p.add_argument("--batch-size", type=int, dest="batch_size", default=32)
    p.add_argument("--out", help="optional directory for confusion.csv / run.json")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every primitive")
    p.add_argument("--step", type=float, default=G.H_DEFAULT, help="finite-difference step")
    p.add_argument("--tolerance", type=float, default=G.TOLERANCE, help="max relative error")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect", help="print weights-file fingerprint, shapes, and totals")
    p.add_argument("--weights", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("expand", help="write augmented copies of a dataset to disk")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="INI config file providing [augment]")
    p.add_argument("--per-image", type=int, dest="per_image", default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_expand)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SpecError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CompatibilityError, WeightsFormatError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_COMPAT
    except DataError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SefishError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
