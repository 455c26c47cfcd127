"""Training orchestration: from-scratch runs, transfer runs with classifier
surgery, and repeated-seed experiments.

A run owns one model and one RNG family derived from the run seed
(initialization, per-epoch shuffles, dropout masks), so identical seeds
and data reproduce weights files bit-for-bit. The test split is drawn only
once, for the final evaluation; every batch draw is logged so that
isolation is checkable after the fact.

Run directory layout: ``manifest.json``, ``metrics.csv`` (per-epoch, with
wall-clock seconds), ``confusion.csv``, ``run.json`` (deterministic: no
wall-clock fields, no filesystem paths), ``weights_best.bin`` and
``weights_final.bin``.
"""
from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from . import metrics as M
from .data import AugmentConfig, Dataset, SplitManifest, batches, split
from .errors import CompatibilityError, DataError, NumericalError, SpecError, TrainingError
from .model import (
    ModelInstance,
    ModelSpec,
    build_model,
    load_into,
    load_model,
    load_weights,
    replace_classifier,
    save_weights,
    spec_diff,
)
from .optim import Adam, loss_and_grad

RUN_JSON_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Knobs for one training run; ``spec`` may be None for transfer runs,
    where the architecture comes from the initial weights file."""

    spec: Optional[ModelSpec] = None
    epochs: int = 50
    batch_size: int = 16
    seed: int = 0
    learning_rate: float = 0.001
    checkpoint_rule: Optional[str] = None  # None resolves per phase
    augment: Optional[AugmentConfig] = None
    initial_weights: Optional[str] = None

    def __post_init__(self):
        if self.epochs < 1:
            raise SpecError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise SpecError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.checkpoint_rule not in (None, "best_validation", "final_epoch"):
            raise SpecError(f"unknown checkpoint rule {self.checkpoint_rule!r}")


@dataclass
class EpochReport:
    epoch: int
    train_loss: float
    train_accuracy: float
    validation_accuracy: float
    seconds: float


@dataclass
class RunResult:
    run_dir: Path
    weights_path: Path
    reports: list[EpochReport]
    test_accuracy: float
    confusion: M.ConfusionMatrix
    best_epoch: int
    evaluated_epoch: int
    manifest: SplitManifest
    split_counts: dict[str, int]
    class_names: tuple[str, ...]
    fingerprint: str
    config: dict
    access_log: list[tuple] = field(default_factory=list)

    def test_accesses_before_final(self) -> int:
        n = 0
        for event in self.access_log:
            if event[0] == "final_eval":
                break
            if event[-1] == "test":
                n += 1
        return n


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(tuple(parts)).generate_state(1)[0])


def _dropout_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 3))))


def _validation_accuracy(model: ModelInstance, dataset: Dataset, manifest: SplitManifest,
                         spec: ModelSpec, batch_size: int) -> float:
    stream = batches(dataset, manifest, "validation", batch_size, spec.height, spec.width)
    accuracy, _ = M.evaluate(model, stream)
    return accuracy


def _resolved_config(config: TrainConfig, spec: ModelSpec, rule: str, command: str) -> dict:
    return {
        "command": command,
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "seed": config.seed,
        "learning_rate": config.learning_rate,
        "checkpoint_rule": rule,
        "augment": config.augment.to_dict() if config.augment is not None else None,
        "model": spec.to_dict(),
    }


def _write_artifacts(result: RunResult, command: str) -> None:
    run_dir = result.run_dir
    result.manifest.save(run_dir / "manifest.json")
    M.write_metrics_csv(result.reports, run_dir / "metrics.csv")
    M.write_confusion_csv(result.confusion, run_dir / "confusion.csv")
    record = {
        "version": RUN_JSON_VERSION,
        "command": command,
        "config": result.config,
        "class_names": list(result.class_names),
        "split_counts": result.split_counts,
        "spec_fingerprint": result.fingerprint,
        "epochs": [
            {
                "epoch": r.epoch,
                "train_loss": r.train_loss,
                "train_accuracy": r.train_accuracy,
                "validation_accuracy": r.validation_accuracy,
            }
            for r in result.reports
        ],
        "best_epoch": result.best_epoch,
        "evaluated_epoch": result.evaluated_epoch,
        "test_accuracy": result.test_accuracy,
        "confusion": result.confusion.counts.tolist(),
        "confusion_row_normalized": result.confusion.row_normalized().tolist(),
    }
    M.write_run_json(record, run_dir / "run.json")


def _train_run(
    model: ModelInstance,
    config: TrainConfig,
    dataset: Dataset,
    manifest: SplitManifest,
    out_dir: Path,
    rule: str,
    command: str,
    on_epoch_end: Optional[Callable[[EpochReport, ModelInstance], None]] = None,
) -> RunResult:
    spec = model.spec
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    optimizer = Adam(model.params, lr=config.learning_rate)
    drop_rng = _dropout_rng(config.seed)
    access_log: list[tuple] = []
    reports: list[EpochReport] = []
    best_acc = -math.inf
    best_epoch = 0
    best_path = out_dir / "weights_best.bin"
    final_path = out_dir / "weights_final.bin"

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        access_log.append(("epoch", epoch, "train"))
        loss_sum = 0.0
        correct = 0
        seen = 0
        stream = batches(
            dataset, manifest, "train", config.batch_size, spec.height, spec.width,
            shuffle_seed=_derived_seed(config.seed, 2, epoch), augment_config=config.augment,
        )
        for batch_index, (images, labels) in enumerate(stream):
            loss, _, probs = loss_and_grad(model, images, labels, rng=drop_rng, return_probs=True)
            if not math.isfinite(loss):
                raise NumericalError(
                    f"non-finite training loss at epoch {epoch}, batch {batch_index}"
                )
            optimizer.step()
            n = len(labels)
            loss_sum += loss * n
            seen += n
            correct += int((np.argmax(probs, axis=1) == labels).sum())
        access_log.append(("epoch", epoch, "validation"))
        val_acc = _validation_accuracy(model, dataset, manifest, spec, config.batch_size)
        seconds = time.perf_counter() - t0
        report = EpochReport(
            epoch=epoch,
            train_loss=loss_sum / max(seen, 1),
            train_accuracy=correct / max(seen, 1),
            validation_accuracy=val_acc,
            seconds=seconds,
        )
        reports.append(report)
        if val_acc > best_acc:  # ties keep the earlier epoch
            best_acc = val_acc
            best_epoch = epoch
            save_weights(model, best_path)
        if on_epoch_end is not None:
            on_epoch_end(report, model)

    save_weights(model, final_path)
    if rule == "best_validation":
        eval_path, evaluated_epoch = best_path, best_epoch
    else:
        eval_path, evaluated_epoch = final_path, config.epochs

    eval_model = load_model(eval_path)
    access_log.append(("final_eval", "test"))
    test_stream = batches(dataset, manifest, "test", config.batch_size, spec.height, spec.width)
    test_accuracy, confusion = M.evaluate(eval_model, test_stream, class_names=dataset.class_names)

    counts = manifest.counts()
    result = RunResult(
        run_dir=out_dir,
        weights_path=eval_path,
        reports=reports,
        test_accuracy=test_accuracy,
        confusion=confusion,
        best_epoch=best_epoch,
        evaluated_epoch=evaluated_epoch,
        manifest=manifest,
        split_counts=counts,
        class_names=dataset.class_names,
        fingerprint=spec.fingerprint(),
        config=_resolved_config(config, spec, rule, command),
        access_log=access_log,
    )
    _write_artifacts(result, command)
    return result


def pretrain(
    config: TrainConfig,
    dataset: Dataset,
    out_dir: Union[str, Path],
    manifest: Optional[SplitManifest] = None,
    on_epoch_end: Optional[Callable[[EpochReport, ModelInstance], None]] = None,
) -> RunResult:
    """Train from fresh initialization; the evaluated checkpoint defaults to the
    epoch with the highest validation accuracy, not necessarily the last."""
    if config.initial_weights is not None:
        raise TrainingError("pretrain starts from fresh initialization; initial_weights must be unset")
    if config.spec is None:
        raise SpecError("pretrain needs a model spec")
    if len(dataset.class_names) < 2:
        raise DataError("pretrain needs a dataset with at least 2 classes")
    if len(dataset.class_names) != config.spec.num_classes:
        raise DataError(
            f"model expects {config.spec.num_classes} classes but dataset has {len(dataset.class_names)}"
        )
    rule = config.checkpoint_rule or "best_validation"
    manifest = manifest or split(dataset, config.seed)
    model = build_model(config.spec, seed=_derived_seed(config.seed, 1))
    return _train_run(model, config, dataset, manifest, Path(out_dir), rule, "pretrain", on_epoch_end)


def posttrain(
    config: TrainConfig,
    dataset: Dataset,
    out_dir: Union[str, Path],
    manifest: Optional[SplitManifest] = None,
    target_classes: Optional[int] = None,
    on_epoch_end: Optional[Callable[[EpochReport, ModelInstance], None]] = None,
) -> RunResult:
    """Load pre-trained weights, swap the classifier for the target class count,
    fine-tune every layer, and evaluate the final epoch's weights."""
    if config.initial_weights is None:
        raise TrainingError("posttrain requires an initial weights file")
    weights = load_weights(config.initial_weights)
    if config.spec is not None:
        differing = spec_diff(config.spec, weights.spec, ignore=("num_classes",))
        if differing:
            raise CompatibilityError(
                "initial weights are incompatible beyond the classifier; differing fields: "
                + ", ".join(differing)
            )
    new_classes = target_classes if target_classes is not None else len(dataset.class_names)
    if new_classes != len(dataset.class_names):
        raise DataError(
            f"target classes {new_classes} does not match dataset class count {len(dataset.class_names)}"
        )
    rule = config.checkpoint_rule or "final_epoch"
    manifest = manifest or split(dataset, config.seed)
    model = build_model(weights.spec, seed=0)
    load_into(model, weights)
    replace_classifier(model, new_classes, seed=_derived_seed(config.seed, 4))
    return _train_run(model, config, dataset, manifest, Path(out_dir), rule, "posttrain", on_epoch_end)


@dataclass
class RepeatResult:
    mean_accuracy: float
    accuracies: list[float]
    results: list[RunResult]


def repeat_runs(
    config: TrainConfig,
    dataset: Dataset,
    n: int,
    out_dir: Union[str, Path],
    command: Optional[str] = None,
) -> RepeatResult:
    """n independent runs seeded seed+0..seed+n-1, sharing one split manifest."""
    if n < 1:
        raise SpecError(f"repeat count must be >= 1, got {n}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = split(dataset, config.seed)
    if command is None:
        command = "posttrain" if config.initial_weights else "pretrain"
    runner = {"pretrain": pretrain, "posttrain": posttrain}.get(command)
    if runner is None:
        raise SpecError(f"repeat_runs supports pretrain/posttrain, got {command!r}")
    results = []
    for i in range(n):
        run_config = dataclasses.replace(config, seed=config.seed + i)
        results.append(runner(run_config, dataset, out_dir / f"run_{i:03d}", manifest=manifest))
    accuracies = [r.test_accuracy for r in results]
    mean = sum(accuracies) / n
    summary = {
        "version": RUN_JSON_VERSION,
        "command": f"repeat:{command}",
        "runs": n,
        "base_seed": config.seed,
        "per_run_accuracies": accuracies,
        "mean_accuracy": mean,
    }
    M.write_run_json(summary, out_dir / "run.json")
    return RepeatResult(mean_accuracy=mean, accuracies=accuracies, results=results)
