"""Accuracy, confusion matrices, and machine-readable report emission.

All functions here are pure over completed results; emission is
byte-stable for identical inputs (sorted JSON keys, fixed CSV dialect).
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from .errors import DataError


@dataclass
class ConfusionMatrix:
    """C x C counts; rows are true classes, columns are predicted classes."""

    counts: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        c = len(self.class_names)
        if self.counts.shape != (c, c):
            raise DataError(f"confusion matrix shape {self.counts.shape} does not match {c} classes")
        if (self.counts < 0).any():
            raise DataError("confusion matrix counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        total = self.total
        return float(np.trace(self.counts)) / total if total else 0.0

    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def row_normalized(self) -> np.ndarray:
        sums = self.row_sums().astype(np.float64)
        safe = np.where(sums == 0, 1.0, sums)
        return self.counts / safe[:, None]


def evaluate(model, batch_stream: Iterable,
             class_names: tuple[str, ...] | None = None) -> tuple[float, ConfusionMatrix]:
    """Argmax predictions over an inference stream of (images, labels) batches.

    Ties break to the lowest class index.
    """
    num_classes = model.spec.num_classes
    if class_names is None:
        class_names = tuple(f"class_{i}" for i in range(num_classes))
    elif len(class_names) != num_classes:
        raise DataError(f"{len(class_names)} class names for a {num_classes}-class model")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    for images, labels in batch_stream:
        probs = model.forward(images, training=False)
        preds = np.argmax(probs.data, axis=1)
        for true, pred in zip(labels, preds):
            counts[int(true), int(pred)] += 1
    cm = ConfusionMatrix(counts=counts, class_names=tuple(class_names))
    return cm.accuracy, cm


def write_metrics_csv(reports: Iterable, path: Union[str, Path]) -> Path:
    """Per-epoch CSV: epoch, train loss/accuracy, validation accuracy, seconds."""
    path = Path(path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "train_loss", "train_accuracy", "validation_accuracy", "seconds"])
    for r in reports:
        writer.writerow([r.epoch, repr(float(r.train_loss)), repr(float(r.train_accuracy)),
                         repr(float(r.validation_accuracy)), repr(float(r.seconds))])
    path.write_text(buf.getvalue())
    return path


def write_confusion_csv(cm: ConfusionMatrix, path: Union[str, Path]) -> Path:
    """Counts as a (C+1)-column table: header row of class names, first column true class."""
    path = Path(path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["true\\predicted", *cm.class_names])
    for name, row in zip(cm.class_names, cm.counts):
        writer.writerow([name, *[int(v) for v in row]])
    path.write_text(buf.getvalue())
    return path


def write_run_json(record: dict, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(json.dumps(record, sort_keys=True, indent=2) + "\n")
    return path


def read_run_json(path: Union[str, Path]) -> dict:
    return json.loads(Path(path).read_text())
