"""Misclassification gallery: every wrongly classified image with context.

Entries are ranked most-confidently-wrong first, the cases worth a manual
look. The gallery export writes an index CSV plus a copy of each image named
by its true label, predicted label, and confidence.
"""

from __future__ import annotations

import csv
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import augment as aug
from . import model as mod
from .data import ClassLabel, DatasetManifest, ImageRecord

INDEX_COLUMNS = ("path", "true", "predicted", "p0", "p1", "p2", "confidence", "margin")


class AnalysisError(Exception):
    """The requested split is empty or the model is unusable."""


@dataclass(frozen=True)
class MisclassificationEntry:
    record: ImageRecord
    true_label: ClassLabel
    predicted_label: ClassLabel
    probabilities: tuple[float, float, float]
    confidence: float
    margin: float


@dataclass(frozen=True)
class ErrorReport:
    entries: tuple[MisclassificationEntry, ...]
    pair_counts: dict[tuple[ClassLabel, ClassLabel], int]
    per_class_error_rate: dict[ClassLabel, float]
    split: str
    sample_count: int


def analyze(classifier: mod.TrainedClassifier, manifest: DatasetManifest, split: str) -> ErrorReport:
    """Run rescale-only inference over ``split`` and collect argmax mismatches."""
    records = manifest.split_records(split)
    if not records:
        raise AnalysisError(f"split {split!r} is empty")

    config = aug.AugmentConfig(
        target_size=classifier.preprocessing.target_size,
        rescale_factor=classifier.preprocessing.rescale_factor,
    )
    entries: list[MisclassificationEntry] = []
    per_class_total = {label: 0 for label in ClassLabel}
    per_class_errors = {label: 0 for label in ClassLabel}
    offset = 0
    for batch in aug.batch_stream(manifest, split, config, batch_size=32, epochs=1):
        probs = mod.predict_batch(classifier, batch.pixels)
        for i in range(probs.shape[0]):
            record = records[offset + i]
            row = probs[i]
            predicted = ClassLabel(int(np.argmax(row)))
            per_class_total[record.label] += 1
            if predicted == record.label:
                continue
            per_class_errors[record.label] += 1
            top2 = np.sort(row)[-2:]
            entries.append(
                MisclassificationEntry(
                    record=record,
                    true_label=record.label,
                    predicted_label=predicted,
                    probabilities=tuple(float(v) for v in row),
                    confidence=float(row.max()),
                    margin=float(top2[1] - top2[0]),
                )
            )
        offset += probs.shape[0]

    entries.sort(key=lambda e: (-e.confidence, e.record.path))
    pair_counts: dict[tuple[ClassLabel, ClassLabel], int] = {}
    for e in entries:
        key = (e.true_label, e.predicted_label)
        pair_counts[key] = pair_counts.get(key, 0) + 1
    rates = {
        label: (per_class_errors[label] / per_class_total[label]) if per_class_total[label] else 0.0
        for label in ClassLabel
    }
    return ErrorReport(
        entries=tuple(entries),
        pair_counts=pair_counts,
        per_class_error_rate=rates,
        split=split,
        sample_count=len(records),
    )


def export_gallery(report: ErrorReport, out_dir: str | Path) -> Path:
    """Write ``index.csv`` and annotated image copies; overwrites idempotently."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index_path = out / "index.csv"
    with open(index_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(INDEX_COLUMNS)
        for e in report.entries:
            writer.writerow(
                [
                    e.record.path,
                    e.true_label.label_name,
                    e.predicted_label.label_name,
                    repr(e.probabilities[0]),
                    repr(e.probabilities[1]),
                    repr(e.probabilities[2]),
                    repr(e.confidence),
                    repr(e.margin),
                ]
            )
    for i, e in enumerate(report.entries):
        src = Path(e.record.path)
        name = (
            f"{i:03d}_true-{e.true_label.label_name}_pred-{e.predicted_label.label_name}"
            f"_conf-{e.confidence:.3f}{src.suffix.lower()}"
        )
        shutil.copyfile(src, out / name)
    return index_path
