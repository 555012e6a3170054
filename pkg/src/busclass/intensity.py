"""Per-image intensity statistics and per-class distribution analysis.

"Intensity" of an image is the arithmetic mean of its luminance on the [0, 1]
scale, computed at the original resolution (the analysis describes the
dataset, not the model input). Multichannel images are reduced with the fixed
luma weights 0.299/0.587/0.114, so replicated-grayscale images score the same
as their single-channel originals.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .augment import decode_image
from .data import ClassLabel, DatasetManifest

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
HISTOGRAM_BINS = 50


class SkewDirection(enum.Enum):
    LEFT = "left"
    RIGHT = "right"
    SYMMETRIC = "symmetric"


class IntensityError(Exception):
    """A class has no images, or an image failed to decode."""


@dataclass(frozen=True)
class IntensityStats:
    label: ClassLabel
    n: int
    min: float
    q1: float
    median: float
    q3: float
    max: float
    mean: float
    skewness: float
    outlier_count: int


@dataclass(frozen=True)
class IntensityReport:
    per_class: dict[ClassLabel, IntensityStats | None]
    histogram_counts: tuple[int, ...]
    histogram_edges: tuple[float, ...]
    skew_direction: SkewDirection
    median_ordering: tuple[str, ...]  # class names sorted by ascending median
    gaps: tuple[str, ...] = ()


def image_mean_intensity(source) -> float:
    """Mean luminance of an image in [0, 1]; accepts a path, bytes, or raster."""
    if isinstance(source, np.ndarray):
        raster = source
    else:
        try:
            raster = decode_image(source)
        except Exception as exc:
            raise IntensityError(f"cannot read image {source}: {exc}") from exc
    luma = np.tensordot(raster.astype(np.float64), LUMA_WEIGHTS, axes=([-1], [0]))
    return float(luma.mean() / 255.0)


def sample_skewness(values: np.ndarray) -> float:
    """Adjusted Fisher-Pearson skewness G1; 0.0 when undefined (n < 3 or zero spread)."""
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    if n < 3:
        return 0.0
    centered = values - values.mean()
    m2 = np.mean(centered**2)
    # guard the zero-spread case against rounding residue in the mean
    if m2 <= (1e-12 * max(np.abs(values).max(), 1.0)) ** 2:
        return 0.0
    g1 = np.mean(centered**3) / m2**1.5
    return float(g1 * np.sqrt(n * (n - 1)) / (n - 2))


def _stats_from_values(label: ClassLabel, values: np.ndarray) -> IntensityStats:
    # quartiles by linear interpolation between order statistics (type-7)
    qmin, q1, med, q3, qmax = np.quantile(values, [0.0, 0.25, 0.5, 0.75, 1.0])
    iqr = q3 - q1
    low, high = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    return IntensityStats(
        label=label,
        n=len(values),
        min=float(qmin),
        q1=float(q1),
        median=float(med),
        q3=float(q3),
        max=float(qmax),
        mean=float(values.mean()),
        skewness=sample_skewness(values),
        outlier_count=int(((values < low) | (values > high)).sum()),
    )


def class_intensities(manifest: DatasetManifest, label: ClassLabel) -> np.ndarray:
    records = [r for r in manifest.classifiable() if r.label == label]
    return np.array([image_mean_intensity(r.path) for r in records], dtype=np.float64)


def class_stats(manifest: DatasetManifest, label: ClassLabel) -> IntensityStats:
    """Distribution statistics of the per-image mean intensities of one class."""
    values = class_intensities(manifest, label)
    if len(values) == 0:
        raise IntensityError(f"class {label.label_name} has no images")
    return _stats_from_values(label, values)


def report(manifest: DatasetManifest) -> IntensityReport:
    """Per-class stats plus a pooled 50-bin histogram over [0, 1].

    Empty classes leave a gap marker instead of failing the whole report.
    """
    per_class: dict[ClassLabel, IntensityStats | None] = {}
    gaps: list[str] = []
    pooled: list[np.ndarray] = []
    for label in ClassLabel:
        values = class_intensities(manifest, label)
        if len(values) == 0:
            per_class[label] = None
            gaps.append(f"class_empty_{label.label_name}")
            continue
        per_class[label] = _stats_from_values(label, values)
        pooled.append(values)

    all_values = np.concatenate(pooled) if pooled else np.array([])
    counts, edges = np.histogram(all_values, bins=HISTOGRAM_BINS, range=(0.0, 1.0))

    skew = sample_skewness(all_values) if len(all_values) else 0.0
    if skew > 0.05:
        direction = SkewDirection.RIGHT
    elif skew < -0.05:
        direction = SkewDirection.LEFT
    else:
        direction = SkewDirection.SYMMETRIC

    ordering = tuple(
        label.label_name
        for label in sorted(
            (l for l in ClassLabel if per_class[l] is not None),
            key=lambda l: per_class[l].median,
        )
    )
    return IntensityReport(
        per_class=per_class,
        histogram_counts=tuple(int(c) for c in counts),
        histogram_edges=tuple(float(e) for e in edges),
        skew_direction=direction,
        median_ordering=ordering,
        gaps=tuple(gaps),
    )


def report_to_text(rep: IntensityReport) -> str:
    lines = ["[per_class]"]
    for label, stats in rep.per_class.items():
        if stats is None:
            lines.append(f"{label.label_name}=missing")
            continue
        lines.append(
            f"{label.label_name}: n={stats.n} min={stats.min:.4f} q1={stats.q1:.4f} "
            f"median={stats.median:.4f} q3={stats.q3:.4f} max={stats.max:.4f} "
            f"mean={stats.mean:.4f} skewness={stats.skewness:.4f} outliers={stats.outlier_count}"
        )
    lines.append("[pooled]")
    lines.append(f"skew_direction={rep.skew_direction.value}")
    lines.append("median_ordering=" + "<".join(rep.median_ordering))
    if rep.gaps:
        lines.append("gaps=" + ",".join(rep.gaps))
    return "\n".join(lines) + "\n"


def histogram_to_csv(rep: IntensityReport) -> str:
    rows = ["bin_low,bin_high,count"]
    for i, count in enumerate(rep.histogram_counts):
        rows.append(f"{rep.histogram_edges[i]!r},{rep.histogram_edges[i + 1]!r},{count}")
    return "\n".join(rows) + "\n"


def class_stats_to_csv(rep: IntensityReport) -> str:
    rows = ["class,n,min,q1,median,q3,max,mean,skewness,outlier_count"]
    for label, s in rep.per_class.items():
        if s is None:
            rows.append(f"{label.label_name},0,,,,,,,,")
        else:
            rows.append(
                f"{label.label_name},{s.n},{s.min!r},{s.q1!r},{s.median!r},"
                f"{s.q3!r},{s.max!r},{s.mean!r},{s.skewness!r},{s.outlier_count}"
            )
    return "\n".join(rows) + "\n"


def save_report(rep: IntensityReport, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "intensity_report.txt").write_text(report_to_text(rep), encoding="utf-8")
    (out / "intensity_histogram.csv").write_text(histogram_to_csv(rep), encoding="utf-8")
    (out / "intensity_class_stats.csv").write_text(class_stats_to_csv(rep), encoding="utf-8")
