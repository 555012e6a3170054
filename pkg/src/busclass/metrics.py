"""From-scratch evaluation engine for 3-class classification.

Implements confusion matrix, accuracy, per-class/macro/weighted precision and
recall, the multiclass Matthews correlation coefficient (the R_K statistic,
which reduces to the familiar binary MCC formula for K=2), one-vs-rest ROC
curves with trapezoidal area, and precision-recall curves with
average-precision (step sum) area. Linear interpolation in PR space is
statistically biased, so PR area deliberately uses the step convention.

Conventions, fixed for determinism:
  * argmax ties resolve to the lowest class index;
  * zero-denominator rates are reported as 0.0 and flagged, never raised,
    so a degenerate class cannot crash an evaluation.

All functions are pure; everything here is plain numpy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

N_CLASSES = 3


class MetricsInputError(Exception):
    """Inputs violate a precondition (length mismatch, bad index, off-simplex row)."""


class DegenerateInputError(Exception):
    """Scores/labels cannot define the requested curve (single-class labels)."""


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    counts: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        arr = np.asarray(self.counts)
        if arr.shape != (N_CLASSES, N_CLASSES) or (arr < 0).any():
            raise MetricsInputError(f"counts must be a nonnegative {N_CLASSES}x{N_CLASSES} matrix")

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.array.sum())

    @property
    def trace(self) -> int:
        return int(np.trace(self.array))

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ConfusionMatrix":
        return cls(tuple(tuple(int(v) for v in row) for row in np.asarray(arr)))


@dataclass(frozen=True)
class BinaryTally:
    """One-vs-rest counts for a designated class."""

    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class Curve:
    """Threshold-swept curve; ROC points are (FPR, TPR), PR points are (recall, precision)."""

    points: tuple[tuple[float, float], ...]
    thresholds: tuple[float, ...]
    area: float
    kind: str  # "roc" or "pr"


@dataclass(frozen=True)
class PrecisionRecallSummary:
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    precision_macro: float
    recall_macro: float
    precision_weighted: float
    recall_weighted: float
    undefined_precision: tuple[int, ...] = ()
    undefined_recall: tuple[int, ...] = ()


@dataclass(frozen=True)
class EvaluationReport:
    matrix: ConfusionMatrix
    accuracy: float
    precision_macro: float
    precision_weighted: float
    recall_macro: float
    recall_weighted: float
    per_class_precision: tuple[float, ...]
    per_class_recall: tuple[float, ...]
    mcc: float
    roc_curves: tuple[Curve | None, ...]
    pr_curves: tuple[Curve | None, ...]
    roc_auc: tuple[float | None, ...]
    pr_auc: tuple[float | None, ...]
    roc_auc_macro: float | None
    pr_auc_macro: float | None
    flags: tuple[str, ...] = field(default=())


def confusion(true_labels, predicted_labels) -> ConfusionMatrix:
    """Count samples per (true, predicted) pair."""
    t = np.asarray(true_labels)
    p = np.asarray(predicted_labels)
    if t.size == 0:
        raise MetricsInputError("label lists must be nonempty")
    if t.shape != p.shape:
        raise MetricsInputError(f"length mismatch: {t.shape} vs {p.shape}")
    if ((t < 0) | (t >= N_CLASSES) | (p < 0) | (p >= N_CLASSES)).any():
        raise MetricsInputError(f"labels must lie in [0, {N_CLASSES})")
    counts = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix.from_array(counts)


def accuracy(matrix: ConfusionMatrix) -> float:
    """Correct predictions over total predictions: trace / total."""
    if matrix.total == 0:
        raise MetricsInputError("empty confusion matrix")
    return matrix.trace / matrix.total


def binary_tally(matrix: ConfusionMatrix, class_index: int) -> BinaryTally:
    """One-vs-rest TP/FP/TN/FN for ``class_index``."""
    arr = matrix.array
    tp = int(arr[class_index, class_index])
    fp = int(arr[:, class_index].sum() - tp)
    fn = int(arr[class_index, :].sum() - tp)
    tn = int(arr.sum() - tp - fp - fn)
    return BinaryTally(tp=tp, fp=fp, tn=tn, fn=fn)


def precision_recall(matrix: ConfusionMatrix) -> PrecisionRecallSummary:
    """Per-class, macro, and support-weighted precision and recall.

    Class-c precision is counts[c][c] over column-c sum; recall uses the row
    sum. Undefined (zero-denominator) classes report 0.0 and are flagged;
    macro averages run over the defined classes only, while weighted averages
    are support-weighted over all classes (an undefined recall has zero
    support and so contributes nothing either way).
    """
    if matrix.total == 0:
        raise MetricsInputError("empty confusion matrix")
    arr = matrix.array
    col = arr.sum(axis=0)
    row = arr.sum(axis=1)
    diag = np.diag(arr)

    precision = tuple(float(diag[c] / col[c]) if col[c] else 0.0 for c in range(N_CLASSES))
    recall = tuple(float(diag[c] / row[c]) if row[c] else 0.0 for c in range(N_CLASSES))
    undef_p = tuple(c for c in range(N_CLASSES) if col[c] == 0)
    undef_r = tuple(c for c in range(N_CLASSES) if row[c] == 0)

    def_p = [precision[c] for c in range(N_CLASSES) if col[c]]
    def_r = [recall[c] for c in range(N_CLASSES) if row[c]]
    support = row / matrix.total
    return PrecisionRecallSummary(
        precision=precision,
        recall=recall,
        precision_macro=float(np.mean(def_p)) if def_p else 0.0,
        recall_macro=float(np.mean(def_r)) if def_r else 0.0,
        precision_weighted=float(np.dot(support, precision)),
        recall_weighted=float(np.dot(support, recall)),
        undefined_precision=undef_p,
        undefined_recall=undef_r,
    )


def mcc(matrix: ConfusionMatrix) -> float:
    """Multiclass Matthews correlation (R_K) from the full K x K matrix.

    R_K = (c*s - sum_k p_k t_k) / sqrt((s^2 - sum p_k^2)(s^2 - sum t_k^2))
    with c the trace, s the total, t_k row sums, p_k column sums. For K=2 this
    equals (TP*TN - FP*FN) / sqrt((TP+FP)(TP+FN)(TN+FP)(TN+FN)). A zero
    denominator yields 0.0.
    """
    if matrix.total == 0:
        raise MetricsInputError("empty confusion matrix")
    arr = matrix.array.astype(np.float64)
    s = arr.sum()
    c = np.trace(arr)
    t = arr.sum(axis=1)
    p = arr.sum(axis=0)
    numerator = c * s - float(np.dot(p, t))
    denom_sq = (s * s - float(np.dot(p, p))) * (s * s - float(np.dot(t, t)))
    if denom_sq <= 0.0:
        return 0.0
    return float(numerator / np.sqrt(denom_sq))


def mcc_defined(matrix: ConfusionMatrix) -> bool:
    arr = matrix.array.astype(np.float64)
    s = arr.sum()
    return (s * s - float(np.dot(arr.sum(axis=0), arr.sum(axis=0)))) > 0 and (
        s * s - float(np.dot(arr.sum(axis=1), arr.sum(axis=1)))
    ) > 0


def _sweep(scores: np.ndarray, labels: np.ndarray):
    """Cumulative TP/FP counts at each distinct score threshold, descending."""
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    pos = labels[order].astype(np.int64)
    # last index of each run of equal scores
    distinct = np.nonzero(np.diff(s))[0]
    idx = np.concatenate([distinct, [len(s) - 1]])
    tp = np.cumsum(pos)[idx]
    fp = np.cumsum(1 - pos)[idx]
    return s[idx], tp, fp


def roc_curve(scores, labels) -> Curve:
    """One-vs-rest ROC curve and trapezoidal area.

    Thresholds sweep the distinct scores descending, preceded by an infinite
    sentinel giving the (0, 0) starting point. The trapezoidal area equals the
    Mann-Whitney statistic: the fraction of positive-negative pairs ranked
    correctly, ties counted half.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    n_pos = int(labels.sum())
    n_neg = int(len(labels) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise DegenerateInputError("ROC needs at least one positive and one negative label")

    thresholds, tp, fp = _sweep(scores, labels)
    tpr = np.concatenate([[0.0], tp / n_pos])
    fpr = np.concatenate([[0.0], fp / n_neg])
    thresholds = np.concatenate([[np.inf], thresholds])
    area = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    points = tuple((float(x), float(y)) for x, y in zip(fpr, tpr))
    return Curve(points=points, thresholds=tuple(float(t) for t in thresholds), area=area, kind="roc")


def pr_curve(scores, labels) -> Curve:
    """Precision-recall curve with average-precision (step sum) area."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise DegenerateInputError("PR curve needs at least one positive label")

    thresholds, tp, fp = _sweep(scores, labels)
    recall = tp / n_pos
    precision = tp / (tp + fp)
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    area = float(np.sum(precision * (recall - prev_recall)))
    points = tuple((float(x), float(y)) for x, y in zip(recall, precision))
    return Curve(points=points, thresholds=tuple(float(t) for t in thresholds), area=area, kind="pr")


def evaluate(probabilities, true_labels) -> EvaluationReport:
    """Full evaluation of a probability matrix against true class indices.

    Predicted labels are per-row argmax (ties to the lowest index). Per-class
    curves use each class's probability column as the score in a one-vs-rest
    reduction; macro AUCs average the defined classes. Degenerate classes are
    flagged rather than raised.
    """
    probs = np.asarray(probabilities, dtype=np.float64)
    truth = np.asarray(true_labels).astype(np.int64)
    if probs.ndim != 2 or probs.shape[1] != N_CLASSES:
        raise MetricsInputError(f"probabilities must be (n, {N_CLASSES}), got {probs.shape}")
    if probs.shape[0] != truth.shape[0]:
        raise MetricsInputError("probabilities and labels disagree in length")
    if (probs < 0).any() or (np.abs(probs.sum(axis=1) - 1.0) > 1e-6).any():
        raise MetricsInputError("probability rows must be nonnegative and sum to 1 within 1e-6")

    predicted = np.argmax(probs, axis=1)
    matrix = confusion(truth, predicted)
    summary = precision_recall(matrix)
    flags = [f"precision_undefined_class_{c}" for c in summary.undefined_precision]
    flags += [f"recall_undefined_class_{c}" for c in summary.undefined_recall]
    mcc_value = mcc(matrix)
    if not mcc_defined(matrix):
        flags.append("mcc_denominator_zero")

    roc_curves: list[Curve | None] = []
    pr_curves: list[Curve | None] = []
    for c in range(N_CLASSES):
        binary = (truth == c).astype(np.int64)
        try:
            roc_curves.append(roc_curve(probs[:, c], binary))
        except DegenerateInputError:
            roc_curves.append(None)
            flags.append(f"roc_undefined_class_{c}")
        try:
            pr_curves.append(pr_curve(probs[:, c], binary))
        except DegenerateInputError:
            pr_curves.append(None)
            flags.append(f"pr_undefined_class_{c}")

    roc_auc = tuple(c.area if c else None for c in roc_curves)
    pr_auc = tuple(c.area if c else None for c in pr_curves)
    roc_defined = [a for a in roc_auc if a is not None]
    pr_defined = [a for a in pr_auc if a is not None]

    return EvaluationReport(
        matrix=matrix,
        accuracy=accuracy(matrix),
        precision_macro=summary.precision_macro,
        precision_weighted=summary.precision_weighted,
        recall_macro=summary.recall_macro,
        recall_weighted=summary.recall_weighted,
        per_class_precision=summary.precision,
        per_class_recall=summary.recall,
        mcc=mcc_value,
        roc_curves=tuple(roc_curves),
        pr_curves=tuple(pr_curves),
        roc_auc=roc_auc,
        pr_auc=pr_auc,
        roc_auc_macro=float(np.mean(roc_defined)) if roc_defined else None,
        pr_auc_macro=float(np.mean(pr_defined)) if pr_defined else None,
        flags=tuple(flags),
    )


def report_to_text(report: EvaluationReport) -> str:
    """Machine-readable key=value rendering of the scalar metrics."""
    lines = ["[confusion_matrix]"]
    for row in report.matrix.counts:
        lines.append(" ".join(str(v) for v in row))
    lines.append("[scalars]")
    lines.append(f"accuracy={report.accuracy!r}")
    lines.append(f"precision_macro={report.precision_macro!r}")
    lines.append(f"precision_weighted={report.precision_weighted!r}")
    lines.append(f"recall_macro={report.recall_macro!r}")
    lines.append(f"recall_weighted={report.recall_weighted!r}")
    lines.append(f"mcc={report.mcc!r}")
    for c in range(N_CLASSES):
        lines.append(f"precision_class_{c}={report.per_class_precision[c]!r}")
        lines.append(f"recall_class_{c}={report.per_class_recall[c]!r}")
        lines.append(f"roc_auc_class_{c}={report.roc_auc[c]!r}")
        lines.append(f"pr_auc_class_{c}={report.pr_auc[c]!r}")
    lines.append(f"roc_auc_macro={report.roc_auc_macro!r}")
    lines.append(f"pr_auc_macro={report.pr_auc_macro!r}")
    if report.flags:
        lines.append("[flags]")
        lines.extend(report.flags)
    return "\n".join(lines) + "\n"


def curve_to_csv(curve: Curve) -> str:
    """Curve points as CSV for external plotting."""
    header = "fpr,tpr,threshold" if curve.kind == "roc" else "recall,precision,threshold"
    rows = [header]
    for (x, y), t in zip(curve.points, curve.thresholds):
        rows.append(f"{x!r},{y!r},{t!r}")
    return "\n".join(rows) + "\n"
