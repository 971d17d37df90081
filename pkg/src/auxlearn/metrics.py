"""Confusion matrices, per-class precision/recall/F1 and text report tables.

Undefined ratios (zero denominators) are ``None`` and render as ``NA``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from decimal import ROUND_DOWN, Decimal
from typing import Optional, Sequence

import numpy as np

from auxlearn.errors import DomainError

NA = "NA"


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    counts: np.ndarray
    class_names: tuple

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise DomainError(f"confusion matrix must be square, got {c.shape}")
        if np.any(c < 0):
            raise DomainError("confusion matrix has negative counts")
        names = tuple(self.class_names)
        if len(names) != c.shape[0]:
            raise DomainError("class_names length does not match matrix size")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)
        object.__setattr__(self, "class_names", names)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other):
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return self.class_names == other.class_names and np.array_equal(self.counts, other.counts)

    def permuted(self, perm: Sequence[int]) -> "ConfusionMatrix":
        """Relabel classes so that new class ``i`` is old class ``perm[i]``."""
        perm = list(perm)
        return ConfusionMatrix(self.counts[np.ix_(perm, perm)], [self.class_names[i] for i in perm])


@dataclass(frozen=True)
class ClassReport:
    class_names: tuple
    precision: tuple
    recall: tuple
    f1: tuple
    accuracy: float
    support: tuple = field(default=())


def confusion_matrix(true_labels, predicted_labels, num_classes: int,
                     class_names: Optional[Sequence[str]] = None) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64).ravel()
    p = np.asarray(predicted_labels, dtype=np.int64).ravel()
    if t.shape != p.shape:
        raise DomainError(f"{t.size} true labels vs {p.size} predictions")
    if t.size and (min(t.min(), p.min()) < 0 or max(t.max(), p.max()) >= num_classes):
        raise DomainError(f"labels must lie in [0, {num_classes})")
    counts = np.bincount(t * num_classes + p, minlength=num_classes * num_classes)
    names = class_names if class_names is not None else [str(i) for i in range(num_classes)]
    return ConfusionMatrix(counts.reshape(num_classes, num_classes), names)


def _ratio(num, den):
    return None if den == 0 else num / den


def class_report(cm: ConfusionMatrix) -> ClassReport:
    c = cm.counts
    total = int(c.sum())
    if total == 0:
        raise DomainError("confusion matrix is empty")
    diag = np.diag(c)
    rows = c.sum(axis=1)
    cols = c.sum(axis=0)
    precision, recall, f1 = [], [], []
    for k in range(c.shape[0]):
        p = _ratio(int(diag[k]), int(cols[k]))
        r = _ratio(int(diag[k]), int(rows[k]))
        precision.append(p)
        recall.append(r)
        f1.append(None if p is None or r is None or p + r == 0 else 2 * p * r / (p + r))
    return ClassReport(
        cm.class_names, tuple(precision), tuple(recall), tuple(f1),
        float(diag.sum()) / total, tuple(int(v) for v in rows),
    )


def majority_baseline(class_counts) -> float:
    """Accuracy of always predicting the largest class."""
    counts = np.asarray(class_counts, dtype=np.float64)
    if counts.size == 0 or np.any(counts < 0) or counts.sum() <= 0:
        raise DomainError("need at least one positive class count")
    return float(counts.max() / counts.sum())


def fmt(value: Optional[float], decimals: int) -> str:
    # str.format rounds the exact binary value, ties to even
    return NA if value is None else f"{value:.{decimals}f}"


def fmt_truncated(value: float, decimals: int) -> str:
    """Cut (not round) to ``decimals`` places: 0.1860465116 -> ``0.186046511``."""
    return str(Decimal(repr(float(value))).quantize(Decimal(1).scaleb(-decimals), rounding=ROUND_DOWN))


def fmt_percent(value: float, decimals: int = 2) -> str:
    """Percentage cut to ``decimals`` places, e.g. 21875/26875 -> ``81.39%``."""
    return fmt_truncated(float(Decimal(repr(float(value))) * 100), decimals) + "%"


@dataclass(frozen=True)
class ExperimentResult:
    label: str
    report: ClassReport
    confusion: ConfusionMatrix
    loss: Optional[float] = None


def _table(header, rows):
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]

    def line(cells):
        return "| " + " | ".join(str(c).ljust(w) for c, w in zip(cells, widths)) + " |"

    rule = "+-" + "-+-".join("-" * w for w in widths) + "-+"
    return "\n".join([rule, line(header), rule, *(line(r) for r in rows), rule])


def _display(name: str) -> str:
    return name[:1].upper() + name[1:]


def _class_union(results):
    names = []
    for res in results:
        for n in res.report.class_names:
            if n not in names:
                names.append(n)
    return names


def render_confusion(cm: ConfusionMatrix) -> str:
    header = ["true \\ pred"] + [_display(n) for n in cm.class_names]
    rows = [[_display(n)] + [str(v) for v in row] for n, row in zip(cm.class_names, cm.counts)]
    return _table(header, rows)


def render_report(results: Sequence[ExperimentResult]):
    """Render summary, per-class and confusion tables.

    Returns ``(text, delimited)``; the delimited twin has one row per
    (experiment, class) with columns experiment, class, precision, recall, f1,
    accuracy, loss. A class absent from an experiment appears as ``NA``.
    """
    if not results:
        raise DomainError("nothing to report")
    summary = _table(
        ["Experiment", "Test Accuracy", "Test Loss"],
        [[r.label, fmt(r.report.accuracy, 5), fmt(r.loss, 5)] for r in results],
    )
    classes = _class_union(results)
    per_class_rows = []
    for name in classes:
        for res in results:
            rep = res.report
            if name in rep.class_names:
                k = rep.class_names.index(name)
                vals = [fmt(rep.precision[k], 2), fmt(rep.recall[k], 2), fmt(rep.f1[k], 2)]
            else:
                vals = [NA, NA, NA]
            per_class_rows.append([_display(name), res.label, *vals])
    per_class = _table(["Class", "Model", "Precision", "Recall", "F1-Score"], per_class_rows)

    parts = ["Test results", summary, "", "Precision, recall and F1-score", per_class]
    for res in results:
        parts += ["", f"Confusion matrix: {res.label}", render_confusion(res.confusion)]
    text = "\n".join(parts) + "\n"

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["experiment", "class", "precision", "recall", "f1", "accuracy", "loss"])
    for res in results:
        rep = res.report
        for name in classes:
            if name in rep.class_names:
                k = rep.class_names.index(name)
                p, r, f = rep.precision[k], rep.recall[k], rep.f1[k]
            else:
                p = r = f = None
            writer.writerow([
                res.label, name,
                *(NA if v is None else repr(float(v)) for v in (p, r, f)),
                repr(float(rep.accuracy)),
                NA if res.loss is None else repr(float(res.loss)),
            ])
    return text, buf.getvalue()
