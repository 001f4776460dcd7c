"""Confusion matrix, per-class counts and the imbalance-aware metric suite.

Two averages are carried side by side. ``macro`` is the plain mean over
classes; ``weighted`` weights each class by its support fraction. The
headline "accuracy" is trace/total; the per-class one-vs-rest accuracy averaged
over classes is kept separately as ``mean_binary_accuracy``.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .dataset import CASSAVA_REGISTRY, ClassRegistry
from .errors import (
    BadClassError,
    BadLabelError,
    EmptyInputError,
    LengthMismatchError,
    MissingClassError,
)


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError(f"confusion matrix must be square, got {counts.shape}")
        if (counts < 0).any():
            raise ValueError("confusion matrix counts must be non-negative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def supports(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        """Merge matrices from separate shards."""
        return ConfusionMatrix(self.counts + other.counts)

    def to_text(self) -> str:
        width = max(len(str(int(self.counts.max()))), 1)
        return "".join(" ".join(f"{v:>{width}d}" for v in row) + "\n" for row in self.counts)

    @classmethod
    def from_text(cls, text: str) -> "ConfusionMatrix":
        rows = [[int(v) for v in line.split()] for line in text.splitlines() if line.strip()]
        return cls(np.array(rows, dtype=np.int64))

    def save(self, path: str | os.PathLike) -> Path:
        path = Path(path)
        path.write_text(self.to_text(), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ConfusionMatrix":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def confusion_matrix(y_true: Sequence[int], y_pred: Sequence[int], n_classes: int = 5) -> ConfusionMatrix:
    t = np.asarray(y_true, dtype=np.int64).ravel()
    p = np.asarray(y_pred, dtype=np.int64).ravel()
    if t.size != p.size:
        raise LengthMismatchError(f"{t.size} labels vs {p.size} predictions")
    if t.size == 0:
        raise EmptyInputError("no samples to evaluate")
    for name, arr in (("y_true", t), ("y_pred", p)):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise BadLabelError(f"{name} has labels outside 0..{n_classes - 1}")
    counts = np.bincount(t * n_classes + p, minlength=n_classes * n_classes)
    return ConfusionMatrix(counts.reshape(n_classes, n_classes))


class ClassCounts(NamedTuple):
    tp: int
    tn: int
    fp: int
    fn: int


def per_class_counts(cm: ConfusionMatrix, c: int) -> ClassCounts:
    if not 0 <= c < cm.n_classes:
        raise BadClassError(f"class {c} outside 0..{cm.n_classes - 1}")
    counts = cm.counts
    tp = int(counts[c, c])
    fp = int(counts[:, c].sum()) - tp
    fn = int(counts[c, :].sum()) - tp
    tn = cm.total - tp - fp - fn
    return ClassCounts(tp, tn, fp, fn)


def _ratio(num: int, den: int) -> Fraction:
    # 0/0 -> 0 for never-predicted or absent classes
    return Fraction(num, den) if den > 0 else Fraction(0)


def exact_precision(k: ClassCounts) -> Fraction:
    return _ratio(k.tp, k.tp + k.fp)


def exact_recall(k: ClassCounts) -> Fraction:
    return _ratio(k.tp, k.tp + k.fn)


def exact_binary_accuracy(k: ClassCounts) -> Fraction:
    return _ratio(k.tp + k.tn, k.tp + k.tn + k.fp + k.fn)


def _harmonic(p: Fraction, r: Fraction) -> Fraction:
    return 2 * p * r / (p + r) if p + r > 0 else Fraction(0)


def exact_f1(k: ClassCounts) -> Fraction:
    return _harmonic(exact_precision(k), exact_recall(k))


def precision(k: ClassCounts) -> float:
    return float(exact_precision(k))


def recall(k: ClassCounts) -> float:
    return float(exact_recall(k))


def binary_accuracy(k: ClassCounts) -> float:
    return float(exact_binary_accuracy(k))


def f1(k: ClassCounts) -> float:
    return float(exact_f1(k))


def f1_from(p: float, r: float) -> float:
    return float(_harmonic(Fraction(p), Fraction(r)))


@dataclass(frozen=True)
class PerClassMetrics:
    class_id: int
    precision: float
    recall: float
    f1: float
    support: int
    binary_accuracy: float | None = None
    tp: int | None = None
    tn: int | None = None
    fp: int | None = None
    fn: int | None = None

    @classmethod
    def from_counts(cls, class_id: int, k: ClassCounts) -> "PerClassMetrics":
        return cls(
            class_id, precision(k), recall(k), f1(k), k.tp + k.fn, binary_accuracy(k),
            k.tp, k.tn, k.fp, k.fn,
        )

    @property
    def counts(self) -> ClassCounts | None:
        if None in (self.tp, self.tn, self.fp, self.fn):
            return None
        return ClassCounts(self.tp, self.tn, self.fp, self.fn)

    def exact(self) -> tuple[Fraction, Fraction, Fraction]:
        """(precision, recall, f1) as rationals; exact when counts are known."""
        k = self.counts
        if k is not None:
            return exact_precision(k), exact_recall(k), exact_f1(k)
        return Fraction(self.precision), Fraction(self.recall), Fraction(self.f1)


def per_class_metrics(cm: ConfusionMatrix) -> list[PerClassMetrics]:
    return [PerClassMetrics.from_counts(c, per_class_counts(cm, c)) for c in range(cm.n_classes)]


@dataclass(frozen=True)
class AggregateMetrics:
    mode: str
    precision: float
    recall: float
    f1: float
    overall_accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    macro_f1_of_means: float
    weighted_f1_of_means: float
    mean_binary_accuracy: float | None

    @property
    def accuracy(self) -> float:
        return self.overall_accuracy


def aggregate(per_class: Sequence[PerClassMetrics], mode: str = "weighted", n_classes: int = 5) -> AggregateMetrics:
    """Macro and support-weighted averages of per-class rows.

    Sums are taken over rationals and rounded once, so with known counts the
    weighted recall is bit-identical to trace/total. ``*_f1_of_means`` applies
    the harmonic mean to the already-averaged precision and recall.
    """
    if mode not in ("macro", "weighted"):
        raise ValueError(f"mode must be 'macro' or 'weighted', got {mode!r}")
    ids = sorted(m.class_id for m in per_class)
    if ids != list(range(n_classes)):
        missing = sorted(set(range(n_classes)) - set(ids))
        raise MissingClassError(f"per-class rows must cover classes 0..{n_classes - 1}; missing {missing}")
    rows = sorted(per_class, key=lambda m: m.class_id)

    total = sum(m.support for m in rows)
    if total <= 0:
        raise EmptyInputError("total support is zero")
    exact = [m.exact() for m in rows]

    macro = [sum(e[i] for e in exact) / n_classes for i in range(3)]
    weighted = [sum(m.support * e[i] for m, e in zip(rows, exact)) / total for i in range(3)]
    if all(m.counts is not None for m in rows):
        accuracy = Fraction(sum(m.tp for m in rows), total)
        mean_binary = sum(exact_binary_accuracy(m.counts) for m in rows) / n_classes
    else:
        accuracy = weighted[1]
        accs = [m.binary_accuracy for m in rows]
        mean_binary = None if None in accs else sum(Fraction(a) for a in accs) / n_classes

    chosen = weighted if mode == "weighted" else macro
    return AggregateMetrics(
        mode=mode,
        precision=float(chosen[0]),
        recall=float(chosen[1]),
        f1=float(chosen[2]),
        overall_accuracy=float(accuracy),
        macro_precision=float(macro[0]),
        macro_recall=float(macro[1]),
        macro_f1=float(macro[2]),
        weighted_precision=float(weighted[0]),
        weighted_recall=float(weighted[1]),
        weighted_f1=float(weighted[2]),
        macro_f1_of_means=float(_harmonic(macro[0], macro[1])),
        weighted_f1_of_means=float(_harmonic(weighted[0], weighted[1])),
        mean_binary_accuracy=None if mean_binary is None else float(mean_binary),
    )


def round3(x: float) -> str:
    """Three decimals, halves rounded away from zero."""
    return str(Decimal(repr(float(x))).quantize(Decimal("0.001"), rounding=ROUND_HALF_UP))


REPORT_FIELDS = ("class", "precision", "recall", "f1", "support")


@dataclass(frozen=True)
class ClassificationReport:
    codes: tuple[str, ...]
    rows: tuple[PerClassMetrics, ...]
    summary: AggregateMetrics
    confusion: ConfusionMatrix | None = field(default=None, compare=False)

    @property
    def total_support(self) -> int:
        return sum(m.support for m in self.rows)

    def render_text(self) -> str:
        width = max(12, *(len(c) for c in self.codes))
        head = f"{'':<{width}} {'precision':>9} {'recall':>9} {'f1-score':>9} {'support':>9}"
        lines = [head, ""]
        for code, m in zip(self.codes, self.rows):
            lines.append(
                f"{code:<{width}} {round3(m.precision):>9} {round3(m.recall):>9} {round3(m.f1):>9} {m.support:>9d}"
            )
        s = self.summary
        n = self.total_support
        lines.append("")
        lines.append(f"{'accuracy':<{width}} {'':>9} {'':>9} {round3(s.overall_accuracy):>9} {n:>9d}")
        lines.append(
            f"{'macro avg':<{width}} {round3(s.macro_precision):>9} {round3(s.macro_recall):>9} "
            f"{round3(s.macro_f1):>9} {n:>9d}"
        )
        lines.append(
            f"{'weighted avg':<{width}} {round3(s.weighted_precision):>9} {round3(s.weighted_recall):>9} "
            f"{round3(s.weighted_f1):>9} {n:>9d}"
        )
        if s.mean_binary_accuracy is not None:
            lines.append(f"{'mean binary accuracy':<{width}} {round3(s.mean_binary_accuracy):>9}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        """Full-precision rows so the file re-parses to identical values."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_FIELDS)
        for code, m in zip(self.codes, self.rows):
            writer.writerow([code, repr(m.precision), repr(m.recall), repr(m.f1), m.support])
        s = self.summary
        n = self.total_support
        writer.writerow(["accuracy", "", "", repr(s.overall_accuracy), n])
        writer.writerow(["macro avg", repr(s.macro_precision), repr(s.macro_recall), repr(s.macro_f1), n])
        writer.writerow(
            ["weighted avg", repr(s.weighted_precision), repr(s.weighted_recall), repr(s.weighted_f1), n]
        )
        return buf.getvalue()


def classification_report(cm: ConfusionMatrix, registry: ClassRegistry = CASSAVA_REGISTRY) -> ClassificationReport:
    rows = per_class_metrics(cm)
    return ClassificationReport(
        tuple(registry.codes), tuple(rows), aggregate(rows, "weighted", cm.n_classes), cm
    )


def parse_report_csv(text: str) -> dict[str, dict[str, float]]:
    """Read a report CSV back into ``{row label: {column: value}}``."""
    out: dict[str, dict[str, float]] = {}
    for row in csv.DictReader(io.StringIO(text)):
        label = row.pop("class")
        out[label] = {k: (float(v) if k != "support" else int(v)) for k, v in row.items() if v != ""}
    return out
