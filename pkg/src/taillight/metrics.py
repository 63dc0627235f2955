"""Confusion matrices and classification metrics.

Convention: ``counts[p, a]`` counts samples predicted as ``p`` whose actual
class is ``a`` (rows predicted, columns actual).  Overall accuracy is the
micro value ``trace / total``; overall precision, specificity, sensitivity
and F1 are unweighted means of the per-class values; kappa is the multiclass
Cohen's kappa with chance agreement from the row/column marginals.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset_io import BehaviorClass

RATE_NAMES = ("accuracy", "precision", "specificity", "sensitivity", "f1")
OVERALL_NAMES = RATE_NAMES + ("kappa",)


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray
    class_names: tuple[str, ...] = tuple(c.label for c in BehaviorClass)

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise MetricsError("confusion matrix must be square")
        if not np.issubdtype(c.dtype, np.integer):
            if not np.all(np.equal(np.mod(c, 1), 0)):
                raise MetricsError("confusion counts must be integers")
            c = c.astype(np.int64)
        if (c < 0).any():
            raise MetricsError("confusion counts must be nonnegative")
        if c.sum() <= 0:
            raise MetricsError("confusion matrix is empty")
        object.__setattr__(self, "counts", c.astype(np.int64))
        if len(self.class_names) != c.shape[0]:
            object.__setattr__(self, "class_names", tuple(str(i) for i in range(c.shape[0])))

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class ClassCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class ClassMetrics:
    accuracy: float
    precision: float
    specificity: float
    sensitivity: float
    f1: float
    degenerate: tuple[str, ...] = ()

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, n) for n in RATE_NAMES)


@dataclass(frozen=True)
class OverallMetrics:
    accuracy: float
    precision: float
    specificity: float
    sensitivity: float
    f1: float
    kappa: float


@dataclass(frozen=True)
class MetricsReport:
    cm: ConfusionMatrix
    per_class: dict[str, ClassMetrics]
    counts: dict[str, ClassCounts]
    binary_kappa: dict[str, float]
    overall: OverallMetrics
    degenerate: tuple[str, ...] = field(default=())


def confusion_matrix(preds: Sequence[int], labels: Sequence[int], k: int = 4,
                     class_names: Sequence[str] | None = None) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise MetricsError("predictions and labels must be equal-length sequences")
    if preds.size == 0:
        raise MetricsError("no samples")
    if preds.min() < 0 or labels.min() < 0 or preds.max() >= k or labels.max() >= k:
        raise MetricsError(f"class ids must lie in [0, {k})")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (preds, labels), 1)
    names = tuple(class_names) if class_names is not None else None
    if names is None:
        names = tuple(c.label for c in BehaviorClass) if k == len(BehaviorClass) else ()
    return ConfusionMatrix(counts, names)


def per_class_counts(cm: ConfusionMatrix, class_id: int) -> ClassCounts:
    if not 0 <= class_id < cm.k:
        raise MetricsError(f"class id {class_id} out of range")
    c = cm.counts
    tp = int(c[class_id, class_id])
    fp = int(c[class_id].sum()) - tp
    fn = int(c[:, class_id].sum()) - tp
    return ClassCounts(tp, cm.total - tp - fp - fn, fp, fn)


def _ratio(num: float, den: float, name: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def class_metrics(counts: ClassCounts) -> ClassMetrics:
    if counts.total <= 0:
        raise MetricsError("class counts are empty")
    flags: list[str] = []
    tp, tn, fp, fn = counts.tp, counts.tn, counts.fp, counts.fn
    acc = (tp + tn) / counts.total
    pre = _ratio(tp, tp + fp, "precision", flags)
    spe = _ratio(tn, tn + fp, "specificity", flags)
    sen = _ratio(tp, tp + fn, "sensitivity", flags)
    f1 = _ratio(2 * pre * sen, pre + sen, "f1", flags)
    return ClassMetrics(acc, pre, spe, sen, f1, tuple(flags))


def cohen_kappa(cm: ConfusionMatrix) -> float:
    c = cm.counts.astype(np.float64)
    n = c.sum()
    p_o = np.trace(c) / n
    p_e = float(np.sum(c.sum(axis=0) * c.sum(axis=1))) / n ** 2
    if p_e >= 1.0:
        raise MetricsError("kappa undefined: expected agreement is 1")
    return float((p_o - p_e) / (1.0 - p_e))


def binary_kappa(counts: ClassCounts) -> float:
    """Cohen's kappa of the one-vs-rest 2x2 table; 0 when undefined."""
    table = np.array([[counts.tp, counts.fp], [counts.fn, counts.tn]])
    try:
        return cohen_kappa(ConfusionMatrix(table, ("pos", "neg")))
    except MetricsError:
        return 0.0


def overall_report(cm: ConfusionMatrix) -> MetricsReport:
    per_class, counts, bkappa = {}, {}, {}
    flags = []
    for i, name in enumerate(cm.class_names):
        cc = per_class_counts(cm, i)
        m = class_metrics(cc)
        counts[name], per_class[name], bkappa[name] = cc, m, binary_kappa(cc)
        flags.extend(f"{name}.{f}" for f in m.degenerate)
    rates = np.array([m.as_tuple() for m in per_class.values()])
    macro = rates.mean(axis=0)
    try:
        kappa = cohen_kappa(cm)
    except MetricsError:
        kappa = 0.0
        flags.append("kappa")
    overall = OverallMetrics(
        accuracy=float(np.trace(cm.counts) / cm.total),
        precision=float(macro[1]), specificity=float(macro[2]),
        sensitivity=float(macro[3]), f1=float(macro[4]), kappa=kappa)
    return MetricsReport(cm, per_class, counts, bkappa, overall, tuple(flags))


def robustness_drop(a: OverallMetrics | MetricsReport,
                    b: OverallMetrics | MetricsReport) -> dict[str, float]:
    """``a - b`` per metric: rates in percentage points, kappa as a raw difference."""
    a = a.overall if isinstance(a, MetricsReport) else a
    b = b.overall if isinstance(b, MetricsReport) else b
    out = {n: (getattr(a, n) - getattr(b, n)) * 100.0 for n in RATE_NAMES}
    out["kappa"] = a.kappa - b.kappa
    return out


def overall_from_percentages(acc, pre, spe, sen, f1, kappa) -> OverallMetrics:
    return OverallMetrics(acc / 100.0, pre / 100.0, spe / 100.0, sen / 100.0, f1 / 100.0, kappa)


# --------------------------------------------------------------------------
# rendering

def format_matrix(cm: ConfusionMatrix) -> str:
    names = list(cm.class_names)
    width = max(max(len(n) for n in names), len(str(cm.counts.max())), len("pred\\actual"))
    lines = ["pred\\actual".ljust(width) + "".join(f" {n:>{width}}" for n in names)]
    for name, row in zip(names, cm.counts):
        lines.append(name.ljust(width) + "".join(f" {v:>{width}d}" for v in row))
    return "\n".join(lines)


def report_items(report: MetricsReport) -> list[tuple[str, str]]:
    """Flat ``key -> value`` pairs in a fixed order."""
    items = [("samples", str(report.cm.total)), ("classes", ",".join(report.cm.class_names))]
    o = report.overall
    for n in OVERALL_NAMES:
        items.append((f"overall.{n}", f"{getattr(o, n):.6f}"))
    for name in report.cm.class_names:
        cc = report.counts[name]
        m = report.per_class[name]
        items += [(f"class.{name}.{f}", str(getattr(cc, f))) for f in ("tp", "tn", "fp", "fn")]
        items += [(f"class.{name}.{n}", f"{getattr(m, n):.6f}") for n in RATE_NAMES]
        items.append((f"class.{name}.kappa_binary", f"{report.binary_kappa[name]:.6f}"))
    items.append(("degenerate", ",".join(report.degenerate) or "none"))
    return items


def format_report(report: MetricsReport) -> str:
    body = "\n".join(f"{k}: {v}" for k, v in report_items(report))
    return f"{body}\n\nconfusion (rows predicted, columns actual):\n{format_matrix(report.cm)}\n"


def format_report_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scope", "class"] + list(RATE_NAMES) + ["kappa", "tp", "tn", "fp", "fn"])
    for name in report.cm.class_names:
        m, cc = report.per_class[name], report.counts[name]
        w.writerow(["class", name] + [f"{v:.6f}" for v in m.as_tuple()]
                   + [f"{report.binary_kappa[name]:.6f}", cc.tp, cc.tn, cc.fp, cc.fn])
    o = report.overall
    w.writerow(["overall", "all"] + [f"{getattr(o, n):.6f}" for n in OVERALL_NAMES] + ["", "", "", ""])
    return buf.getvalue()


def format_drop(drop: dict[str, float]) -> str:
    return "\n".join(f"drop.{k}: {v:.6f}" for k, v in drop.items()) + "\n"


def parse_matrix_text(text: str) -> ConfusionMatrix:
    """Read a matrix written as whitespace/comma separated integer rows (rows predicted)."""
    rows = []
    names = None
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].replace(",", " ").split()
        if not line:
            continue
        try:
            rows.append([int(v) for v in line])
        except ValueError:
            if rows or names is not None:
                # a labelled row: first token is the class name
                rows.append([int(v) for v in line[1:]])
            else:
                names = tuple(t for t in line if t != "pred\\actual")
    cm_names = names if names and len(names) == len(rows) else ()
    return ConfusionMatrix(np.array(rows, dtype=np.int64), cm_names)
