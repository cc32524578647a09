"""Classification metrics, ROC/AUC and fitting-error buckets."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

CLASSES = ("LCL", "LCR", "LK")
BUCKET_EDGES = (0.1, 0.3, 0.5)
BUCKET_NAMES = ("E<0.1", "0.1<=E<0.3", "0.3<=E<0.5", "0.5<=E")


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows: true class, cols: predicted class
    classes: tuple = CLASSES

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_dict(self) -> dict:
        return {"classes": list(self.classes), "counts": self.counts.astype(int).tolist()}


def _index(values, classes) -> np.ndarray:
    lookup = {c: i for i, c in enumerate(classes)}
    out = []
    for v in values:
        if isinstance(v, (int, np.integer)):
            out.append(int(v))
        else:
            out.append(lookup[v])
    return np.array(out, dtype=int)


def confusion(preds: Sequence, labels: Sequence, classes=CLASSES) -> ConfusionMatrix:
    if len(preds) != len(labels):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(labels)} labels")
    if len(preds) == 0:
        raise ValueError("nothing to evaluate")
    counts = np.zeros((len(classes), len(classes)), dtype=int)
    np.add.at(counts, (_index(labels, classes), _index(preds, classes)), 1)
    return ConfusionMatrix(counts, tuple(classes))


@dataclass
class ClassMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "precision": self.precision, "recall": self.recall, "f1": self.f1, "flags": list(self.flags)}


def _ratio(num: int, den: int, flag: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(flag)
        return 0.0
    return num / den


def class_metrics(cm: ConfusionMatrix) -> dict[str, ClassMetrics]:
    """One-vs-rest accuracy, precision, recall and F1 for every class.

    A zero denominator gives 0 and a flag naming the metric.
    """
    c = cm.counts
    total = cm.total
    if total == 0:
        raise ValueError("empty confusion matrix")
    out = {}
    for k, name in enumerate(cm.classes):
        tp = int(c[k, k])
        fp = int(c[:, k].sum()) - tp
        fn = int(c[k, :].sum()) - tp
        tn = total - tp - fp - fn
        flags: list[str] = []
        precision = _ratio(tp, tp + fp, "precision_undefined", flags)
        recall = _ratio(tp, tp + fn, "recall_undefined", flags)
        if precision + recall == 0:
            flags.append("f1_undefined")
            f1 = 0.0
        else:
            f1 = 2 * precision * recall / (precision + recall)
        out[name] = ClassMetrics((tp + tn) / total, precision, recall, f1, flags)
    return out


def macro_f1(metrics: dict[str, ClassMetrics]) -> float:
    return float(np.mean([m.f1 for m in metrics.values()]))


@dataclass
class RocCurve:
    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    auc: float

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "fpr", "tpr"])
            for th, f, t in zip(self.thresholds, self.fpr, self.tpr):
                w.writerow([repr(float(th)), repr(float(f)), repr(float(t))])


def roc_auc(scores, labels, positive_class, classes=CLASSES) -> RocCurve:
    """One-vs-rest ROC of ``positive_class``.

    ``scores`` is ``(N, n_classes)`` or a 1-D array of positive-class
    scores. A sample is called positive when its score is at least the
    threshold; thresholds run over +inf, every distinct score (descending)
    and -inf. The area is the trapezoid sum.
    """
    scores = np.asarray(scores, dtype=float)
    pos = positive_class if isinstance(positive_class, (int, np.integer)) else classes.index(positive_class)
    s = scores[:, pos] if scores.ndim == 2 else scores
    y = _index(labels, classes) == pos
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both positive and negative samples")
    order = np.argsort(-s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    distinct = np.r_[np.nonzero(np.diff(s_sorted))[0], len(s_sorted) - 1]
    tps = np.cumsum(y_sorted)[distinct]
    fps = (distinct + 1) - tps
    tpr = np.r_[0.0, tps / n_pos, 1.0]
    fpr = np.r_[0.0, fps / n_neg, 1.0]
    thresholds = np.r_[np.inf, s_sorted[distinct], -np.inf]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(thresholds, tpr, fpr, auc)


def fitting_error_buckets(errors) -> dict:
    """Fractions of fitting errors in the four table buckets (left-closed)."""
    errs = [float(e) for e in errors]
    if any(e < 0 for e in errs):
        raise ValueError("fitting errors must be non-negative")
    counts = [0, 0, 0, 0]
    for e in errs:
        counts[int(np.searchsorted(BUCKET_EDGES, e, side="right"))] += 1
    n = len(errs)
    fractions = [Fraction(c, n) if n else Fraction(0) for c in counts]
    return {
        "buckets": list(BUCKET_NAMES),
        "counts": counts,
        "fractions": [float(f) for f in fractions],
        "exact_fractions": [str(f) for f in fractions],
        "n": n,
    }


def evaluation_report(probs: np.ndarray, labels: Sequence[str], classes=CLASSES) -> dict:
    """Confusion matrix, per-class metrics and per-class AUC for one model."""
    probs = np.asarray(probs, dtype=float)
    preds = [classes[int(i)] for i in np.argmax(probs, axis=1)]
    cm = confusion(preds, labels, classes)
    metrics = class_metrics(cm)
    aucs = {}
    for c in classes:
        try:
            aucs[c] = roc_auc(probs, labels, c, classes).auc
        except ValueError:
            aucs[c] = None
    return {
        "n": len(labels),
        "confusion": cm.to_dict(),
        "per_class": {c: m.to_dict() for c, m in metrics.items()},
        "macro_f1": macro_f1(metrics),
        "micro_accuracy": float(np.trace(cm.counts) / cm.total),
        "auc": aucs,
    }


def format_table(report: dict, title: str = "") -> str:
    lines = [title] if title else []
    lines.append(f"{'class':<6}{'acc':>9}{'prec':>9}{'recall':>9}{'f1':>9}{'auc':>9}")
    for c, m in report["per_class"].items():
        auc = report["auc"].get(c)
        auc_s = f"{auc:9.4f}" if auc is not None else f"{'n/a':>9}"
        lines.append(f"{c:<6}{m['accuracy']:9.4f}{m['precision']:9.4f}{m['recall']:9.4f}{m['f1']:9.4f}{auc_s}")
    lines.append(f"macro-F1 {report['macro_f1']:.4f}   accuracy {report['micro_accuracy']:.4f}   n={report['n']}")
    cm = report["confusion"]
    lines.append("confusion (rows true, cols predicted): " + " ".join(cm["classes"]))
    for c, row in zip(cm["classes"], cm["counts"]):
        lines.append(f"  {c:<4}" + "".join(f"{v:6d}" for v in row))
    return "\n".join(lines)


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
