"""Detection metrics with EV as the positive class.

Undefined ratios (zero denominators) are reported as ``None`` and rendered
as ``undefined``; they are never coerced to zero.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError


@dataclass
class EvalReport:
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float | None
    recall: float | None
    f1: float | None
    auc: float
    roc_points: list[tuple[float, float]] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _labels(labels) -> np.ndarray:
    out = []
    for y in labels:
        if y not in (0, 1):
            raise DataError(f"labels must be 0 or 1, got {y!r}")
        out.append(int(y))
    return np.asarray(out, dtype=int)


def confusion(decisions, labels) -> tuple[int, int, int, int]:
    d = np.asarray(decisions, dtype=int)
    y = _labels(labels)
    if d.shape != y.shape:
        raise DataError(f"{len(d)} decisions but {len(y)} labels")
    tp = int(np.sum((d == 1) & (y == 1)))
    fp = int(np.sum((d == 1) & (y == 0)))
    tn = int(np.sum((d == 0) & (y == 0)))
    fn = int(np.sum((d == 0) & (y == 1)))
    return tp, fp, tn, fn


def f1_score(precision: float | None, recall: float | None) -> float | None:
    """Harmonic mean; undefined when either input is undefined or both are 0."""
    if precision is None or recall is None or precision + recall == 0:
        return None
    return 2.0 * precision * recall / (precision + recall)


def prf(tp: int, fp: int, fn: int) -> tuple[float | None, float | None, float | None]:
    precision = tp / (tp + fp) if tp + fp > 0 else None
    recall = tp / (tp + fn) if tp + fn > 0 else None
    return precision, recall, f1_score(precision, recall)


def roc_auc(scores, labels) -> tuple[list[tuple[float, float]], float]:
    """ROC by sweeping every distinct score as a threshold, AUC by trapezoids.

    Equal scores form a single step, so ties contribute half credit.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = _labels(labels)
    if s.shape != y.shape:
        raise DataError(f"{len(s)} scores but {len(y)} labels")
    pos = int(y.sum())
    neg = len(y) - pos
    if pos == 0 or neg == 0:
        raise DataError("ROC/AUC needs both EV and non-EV consumers")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # last index of each run of equal scores
    step_ends = np.flatnonzero(np.diff(s) != 0)
    step_ends = np.append(step_ends, len(s) - 1)
    tps = np.cumsum(y)[step_ends]
    fps = (step_ends + 1) - tps
    tpr = np.concatenate([[0.0], tps / pos])
    fpr = np.concatenate([[0.0], fps / neg])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return list(zip(fpr.tolist(), tpr.tolist())), auc


def evaluate(decisions, scores, labels) -> EvalReport:
    tp, fp, tn, fn = confusion(decisions, labels)
    precision, recall, f1 = prf(tp, fp, fn)
    points, auc = roc_auc(scores, labels)
    return EvalReport(tp, fp, tn, fn, precision, recall, f1, auc, points)


def pct(x: float | None) -> str:
    return "undefined" if x is None else f"{100.0 * x:.2f}"


def format_table(rows: Sequence[tuple[str, EvalReport]]) -> str:
    head = f"{'Method':<24}{'Precision %':>13}{'Recall %':>11}{'F1 %':>11}{'AUC %':>9}"
    lines = [head, "-" * len(head)]
    for name, r in rows:
        lines.append(
            f"{name:<24}{pct(r.precision):>13}{pct(r.recall):>11}{pct(r.f1):>11}{pct(r.auc):>9}"
        )
    return "\n".join(lines)


def _num(x: float | None) -> str:
    return "undefined" if x is None else format(x, ".17g")


def write_eval_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tp", "fp", "tn", "fn", "precision", "recall", "f1", "auc"])
        w.writerow([report.tp, report.fp, report.tn, report.fn,
                    _num(report.precision), _num(report.recall), _num(report.f1), _num(report.auc)])


def write_roc_csv(points: Sequence[tuple[float, float]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fpr", "tpr"])
        for fpr, tpr in points:
            w.writerow([format(fpr, ".17g"), format(tpr, ".17g")])
