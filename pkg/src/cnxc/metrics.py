"""Classification metrics: confusion matrix, accuracy/precision/recall/F1, ROC/AUC.

Decision rule: class 1 (Pneumonia) iff probability > 0.5, strictly.
Zero-denominator metrics report 0.0 together with a degenerate flag instead
of NaN, so tiny desk-scale evaluations stay well defined.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, UndefinedAUCError

THRESHOLD = 0.5


@dataclass
class EvalReport:
    tp: int
    tn: int
    fp: int
    fn: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    precision_degenerate: bool = False
    recall_degenerate: bool = False
    f1_degenerate: bool = False
    roc: list = field(default_factory=list)   # (fpr, tpr) points
    auc: float | None = None
    auc_defined: bool = False

    @property
    def n(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def metrics_from_counts(tp: int, tn: int, fp: int, fn: int) -> EvalReport:
    """Metric arithmetic from raw confusion counts (no ROC information)."""
    n = tp + tn + fp + fn
    if n == 0:
        raise ParameterError("empty evaluation")
    accuracy = (tp + tn) / n
    p_den = tp + fp
    r_den = tp + fn
    precision = tp / p_den if p_den else 0.0
    recall = tp / r_den if r_den else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return EvalReport(
        tp=tp, tn=tn, fp=fp, fn=fn,
        accuracy=accuracy, precision=precision, recall=recall, f1=f1,
        precision_degenerate=p_den == 0,
        recall_degenerate=r_den == 0,
        f1_degenerate=precision + recall == 0,
    )


def roc_auc(scores, labels):
    """ROC points at every distinct score plus (0,0)/(1,1), and trapezoidal AUC.

    Tie groups are collapsed into single ROC points, so the trapezoid equals
    the pairwise probability P(score+ > score-) + 0.5 * P(tie).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ParameterError(f"scores {scores.shape} and labels {labels.shape} must be equal 1-d")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError(f"need both classes for ROC, got {n_pos} positive / {n_neg} negative")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < len(s):
        j = i
        while j < len(s) and s[j] == s[i]:
            j += 1
        tp += int(np.sum(y[i:j] == 1))
        fp += int(np.sum(y[i:j] == 0))
        points.append((fp / n_neg, tp / n_pos))
        i = j
    auc = 0.0
    for (x0, y0), (x1, y1) in zip(points[:-1], points[1:]):
        auc += (x1 - x0) * (y0 + y1) / 2.0
    return points, auc


def evaluate_scores(scores, labels) -> EvalReport:
    """Full report from per-sample probabilities and binary labels."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    pred = (scores > THRESHOLD).astype(np.int64)
    tp = int(np.sum((pred == 1) & (labels == 1)))
    tn = int(np.sum((pred == 0) & (labels == 0)))
    fp = int(np.sum((pred == 1) & (labels == 0)))
    fn = int(np.sum((pred == 0) & (labels == 1)))
    report = metrics_from_counts(tp, tn, fp, fn)
    try:
        report.roc, report.auc = roc_auc(scores, labels)
        report.auc_defined = True
    except UndefinedAUCError:
        report.roc, report.auc, report.auc_defined = [], None, False
    return report


# ------------------------------------------------------------ text emission

def format_report(report: EvalReport) -> str:
    lines = [
        "confusion matrix",
        f"  TP={report.tp}  FN={report.fn}",
        f"  FP={report.fp}  TN={report.tn}",
        f"accuracy   {report.accuracy * 100:.2f}%",
        f"precision  {report.precision * 100:.2f}%" + (" (degenerate)" if report.precision_degenerate else ""),
        f"recall     {report.recall * 100:.2f}%" + (" (degenerate)" if report.recall_degenerate else ""),
        f"f1         {report.f1 * 100:.2f}%" + (" (degenerate)" if report.f1_degenerate else ""),
        f"auc        {report.auc:.4f}" if report.auc_defined else "auc        undefined (single-class)",
    ]
    return "\n".join(lines)


def report_kv(report: EvalReport) -> str:
    pairs = [
        ("tp", report.tp),
        ("tn", report.tn),
        ("fp", report.fp),
        ("fn", report.fn),
        ("accuracy", f"{report.accuracy:.6f}"),
        ("precision", f"{report.precision:.6f}"),
        ("recall", f"{report.recall:.6f}"),
        ("f1", f"{report.f1:.6f}"),
        ("precision_degenerate", int(report.precision_degenerate)),
        ("recall_degenerate", int(report.recall_degenerate)),
        ("f1_degenerate", int(report.f1_degenerate)),
        ("auc", f"{report.auc:.6f}" if report.auc_defined else "undefined"),
    ]
    return "\n".join(f"{k}={v}" for k, v in pairs) + "\n"


def roc_text(report: EvalReport) -> str:
    return "\n".join(f"{fpr:.6f} {tpr:.6f}" for fpr, tpr in report.roc) + "\n"
