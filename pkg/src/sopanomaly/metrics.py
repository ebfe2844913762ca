"""Detection metrics: confusion matrix, Acc/Pre/Rec/F1 and ROC AUC."""

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import EmptySet, OneClassOnly, UndefinedMetric


@dataclass
class LabeledOutcome:
    label: bool
    score: float
    predicted: bool


@dataclass
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn


def _arrays(outcomes):
    if len(outcomes) == 0:
        raise EmptySet("no outcomes")
    labels = np.array([bool(o.label) for o in outcomes])
    scores = np.array([float(o.score) for o in outcomes])
    preds = np.array([bool(o.predicted) for o in outcomes])
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    return labels, scores, preds


def confusion(outcomes):
    labels, _, preds = _arrays(outcomes)
    return ConfusionMatrix(int(np.sum(labels & preds)), int(np.sum(~labels & preds)),
                           int(np.sum(~labels & ~preds)), int(np.sum(labels & ~preds)))


def _ratio(num, den, name):
    if den == 0:
        raise UndefinedMetric(f"{name} undefined: zero denominator")
    return num / den


def accuracy(cm):
    return _ratio(cm.tp + cm.tn, cm.total, "accuracy")


def precision(cm):
    return _ratio(cm.tp, cm.tp + cm.fp, "precision")


def recall(cm):
    return _ratio(cm.tp, cm.tp + cm.fn, "recall")


def f1_from(pre, rec):
    return _ratio(2.0 * pre * rec, pre + rec, "f1")


def f1(cm):
    return f1_from(precision(cm), recall(cm))


def auc(outcomes):
    """Mann-Whitney AUC: P(random positive outscores random negative), ties 1/2."""
    labels, scores, _ = _arrays(outcomes)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly("AUC needs at least one positive and one negative")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(outcomes):
    """Empirical ROC points (fpr, tpr), thresholds swept from high to low."""
    labels, scores, _ = _arrays(outcomes)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly("ROC needs at least one positive and one negative")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    # one point per distinct score so tied groups form a diagonal segment
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tps = np.cumsum(y)[last]
    fps = np.cumsum(~y)[last]
    return np.r_[0.0, fps / n_neg], np.r_[0.0, tps / n_pos]


def auc_trapezoid(outcomes):
    fpr, tpr = roc_curve(outcomes)
    return float(np.trapezoid(tpr, fpr))


def summary(outcomes):
    """Dict of all metrics; undefined ones map to ``None``."""
    cm = confusion(outcomes)
    out = {}
    for name, fn in (("accuracy", accuracy), ("precision", precision), ("recall", recall), ("f1", f1)):
        try:
            out[name] = fn(cm)
        except UndefinedMetric:
            out[name] = None
    try:
        out["auc"] = auc(outcomes)
    except OneClassOnly:
        out["auc"] = None
    return out, cm


def write_summary(metrics, cm, fh):
    """``metric,value`` rows (percent, one decimal) then the confusion matrix."""
    fh.write("metric,value\n")
    for name in ("accuracy", "precision", "recall", "f1", "auc"):
        v = metrics[name]
        fh.write(f"{name},{'undefined' if v is None else f'{100.0 * v:.1f}'}\n")
    fh.write("tp,fp,tn,fn\n")
    fh.write(f"{cm.tp},{cm.fp},{cm.tn},{cm.fn}\n")
