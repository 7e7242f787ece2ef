"""Exact AUROC / average precision with deterministic tie handling."""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import UndefinedMetric


def _ranked(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape or scores.size == 0:
        raise ValueError("scores and labels must be non-empty and of equal length")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    # stable sort keeps the computation independent of input order up to ties,
    # and tie groups are summed as a block
    order = np.argsort(-scores, kind="stable")
    return kernels.ranked_auc(scores[order], (labels[order] > 0).astype(np.float64))


def auroc(scores, labels):
    """Mann-Whitney estimate P(s+ > s-) + 0.5 P(s+ = s-)."""
    value, _, n_pos, n_neg = _ranked(scores, labels)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("AUROC needs both classes present")
    return value


def auprc(scores, labels):
    """Average precision; tied scores form one threshold step."""
    _, value, n_pos, _ = _ranked(scores, labels)
    if n_pos == 0:
        raise UndefinedMetric("AUPRC needs at least one positive")
    return value


@dataclass
class MacroResult:
    value: float
    per_class: list = field(default_factory=list)
    excluded_count: int = 0


def macro(metric, per_class):
    """Unweighted mean over classes; ``per_class`` holds ``(scores, labels)`` pairs or floats/None."""
    values = []
    for item in per_class:
        if item is None:
            values.append(None)
            continue
        if isinstance(item, (int, float, np.floating)):
            values.append(float(item))
            continue
        try:
            values.append(metric(*item))
        except UndefinedMetric:
            values.append(None)
    defined = [v for v in values if v is not None]
    if not defined:
        raise UndefinedMetric("metric undefined for every class")
    return MacroResult(float(np.mean(defined)), values, len(values) - len(defined))


def task_metrics(task, probs, labels):
    """AUROC/AUPRC for a task given class probabilities (B, width) and labels.

    Binary uses the positive-class column; multiclass is one-vs-rest, multilabel
    per label, both macro-averaged.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    n = probs.shape[0]
    if task.kind == "binary":
        y = labels.astype(np.int64)
        out = {
            "task": task.name,
            "auroc": auroc(probs[:, 1], y),
            "auprc": auprc(probs[:, 1], y),
            "per_class": [],
            "excluded_classes": 0,
            "n_test": int(n),
            "prevalence": float(np.mean(y)),
        }
        return out
    if task.kind == "multiclass":
        bits = np.eye(task.n, dtype=np.int64)[labels.astype(np.int64)]
    else:
        bits = labels.astype(np.int64)
    pairs = [(probs[:, j], bits[:, j]) for j in range(bits.shape[1])]
    roc = macro(auroc, pairs)
    pr = macro(auprc, pairs)
    return {
        "task": task.name,
        "auroc": roc.value,
        "auprc": pr.value,
        "per_class": [{"auroc": a, "auprc": p} for a, p in zip(roc.per_class, pr.per_class)],
        "excluded_classes": roc.excluded_count,
        "n_test": int(n),
        "prevalence": [float(v) for v in bits.mean(axis=0)],
    }
