"""Classification quality reporting and cross-validation.

Per-class figures are one-vs-rest: TP/FP rate, precision, recall, F-measure
and MCC come from the argmax confusion matrix (prediction ties resolve to the
lexicographically first class), ROC AUC uses the rank statistic with ties
counted half, and PRC AUC is the step interpolation of precision over
descending score thresholds.  The weighted row is the class-support-weighted
mean and cross-validation pools out-of-fold probabilities before evaluating
once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..stats import average_ranks
from .dataset import Dataset, stratified_kfold
from .models import ClassifierSpec, train


@dataclass(frozen=True)
class ClassMetrics:
    tp_rate: float
    fp_rate: float
    precision: float
    recall: float
    f_measure: float
    mcc: float
    roc_auc: float
    prc_auc: float
    support: int


@dataclass(frozen=True)
class EvalReport:
    per_class: dict[str, ClassMetrics]
    weighted: ClassMetrics
    accuracy: float
    n: int

    def as_rows(self) -> list[dict]:
        """Rows for CSV export, one per class plus the weighted average."""
        rows = []
        for label, m in self.per_class.items():
            rows.append(_metrics_row(label, m, None))
        rows.append(_metrics_row("W. Avg.", self.weighted, self.accuracy))
        return rows


EVAL_CSV_COLUMNS = ("Class", "TP", "FP", "Pre.", "Rec.", "F-M.", "MCC", "ROC", "PRC", "Accuracy")


def _metrics_row(label: str, m: ClassMetrics, accuracy: float | None) -> dict:
    return {
        "Class": label,
        "TP": m.tp_rate,
        "FP": m.fp_rate,
        "Pre.": m.precision,
        "Rec.": m.recall,
        "F-M.": m.f_measure,
        "MCC": m.mcc,
        "ROC": m.roc_auc,
        "PRC": m.prc_auc,
        "Accuracy": "" if accuracy is None else accuracy,
    }


def roc_auc(scores: Sequence[float], positive: Sequence[bool]) -> float:
    """Rank-statistic AUC: probability a random positive outranks a random
    negative, with tied scores counted half."""
    scores = np.asarray(scores, dtype=float)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative examples")
    ranks = average_ranks(scores)
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def prc_auc(scores: Sequence[float], positive: Sequence[bool]) -> float:
    """Area under the precision-recall curve by step interpolation over thresholds."""
    scores = np.asarray(scores, dtype=float)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    if n_pos == 0 or n_pos == len(positive):
        raise ValueError("PRC needs both positive and negative examples")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_pos = positive[order]
    area = 0.0
    prev_recall = 0.0
    tp = fp = 0
    for i in range(len(sorted_scores)):
        tp += int(sorted_pos[i])
        fp += int(not sorted_pos[i])
        if i + 1 < len(sorted_scores) and sorted_scores[i + 1] == sorted_scores[i]:
            continue  # group tied scores into one threshold
        recall = tp / n_pos
        precision = tp / (tp + fp)
        area += (recall - prev_recall) * precision
        prev_recall = recall
    return float(area)


def _binary_mcc(tp: int, fp: int, fn: int, tn: int) -> float:
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return float((tp * tn - fp * fn) / np.sqrt(denom))


def evaluate(
    probabilities,
    labels: Sequence[str],
    classes: Sequence[str] | None = None,
) -> EvalReport:
    """Score per-row class distributions against true labels.

    ``probabilities`` has one column per class in lexicographic class order.
    """
    proba = np.asarray(probabilities, dtype=float)
    labels = list(labels)
    if proba.ndim != 2 or proba.shape[0] != len(labels):
        raise ValueError("probabilities and labels length mismatch")
    if proba.shape[0] < 2:
        raise ValueError("need at least 2 rows")
    if classes is None:
        classes = tuple(sorted(set(labels)))
    else:
        classes = tuple(classes)
    if proba.shape[1] != len(classes):
        raise ValueError(f"expected {len(classes)} probability columns, got {proba.shape[1]}")
    if np.any(proba < -1e-9) or np.any(np.abs(proba.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("rows must be probability distributions")
    unknown = set(labels) - set(classes)
    if unknown:
        raise ValueError(f"labels outside class list: {sorted(unknown)}")

    y_true = np.asarray(labels)
    predicted = np.asarray([classes[i] for i in np.argmax(proba, axis=1)])
    accuracy = float(np.mean(predicted == y_true))

    per_class: dict[str, ClassMetrics] = {}
    for column, cls in enumerate(classes):
        actual_pos = y_true == cls
        predicted_pos = predicted == cls
        tp = int(np.sum(actual_pos & predicted_pos))
        fp = int(np.sum(~actual_pos & predicted_pos))
        fn = int(np.sum(actual_pos & ~predicted_pos))
        tn = int(np.sum(~actual_pos & ~predicted_pos))
        support = tp + fn
        tp_rate = tp / support if support else 0.0
        fp_rate = fp / (fp + tn) if (fp + tn) else 0.0
        precision = tp / (tp + fp) if (tp + fp) else 0.0
        recall = tp_rate
        f_measure = (
            2 * precision * recall / (precision + recall) if (precision + recall) else 0.0
        )
        per_class[cls] = ClassMetrics(
            tp_rate=tp_rate,
            fp_rate=fp_rate,
            precision=precision,
            recall=recall,
            f_measure=f_measure,
            mcc=_binary_mcc(tp, fp, fn, tn),
            roc_auc=roc_auc(proba[:, column], actual_pos),
            prc_auc=prc_auc(proba[:, column], actual_pos),
            support=support,
        )

    total = sum(m.support for m in per_class.values())
    weighted = ClassMetrics(
        **{
            name: sum(getattr(m, name) * m.support for m in per_class.values()) / total
            for name in (
                "tp_rate",
                "fp_rate",
                "precision",
                "recall",
                "f_measure",
                "mcc",
                "roc_auc",
                "prc_auc",
            )
        },
        support=total,
    )
    return EvalReport(per_class=per_class, weighted=weighted, accuracy=accuracy, n=len(labels))


def out_of_fold_probabilities(
    spec: ClassifierSpec, data: Dataset, folds: int, seed: int
) -> np.ndarray:
    """Pooled out-of-fold class probabilities, aligned with data rows."""
    plan = stratified_kfold(data, folds, seed)
    classes = data.classes
    proba = np.full((data.n_rows, len(classes)), np.nan)
    all_rows = np.arange(data.n_rows)
    for fold_index, test_idx in enumerate(plan):
        train_idx = np.setdiff1d(all_rows, test_idx)
        try:
            model = train(spec, data.subset(train_idx), seed=seed + fold_index)
        except Exception as exc:
            raise type(exc)(f"fold {fold_index}: {exc}") from exc
        fold_proba = model.predict_proba(data.X[test_idx])
        # stratification guarantees every class reaches every training split
        for column, cls in enumerate(classes):
            proba[test_idx, column] = fold_proba[:, model.classes.index(cls)]
    return proba


def cross_validate(spec: ClassifierSpec, data: Dataset, folds: int, seed: int) -> EvalReport:
    """Stratified k-fold: train on k-1 folds, pool held-out probabilities,
    evaluate once."""
    proba = out_of_fold_probabilities(spec, data, folds, seed)
    return evaluate(proba, list(data.y), classes=data.classes)
