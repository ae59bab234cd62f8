"""Wrapper-criterion feature selection, grid search and permutation importance.

All three score candidates by pooled cross-validated weighted ROC, the
threshold-invariant figure used for model comparison throughout the toolkit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, stratified_kfold
from .evaluate import cross_validate, evaluate
from .models import ClassifierSpec, TrainedModel, grid_for, train

IMPROVEMENT_EPSILON = 1e-4


def _cv_roc(spec: ClassifierSpec, data: Dataset, folds: int, seed: int) -> float:
    return cross_validate(spec, data, folds, seed).weighted.roc_auc


def greedy_feature_select(
    spec: ClassifierSpec,
    data: Dataset,
    direction: str = "forward",
    folds: int = 10,
    seed: int = 0,
) -> tuple[str, ...]:
    """Greedy stepwise selection maximizing pooled CV weighted ROC.

    Forward adds the best feature while any addition improves the score by
    more than 1e-4 (the first feature is always added).  Backward removes the
    feature whose removal scores best while that costs no more than 1e-4, and
    never drops below one feature.  Score ties break by column order.
    """
    if direction not in ("forward", "backward"):
        raise ValueError(f"unknown direction {direction!r}")
    if len(data.feature_names) < 2:
        raise ValueError("need at least 2 features")

    names = list(data.feature_names)
    if direction == "forward":
        selected: list[str] = []
        current = -np.inf
        while len(selected) < len(names):
            best_name, best_score = None, -np.inf
            for name in names:
                if name in selected:
                    continue
                score = _cv_roc(spec, data.select_features(selected + [name]), folds, seed)
                if score > best_score + 1e-12:
                    best_name, best_score = name, score
            assert best_name is not None
            if selected and best_score <= current + IMPROVEMENT_EPSILON:
                break
            selected.append(best_name)
            current = best_score
        return tuple(selected)

    selected = list(names)
    current = _cv_roc(spec, data, folds, seed)
    while len(selected) > 1:
        best_name, best_score = None, -np.inf
        for name in selected:
            remaining = [n for n in selected if n != name]
            score = _cv_roc(spec, data.select_features(remaining), folds, seed)
            if score > best_score + 1e-12:
                best_name, best_score = name, score
        assert best_name is not None
        if best_score < current - IMPROVEMENT_EPSILON:
            break
        selected.remove(best_name)
        current = best_score
    return tuple(selected)


@dataclass(frozen=True)
class FeatureImportance:
    """Feature name -> importance in [0, 1], normalized so the maximum is 1."""

    scores: dict[str, float]

    def ranked(self) -> list[tuple[str, float]]:
        return sorted(self.scores.items(), key=lambda item: (-item[1], item[0]))


def permutation_importance(
    model: TrainedModel, data: Dataset, repeats: int = 5, seed: int = 0
) -> FeatureImportance:
    """Mean weighted-ROC drop when one column is shuffled, clipped at zero and
    max-normalized."""
    if tuple(data.feature_names) != tuple(model.feature_names):
        raise ValueError("dataset schema does not match the model")
    baseline = evaluate(model.predict_proba(data.X), list(data.y), model.classes).weighted.roc_auc
    drops: dict[str, float] = {}
    for column, name in enumerate(data.feature_names):
        losses = []
        for repeat in range(repeats):
            rng = np.random.default_rng([seed, column, repeat])
            shuffled = data.X.copy()
            shuffled[:, column] = rng.permutation(shuffled[:, column])
            score = evaluate(
                model.predict_proba(shuffled), list(data.y), model.classes
            ).weighted.roc_auc
            losses.append(baseline - score)
        drops[name] = max(0.0, float(np.mean(losses)))
    top = max(drops.values())
    if top > 0:
        drops = {name: value / top for name, value in drops.items()}
    return FeatureImportance(scores=drops)


def cv_permutation_importance(
    spec: ClassifierSpec, data: Dataset, folds: int = 10, repeats: int = 5, seed: int = 0
) -> FeatureImportance:
    """Permutation importance evaluated out-of-fold.

    Fold models are fitted once on unshuffled training splits; each column is
    then permuted and the pooled held-out weighted ROC recomputed, so the drop
    measures dependence the model cannot mask by memorizing training rows.
    """
    plan = stratified_kfold(data, folds, seed)
    classes = data.classes
    all_rows = np.arange(data.n_rows)
    fold_models = []
    for fold_index, test_idx in enumerate(plan):
        train_idx = np.setdiff1d(all_rows, test_idx)
        fold_models.append((test_idx, train(spec, data.subset(train_idx), seed=seed + fold_index)))

    def pooled_roc(X: np.ndarray) -> float:
        proba = np.empty((data.n_rows, len(classes)))
        for test_idx, model in fold_models:
            fold_proba = model.predict_proba(X[test_idx])
            for column, cls in enumerate(classes):
                proba[test_idx, column] = fold_proba[:, model.classes.index(cls)]
        return evaluate(proba, list(data.y), classes).weighted.roc_auc

    baseline = pooled_roc(data.X)
    drops: dict[str, float] = {}
    for column, name in enumerate(data.feature_names):
        losses = []
        for repeat in range(repeats):
            rng = np.random.default_rng([seed, column, repeat])
            shuffled = data.X.copy()
            shuffled[:, column] = rng.permutation(shuffled[:, column])
            losses.append(baseline - pooled_roc(shuffled))
        drops[name] = max(0.0, float(np.mean(losses)))
    top = max(drops.values())
    if top > 0:
        drops = {name: value / top for name, value in drops.items()}
    return FeatureImportance(scores=drops)


def grid_search(
    family: str, data: Dataset, folds: int, seed: int
) -> tuple[ClassifierSpec, list[tuple[ClassifierSpec, float]]]:
    """Evaluate the documented hyperparameter grid by pooled CV weighted ROC.

    Returns the winning spec (ties keep the earlier grid point) and the whole
    scored grid for reporting.
    """
    results = []
    best_spec, best_score = None, -np.inf
    for spec in grid_for(family):
        score = _cv_roc(spec, data, folds, seed)
        results.append((spec, score))
        if score > best_score + 1e-12:
            best_spec, best_score = spec, score
    assert best_spec is not None
    return best_spec, results
