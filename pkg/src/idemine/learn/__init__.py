"""Classifier training, evaluation and feature selection over feature tables."""

from .dataset import Dataset, add_noise_features, stratified_kfold
from .evaluate import (
    EVAL_CSV_COLUMNS,
    ClassMetrics,
    EvalReport,
    cross_validate,
    evaluate,
    out_of_fold_probabilities,
    prc_auc,
    roc_auc,
)
from .models import (
    FAMILIES,
    HYPERPARAMETER_GRIDS,
    MODEL_FORMAT_TAG,
    ClassifierSpec,
    TrainedModel,
    grid_for,
    train,
)
from .select import (
    FeatureImportance,
    cv_permutation_importance,
    greedy_feature_select,
    grid_search,
    permutation_importance,
)

__all__ = [
    "Dataset",
    "add_noise_features",
    "stratified_kfold",
    "ClassMetrics",
    "EvalReport",
    "EVAL_CSV_COLUMNS",
    "evaluate",
    "cross_validate",
    "out_of_fold_probabilities",
    "roc_auc",
    "prc_auc",
    "ClassifierSpec",
    "TrainedModel",
    "train",
    "FAMILIES",
    "HYPERPARAMETER_GRIDS",
    "MODEL_FORMAT_TAG",
    "grid_for",
    "FeatureImportance",
    "cv_permutation_importance",
    "greedy_feature_select",
    "grid_search",
    "permutation_importance",
]
