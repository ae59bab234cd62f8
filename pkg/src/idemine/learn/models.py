"""Classifier families: CART-style tree, random forest, bagging, ridge
multinomial logistic regression and exact brute-force k-nearest-neighbour.

All training is deterministic for a fixed (spec, data, seed): worker
randomness is derived from the master seed, split ties break by feature index
then threshold, and feature standardization (used by logistic and knn) is
fitted on the training rows only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from ..errors import ConfigurationError, SchemaError
from .dataset import Dataset

MODEL_FORMAT_TAG = "idemine-model/1"

FAMILIES = ("tree", "forest", "bagging", "logistic", "knn")

_DEFAULTS: dict[str, dict] = {
    "tree": {"depth": None, "min_leaf": 1},
    "forest": {"trees": 29, "features": "sqrt", "depth": None, "min_leaf": 1, "bootstrap": True},
    "bagging": {"trees": 10, "depth": None, "min_leaf": 1},
    "logistic": {"ridge": 1e-8},
    "knn": {"neighbours": 3},
}


@dataclass(frozen=True)
class ClassifierSpec:
    """A classifier family plus validated, fully defaulted hyperparameters."""

    family: str
    hyperparameters: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown classifier family {self.family!r}")
        defaults = _DEFAULTS[self.family]
        unknown = set(self.hyperparameters) - set(defaults)
        if unknown:
            raise ConfigurationError(
                f"unknown hyperparameters for {self.family}: {', '.join(sorted(unknown))}"
            )
        merged = {**defaults, **dict(self.hyperparameters)}
        _validate_params(self.family, merged)
        object.__setattr__(self, "hyperparameters", merged)

    def as_dict(self) -> dict:
        return {"family": self.family, "hyperparameters": dict(self.hyperparameters)}


def _validate_params(family: str, params: dict) -> None:
    def require_positive_int(name: str) -> None:
        value = params[name]
        if not isinstance(value, int) or value < 1:
            raise ConfigurationError(f"{family}.{name} must be a positive integer")

    if family in ("tree", "forest", "bagging"):
        if params["depth"] is not None and (not isinstance(params["depth"], int) or params["depth"] < 1):
            raise ConfigurationError(f"{family}.depth must be a positive integer or None")
        require_positive_int("min_leaf")
    if family in ("forest", "bagging"):
        require_positive_int("trees")
    if family == "forest":
        features = params["features"]
        if features is not None and features != "sqrt" and (
            not isinstance(features, int) or features < 1
        ):
            raise ConfigurationError("forest.features must be None, 'sqrt' or a positive integer")
    if family == "logistic":
        if not isinstance(params["ridge"], (int, float)) or params["ridge"] < 0:
            raise ConfigurationError("logistic.ridge must be non-negative")
    if family == "knn":
        require_positive_int("neighbours")


def _gini(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    return float(1.0 - np.sum(p * p))


def _build_tree(
    X: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    depth: int,
    max_depth: int | None,
    min_leaf: int,
    max_features: int | None,
    rng: np.random.Generator | None,
) -> dict:
    counts = np.bincount(y, minlength=n_classes)

    def leaf() -> dict:
        return {"leaf": True, "proba": (counts / counts.sum()).tolist()}

    n, d = X.shape
    if (
        counts.max() == n
        or (max_depth is not None and depth >= max_depth)
        or n < 2 * min_leaf
    ):
        return leaf()

    if max_features is None or max_features >= d or rng is None:
        candidates = np.arange(d)
    else:
        candidates = np.sort(rng.choice(d, size=max_features, replace=False))

    parent_impurity = _gini(counts)
    best_gain = 1e-12
    best: tuple[int, float] | None = None
    for feature in candidates:
        order = np.argsort(X[:, feature], kind="stable")
        values = X[order, feature]
        labels = y[order]
        left_counts = np.zeros(n_classes)
        right_counts = counts.astype(float).copy()
        for i in range(n - 1):
            left_counts[labels[i]] += 1
            right_counts[labels[i]] -= 1
            if values[i] == values[i + 1]:
                continue
            n_left, n_right = i + 1, n - i - 1
            if n_left < min_leaf or n_right < min_leaf:
                continue
            impurity = (n_left * _gini(left_counts) + n_right * _gini(right_counts)) / n
            gain = parent_impurity - impurity
            if gain > best_gain + 1e-12:
                best_gain = gain
                best = (int(feature), float((values[i] + values[i + 1]) / 2.0))
    if best is None:
        return leaf()

    feature, threshold = best
    mask = X[:, feature] <= threshold
    return {
        "leaf": False,
        "feature": feature,
        "threshold": threshold,
        "left": _build_tree(
            X[mask], y[mask], n_classes, depth + 1, max_depth, min_leaf, max_features, rng
        ),
        "right": _build_tree(
            X[~mask], y[~mask], n_classes, depth + 1, max_depth, min_leaf, max_features, rng
        ),
    }


def _tree_predict_row(node: dict, row: np.ndarray) -> np.ndarray:
    while not node["leaf"]:
        node = node["left"] if row[node["feature"]] <= node["threshold"] else node["right"]
    return np.asarray(node["proba"], dtype=float)


def _tree_predict(node: dict, X: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.empty((X.shape[0], n_classes))
    for i in range(X.shape[0]):
        out[i] = _tree_predict_row(node, X[i])
    return out


def _resolve_max_features(features, d: int) -> int | None:
    if features is None:
        return None
    if features == "sqrt":
        return max(1, int(np.sqrt(d)))
    return min(int(features), d)


@dataclass
class _Scaler:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "_Scaler":
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        return cls(mean=mean, scale=scale)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.scale


def _fit_logistic(X: np.ndarray, y: np.ndarray, n_classes: int, ridge: float) -> np.ndarray:
    """Ridge-penalized multinomial fit via L-BFGS on the softmax likelihood.

    The intercept row is unpenalized; optimization runs from zero weights to a
    gradient tolerance of 1e-8 (500 iterations cap), so the fit is
    deterministic.
    """
    n, d = X.shape
    Xb = np.hstack([np.ones((n, 1)), X])
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0

    def objective(flat: np.ndarray):
        W = flat.reshape(d + 1, n_classes)
        logits = Xb @ W
        logits -= logits.max(axis=1, keepdims=True)
        exp = np.exp(logits)
        proba = exp / exp.sum(axis=1, keepdims=True)
        loglik = np.sum(np.log(proba[np.arange(n), y] + 1e-300))
        penalty = 0.5 * ridge * np.sum(W[1:] ** 2)
        grad = Xb.T @ (proba - onehot)
        grad[1:] += ridge * W[1:]
        return -loglik + penalty, grad.ravel()

    result = minimize(
        objective,
        np.zeros((d + 1) * n_classes),
        jac=True,
        method="L-BFGS-B",
        options={"gtol": 1e-8, "maxiter": 500},
    )
    return result.x.reshape(d + 1, n_classes)


def _softmax_proba(W: np.ndarray, X: np.ndarray) -> np.ndarray:
    Xb = np.hstack([np.ones((X.shape[0], 1)), X])
    logits = Xb @ W
    logits -= logits.max(axis=1, keepdims=True)
    exp = np.exp(logits)
    return exp / exp.sum(axis=1, keepdims=True)


@dataclass
class TrainedModel:
    """A fitted classifier: spec, parameters and the feature schema it expects."""

    spec: ClassifierSpec
    classes: tuple[str, ...]
    feature_names: tuple[str, ...]
    seed: int
    payload: dict

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise SchemaError(
                f"expected {len(self.feature_names)} feature columns, got {X.shape}"
            )
        n_classes = len(self.classes)
        family = self.spec.family
        if family == "tree":
            return _tree_predict(self.payload["tree"], X, n_classes)
        if family in ("forest", "bagging"):
            stack = [_tree_predict(tree, X, n_classes) for tree in self.payload["trees"]]
            return np.mean(stack, axis=0)
        if family == "logistic":
            scaler = _Scaler(
                mean=np.asarray(self.payload["scaler_mean"]),
                scale=np.asarray(self.payload["scaler_scale"]),
            )
            return _softmax_proba(np.asarray(self.payload["weights"]), scaler.transform(X))
        if family == "knn":
            scaler = _Scaler(
                mean=np.asarray(self.payload["scaler_mean"]),
                scale=np.asarray(self.payload["scaler_scale"]),
            )
            train_X = np.asarray(self.payload["train_X"])
            train_y = np.asarray(self.payload["train_y"], dtype=int)
            k = int(self.spec.hyperparameters["neighbours"])
            Xs = scaler.transform(X)
            out = np.empty((Xs.shape[0], n_classes))
            for i in range(Xs.shape[0]):
                distances = np.sqrt(np.sum((train_X - Xs[i]) ** 2, axis=1))
                neighbours = np.argsort(distances, kind="stable")[:k]
                votes = np.bincount(train_y[neighbours], minlength=n_classes)
                out[i] = votes / votes.sum()
            return out
        raise ConfigurationError(f"unknown family {family!r}")

    def predict(self, X: np.ndarray) -> list[str]:
        proba = self.predict_proba(X)
        return [self.classes[i] for i in np.argmax(proba, axis=1)]

    def member_trees(self) -> list[dict]:
        """Member estimators of an ensemble, for white-box checks."""
        if self.spec.family not in ("forest", "bagging"):
            raise ConfigurationError(f"{self.spec.family} has no member trees")
        return list(self.payload["trees"])

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT_TAG,
            "spec": self.spec.as_dict(),
            "classes": list(self.classes),
            "feature_names": list(self.feature_names),
            "seed": self.seed,
            "payload": _jsonify(self.payload),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainedModel":
        if data.get("format") != MODEL_FORMAT_TAG:
            raise SchemaError(f"unsupported model format {data.get('format')!r}")
        spec = ClassifierSpec(
            family=data["spec"]["family"],
            hyperparameters=data["spec"]["hyperparameters"],
        )
        return cls(
            spec=spec,
            classes=tuple(data["classes"]),
            feature_names=tuple(data["feature_names"]),
            seed=int(data["seed"]),
            payload=data["payload"],
        )


def _jsonify(value):
    if isinstance(value, dict):
        return {key: _jsonify(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonify(item) for item in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.integer, np.floating)):
        return value.item()
    return value


def train(spec: ClassifierSpec, data: Dataset, seed: int) -> TrainedModel:
    """Fit a classifier; deterministic for a fixed (spec, data, seed)."""
    classes = data.classes
    if len(classes) < 2:
        raise ValueError("training data contains a single class")
    class_index = {label: i for i, label in enumerate(classes)}
    y = np.array([class_index[label] for label in data.y], dtype=int)
    X = data.X
    params = dict(spec.hyperparameters)
    payload: dict

    if spec.family == "tree":
        payload = {
            "tree": _build_tree(
                X, y, len(classes), 0, params["depth"], params["min_leaf"], None, None
            )
        }
    elif spec.family in ("forest", "bagging"):
        if spec.family == "forest":
            max_features = _resolve_max_features(params["features"], X.shape[1])
            bootstrap = bool(params["bootstrap"])
        else:
            max_features = None
            bootstrap = True
        trees = []
        for i in range(params["trees"]):
            rng = np.random.default_rng([seed, i])
            if bootstrap:
                idx = rng.integers(0, X.shape[0], X.shape[0])
            else:
                idx = np.arange(X.shape[0])
            trees.append(
                _build_tree(
                    X[idx], y[idx], len(classes), 0,
                    params["depth"], params["min_leaf"], max_features, rng,
                )
            )
        payload = {"trees": trees}
    elif spec.family == "logistic":
        scaler = _Scaler.fit(X)
        weights = _fit_logistic(scaler.transform(X), y, len(classes), float(params["ridge"]))
        payload = {
            "weights": weights,
            "scaler_mean": scaler.mean,
            "scaler_scale": scaler.scale,
        }
    elif spec.family == "knn":
        scaler = _Scaler.fit(X)
        payload = {
            "train_X": scaler.transform(X),
            "train_y": y,
            "scaler_mean": scaler.mean,
            "scaler_scale": scaler.scale,
        }
    else:  # pragma: no cover - guarded by ClassifierSpec
        raise ConfigurationError(f"unknown family {spec.family!r}")

    return TrainedModel(
        spec=spec,
        classes=classes,
        feature_names=data.feature_names,
        seed=seed,
        payload=payload,
    )


# Documented hyperparameter grids; the tuned operating points of the original
# study (29 trees, 13 candidate features per split, depth 3) are included.
HYPERPARAMETER_GRIDS: dict[str, list[dict]] = {
    "tree": [{"depth": d, "min_leaf": m} for d in (3, None) for m in (1, 2)],
    "forest": [
        {"trees": t, "features": f, "depth": d}
        for t in (16, 29, 64)
        for f in ("sqrt", 13)
        for d in (3, None)
    ],
    "bagging": [{"trees": t, "depth": d} for t in (10, 29) for d in (3, None)],
    "logistic": [{"ridge": r} for r in (1e-8, 1e-4, 1.0)],
    "knn": [{"neighbours": n} for n in (1, 3, 5)],
}


def grid_for(family: str) -> list[ClassifierSpec]:
    if family not in HYPERPARAMETER_GRIDS:
        raise ConfigurationError(f"unknown classifier family {family!r}")
    return [ClassifierSpec(family, params) for params in HYPERPARAMETER_GRIDS[family]]
