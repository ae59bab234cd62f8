"""Feature-table dataset plus stratified fold planning and noise injection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import SchemaError


@dataclass(frozen=True)
class Dataset:
    """Numeric feature matrix with named columns and a categorical label vector."""

    feature_names: tuple[str, ...]
    X: np.ndarray
    y: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.X.ndim != 2:
            raise SchemaError("feature matrix must be 2-D")
        if self.X.shape[1] != len(self.feature_names):
            raise SchemaError("column count does not match feature names")
        if self.X.shape[0] != len(self.y):
            raise SchemaError("row count does not match label count")
        if self.X.shape[0] == 0:
            raise SchemaError("dataset has no rows")
        if not np.all(np.isfinite(self.X)):
            raise SchemaError("feature matrix contains missing or non-finite values")

    @classmethod
    def from_rows(
        cls, names: Sequence[str], rows: Sequence[Sequence[float]], labels: Sequence[str]
    ) -> "Dataset":
        return cls(
            feature_names=tuple(names),
            X=np.asarray(rows, dtype=float).reshape(len(rows), len(names)),
            y=tuple(labels),
        )

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def classes(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.y)))

    def select_features(self, names: Sequence[str]) -> "Dataset":
        indices = []
        for name in names:
            try:
                indices.append(self.feature_names.index(name))
            except ValueError:
                raise SchemaError(f"unknown feature {name!r}") from None
        return Dataset(tuple(names), self.X[:, indices], self.y)

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(self.feature_names, self.X[idx], tuple(self.y[i] for i in idx))

    def with_labels(self, labels: Sequence[str]) -> "Dataset":
        return Dataset(self.feature_names, self.X, tuple(labels))


def stratified_kfold(data: Dataset, folds: int, seed: int) -> list[np.ndarray]:
    """Plan stratified test folds: each row lands in exactly one test fold and
    per-fold class counts stay within one row of perfect proportionality.

    Rows of each class are shuffled with a seed derived from the master seed,
    then dealt round-robin, so the plan is deterministic per seed.
    """
    if folds < 2:
        raise ValueError("folds must be at least 2")
    labels = np.asarray(data.y)
    plan: list[list[int]] = [[] for _ in range(folds)]
    for class_index, cls in enumerate(sorted(set(data.y))):
        members = np.flatnonzero(labels == cls)
        if len(members) < folds:
            raise ValueError(
                f"class {cls!r} has {len(members)} rows, fewer than {folds} folds"
            )
        rng = np.random.default_rng([seed, class_index])
        for position, row in enumerate(rng.permutation(members)):
            plan[position % folds].append(int(row))
    return [np.array(sorted(fold), dtype=int) for fold in plan]


def add_noise_features(data: Dataset, n: int, seed: int) -> Dataset:
    """Append n pure-noise columns (uniform [0, 1)), named noise_01.. in order."""
    if n < 1:
        raise ValueError("n must be positive")
    columns = [
        np.random.default_rng([seed, 7901, i]).random(data.n_rows) for i in range(n)
    ]
    names = data.feature_names + tuple(f"noise_{i + 1:02d}" for i in range(n))
    return Dataset(names, np.column_stack([data.X] + columns), data.y)
