"""Rank correlation with significance testing, k-means clustering with elbow
and silhouette model selection, and ordinal level partitioning.

All stochastic routines are deterministic for a fixed seed.  The exact
Spearman significance method enumerates rank permutations and is limited to
n <= 9; the t-approximation covers larger samples.
"""

from __future__ import annotations

import itertools
from bisect import bisect_left
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.stats import t as t_distribution

from .errors import ConfigurationError

EXACT_PERMUTATION_LIMIT = 9
KMEANS_MAX_ITER = 300
ELBOW_RESTARTS = 10


def average_ranks(values: Sequence[float]) -> np.ndarray:
    """Ranks 1..n with ties replaced by the average of the tied positions."""
    arr = np.asarray(values, dtype=float)
    order = np.argsort(arr, kind="stable")
    ranks = np.empty(len(arr), dtype=float)
    sorted_vals = arr[order]
    i = 0
    while i < len(arr):
        j = i
        while j + 1 < len(arr) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman_rho(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman correlation: Pearson correlation of average-ranked values."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D and of equal length")
    if len(x) < 3:
        raise ValueError("need at least 3 observations")
    rx = average_ranks(x) - (len(x) + 1) / 2.0
    ry = average_ranks(y) - (len(y) + 1) / 2.0
    nx = float(np.sqrt(rx @ rx))
    ny = float(np.sqrt(ry @ ry))
    if nx == 0.0 or ny == 0.0:
        raise ValueError("zero rank variance")
    rho = float((rx @ ry) / (nx * ny))
    return max(-1.0, min(1.0, rho))


@lru_cache(maxsize=8)
def _exact_null_distribution(n: int) -> np.ndarray:
    """Sorted |rho| values over all n! permutations of untied ranks 1..n."""
    base = np.arange(1, n + 1, dtype=float)
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.intp)
    centered = base - base.mean()
    denom = float(centered @ centered)
    rhos = (base[perms] - base.mean()) @ centered / denom
    return np.sort(np.abs(rhos))


def spearman_p_value(rho: float, n: int, method: str = "t-approx") -> float:
    """Two-sided p-value for an observed Spearman rho at sample size n.

    ``exact-permutation`` enumerates all n! permutations of untied ranks
    (n <= 9); ``t-approx`` uses t = rho * sqrt((n-2) / (1-rho^2)) with n-2
    degrees of freedom and returns 0.0 at |rho| = 1.
    """
    if n < 3:
        raise ValueError("need at least 3 observations")
    if not -1.0 <= rho <= 1.0:
        raise ValueError(f"rho out of range: {rho}")
    if method == "exact-permutation":
        if n > EXACT_PERMUTATION_LIMIT:
            raise ConfigurationError(
                f"exact permutation limited to n <= {EXACT_PERMUTATION_LIMIT}"
            )
        null = _exact_null_distribution(n)
        threshold = abs(rho) - 1e-12
        count = len(null) - int(np.searchsorted(null, threshold, side="left"))
        return count / len(null)
    if method == "t-approx":
        if abs(rho) >= 1.0:
            return 0.0
        stat = abs(rho) * np.sqrt((n - 2) / (1.0 - rho * rho))
        return float(2.0 * t_distribution.sf(stat, df=n - 2))
    raise ConfigurationError(f"unknown significance method {method!r}")


@dataclass(frozen=True)
class CorrelationResult:
    rho: float
    p_value: float
    n: int
    significant: bool
    method: str
    degenerate: bool = False  # set when |rho| = 1 met the t-approximation


def spearman_test(
    x: Sequence[float],
    y: Sequence[float],
    alpha: float = 0.05,
    method: str = "auto",
) -> CorrelationResult:
    """Correlate two series and test H0: no monotonic association."""
    rho = spearman_rho(x, y)
    n = len(x)
    if method == "auto":
        method = "exact-permutation" if n <= EXACT_PERMUTATION_LIMIT else "t-approx"
    p = spearman_p_value(rho, n, method)
    degenerate = method == "t-approx" and abs(rho) >= 1.0
    return CorrelationResult(
        rho=rho, p_value=p, n=n, significant=p < alpha, method=method, degenerate=degenerate
    )


@dataclass(frozen=True)
class Clustering:
    k: int
    assignment: np.ndarray
    centroids: np.ndarray
    distortion: float
    iterations: int
    history: tuple[float, ...] = ()  # distortion after each assignment step


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("points must form a non-empty 2-D array")
    return arr


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    closest = np.sum((points - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total <= 0:
            centroids[i] = points[rng.integers(n)]
        else:
            centroids[i] = points[rng.choice(n, p=closest / total)]
        closest = np.minimum(closest, np.sum((points - centroids[i]) ** 2, axis=1))
    return centroids


def kmeans(points, k: int, seed) -> Clustering:
    """Lloyd iteration from k-means++ seeding until the assignment is stable.

    A centroid that loses all its points is re-seeded at the point currently
    farthest from its assigned centroid.  Deterministic for a fixed seed.
    """
    pts = _as_points(points)
    n = pts.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(pts, k, rng)
    assignment = np.full(n, -1, dtype=int)
    iterations = 0
    history: list[float] = []
    for iterations in range(1, KMEANS_MAX_ITER + 1):
        d2 = _squared_distances(pts, centroids)
        new_assignment = np.argmin(d2, axis=1)
        nearest = d2[np.arange(n), new_assignment]
        for cluster in range(k):
            if not np.any(new_assignment == cluster):
                farthest = int(np.argmax(nearest))
                centroids[cluster] = pts[farthest]
                d2 = _squared_distances(pts, centroids)
                new_assignment = np.argmin(d2, axis=1)
                nearest = d2[np.arange(n), new_assignment]
        history.append(float(nearest.sum()))
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        for cluster in range(k):
            members = pts[assignment == cluster]
            if len(members):
                centroids[cluster] = members.mean(axis=0)
    d2 = _squared_distances(pts, centroids)
    assignment = np.argmin(d2, axis=1)
    distortion = float(d2[np.arange(n), assignment].sum())
    return Clustering(
        k=k,
        assignment=assignment,
        centroids=centroids,
        distortion=distortion,
        iterations=iterations,
        history=tuple(history),
    )


def best_of_restarts(points, k: int, seed, restarts: int = ELBOW_RESTARTS) -> Clustering:
    """Lowest-distortion clustering over seeded restarts (per-restart seeds
    are derived deterministically from the master seed)."""
    best: Clustering | None = None
    for r in range(restarts):
        result = kmeans(points, k, seed=[seed, k, r])
        if best is None or result.distortion < best.distortion:
            best = result
    assert best is not None
    return best


def elbow_select(points, k_range: Sequence[int], seed) -> tuple[list[tuple[int, float]], int]:
    """Distortion curve over k plus the elbow pick.

    Each k gets the best of 10 seeded restarts; the chosen k maximizes the
    perpendicular distance from the curve point to the chord joining the
    curve's endpoints (ties go to the smaller k).
    """
    pts = _as_points(points)
    ks = sorted(set(int(k) for k in k_range))
    if len(ks) < 3:
        raise ValueError("k_range must contain at least 3 values")
    if ks[0] < 2 or ks[-1] > pts.shape[0]:
        raise ValueError(f"k_range must lie within [2, {pts.shape[0]}]")
    curve = [(k, best_of_restarts(pts, k, seed).distortion) for k in ks]

    (x0, y0), (x1, y1) = curve[0], curve[-1]
    chord = np.hypot(x1 - x0, y1 - y0)
    best_k, best_distance = ks[0], -1.0
    for k, distortion in curve:
        if chord == 0:
            distance = 0.0
        else:
            distance = abs((x1 - x0) * (y0 - distortion) - (x0 - k) * (y1 - y0)) / chord
        if distance > best_distance + 1e-12:
            best_k, best_distance = k, distance
    return curve, best_k


@dataclass(frozen=True)
class SilhouetteReport:
    values: np.ndarray
    mean: float


def silhouette_score(points, assignment) -> SilhouetteReport:
    """Standard Euclidean silhouette; points in singleton clusters score 0."""
    pts = _as_points(points)
    labels = np.asarray(assignment, dtype=int)
    if labels.shape[0] != pts.shape[0]:
        raise ValueError("assignment length must match points")
    clusters = np.unique(labels)
    if len(clusters) < 2:
        raise ValueError("silhouette needs at least 2 clusters")
    diff = pts[:, None, :] - pts[None, :, :]
    distances = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    values = np.zeros(pts.shape[0])
    for i in range(pts.shape[0]):
        own = labels == labels[i]
        own_size = int(own.sum())
        if own_size == 1:
            values[i] = 0.0
            continue
        a = distances[i, own].sum() / (own_size - 1)
        b = min(distances[i, labels == other].mean() for other in clusters if other != labels[i])
        denom = max(a, b)
        values[i] = 0.0 if denom == 0 else (b - a) / denom
    return SilhouetteReport(values=values, mean=float(values.mean()))


@dataclass(frozen=True)
class LevelPartition:
    """Ordered value bins: bin i covers (edges[i-1], edges[i]], open-ended outside."""

    labels: tuple[str, ...]
    edges: tuple[float, ...]
    cluster_ranges: tuple[tuple[float, float], ...]

    def assign(self, value: float) -> str:
        return self.labels[bisect_left(self.edges, float(value))]

    def assign_all(self, values: Sequence[float]) -> list[str]:
        return [self.assign(v) for v in values]


def _optimal_1d_clusters(points: np.ndarray, weights: np.ndarray, k: int) -> list[int]:
    """Exact weighted 1-D k-means on sorted points; returns cluster boundaries.

    Dynamic program over prefix sums; returns the start index of each cluster.
    """
    m = len(points)
    w = np.concatenate([[0.0], np.cumsum(weights)])
    wp = np.concatenate([[0.0], np.cumsum(weights * points)])
    wp2 = np.concatenate([[0.0], np.cumsum(weights * points * points)])

    def cost(i: int, j: int) -> float:  # inclusive range i..j
        total_w = w[j + 1] - w[i]
        total_wp = wp[j + 1] - wp[i]
        total_wp2 = wp2[j + 1] - wp2[i]
        return total_wp2 - total_wp * total_wp / total_w

    best = np.full((k + 1, m + 1), np.inf)
    split = np.zeros((k + 1, m + 1), dtype=int)
    best[0][0] = 0.0
    for c in range(1, k + 1):
        for j in range(c, m + 1):
            for i in range(c - 1, j):
                candidate = best[c - 1][i] + cost(i, j - 1)
                if candidate < best[c][j] - 1e-12:
                    best[c][j] = candidate
                    split[c][j] = i
    starts: list[int] = []
    j = m
    for c in range(k, 0, -1):
        i = split[c][j]
        starts.append(i)
        j = i
    return sorted(starts)


def level_partition(values: Sequence[float], k: int, labels: Sequence[str], seed=None) -> LevelPartition:
    """Partition values into k ordered level bins via 1-D k-means on ranks.

    Values are rank-transformed (average ranks, so tied values can never be
    split) and clustered by an exact dynamic program, making the result
    independent of the seed argument, which is accepted for interface parity.
    Bin edges sit at the midpoints between adjacent cluster extremes in the
    original value space so unseen values classify without re-clustering.
    """
    if len(labels) != k:
        raise ValueError(f"need exactly {k} labels, got {len(labels)}")
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or len(arr) == 0:
        raise ValueError("values must be a non-empty 1-D sequence")
    distinct, counts = np.unique(arr, return_counts=True)
    if len(distinct) < k:
        raise ValueError(f"need at least {k} distinct values, got {len(distinct)}")

    ranks = average_ranks(arr)
    distinct_ranks = np.unique(ranks)  # same order as distinct values
    starts = _optimal_1d_clusters(distinct_ranks, counts.astype(float), k)
    bounds = starts[1:] + [len(distinct)]

    cluster_ranges = []
    begin = 0
    for end in bounds:
        cluster_ranges.append((float(distinct[begin]), float(distinct[end - 1])))
        begin = end
    edges = tuple(
        (cluster_ranges[i][1] + cluster_ranges[i + 1][0]) / 2.0 for i in range(k - 1)
    )
    return LevelPartition(
        labels=tuple(labels), edges=edges, cluster_ranges=tuple(cluster_ranges)
    )


def correlation_matrix(
    columns: dict[str, Sequence[float]],
    alpha: float = 0.05,
    method: str = "t-approx",
) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Pairwise Spearman rho and p-value matrices with pairwise NaN deletion.

    Cells that cannot be computed (constant series, fewer than 3 paired
    observations) are NaN; callers render those blank.
    """
    names = list(columns)
    size = len(names)
    rho = np.full((size, size), np.nan)
    pval = np.full((size, size), np.nan)
    data = {name: np.asarray(columns[name], dtype=float) for name in names}
    for i, a in enumerate(names):
        for j, b in enumerate(names):
            if j < i:
                rho[i, j], pval[i, j] = rho[j, i], pval[j, i]
                continue
            xa, xb = data[a], data[b]
            mask = ~(np.isnan(xa) | np.isnan(xb))
            if mask.sum() < 3:
                continue
            try:
                result = spearman_test(xa[mask], xb[mask], alpha=alpha, method=method)
            except ValueError:
                continue
            rho[i, j], pval[i, j] = result.rho, result.p_value
    return names, rho, pval
