"""Acceptance gate: every criterion checked at its stated tolerance.

Each test prints one ``ACCEPTANCE <nn> <name>: PASS|FAIL`` line (visible with
``pytest -s``); the test fails iff the criterion fails.
"""

import csv
import itertools
import json
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from idemine import discovery, learn, metrics, stats, synth
from idemine.cli import main
from idemine.discovery import TransitionSystem
from idemine.eventlog import END_LABEL, START_LABEL

from conftest import random_log


def _verdict(number: int, name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {number:02d} {name}: {status} {detail}".rstrip())
    assert ok, f"criterion {number} ({name}) failed: {detail}"


# -- criterion 1 -------------------------------------------------------------

def _bfs_components(labels, arcs) -> int:
    neighbours = {label: set() for label in labels}
    for a, b in arcs:
        neighbours[a].add(b)
        neighbours[b].add(a)
    seen, components = set(), 0
    for label in labels:
        if label in seen:
            continue
        components += 1
        stack = [label]
        seen.add(label)
        while stack:
            for nxt in neighbours[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
    return components


def test_criterion_01_pcc_oracle():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    checked = 0
    for _ in range(100):
        n = int(rng.integers(1, 29))  # + START/END stays <= 30 nodes
        labels = [f"n{i:02d}" for i in range(n)]
        everything = labels + [START_LABEL, END_LABEL]
        arcs = {}
        for _ in range(int(rng.integers(0, 3 * n + 2))):
            a = everything[int(rng.integers(len(everything)))]
            b = everything[int(rng.integers(len(everything)))]
            arcs[(a, b)] = int(rng.integers(1, 9))
        ts = TransitionSystem(level=2, nodes={lab: 1 for lab in labels}, arcs=arcs)
        oracle = len(arcs) - (n + 2) + 2 * _bfs_components(everything, arcs)
        assert metrics.compute_pcc(ts) == oracle
        checked += 1
    elapsed = time.perf_counter() - start
    _verdict(1, "pcc-oracle", checked == 100 and elapsed < 1.0,
             f"(100 graphs, {elapsed:.2f}s < 1s)")


# -- criterion 2 -------------------------------------------------------------

def test_criterion_02_directly_follows_oracle():
    rng = np.random.default_rng(7)
    start = time.perf_counter()
    for _ in range(50):
        log = random_log(rng, max_events=1000)
        model = discovery.discover_model(log)
        for level in range(3):
            naive = Counter()
            for trace in log.traces:
                walk = [START_LABEL] + [e.label(level) for e in trace.events] + [END_LABEL]
                for pair in zip(walk, walk[1:]):
                    naive[pair] += 1
            assert dict(discovery.flatten_level(model, level).arcs) == dict(naive)
    elapsed = time.perf_counter() - start
    _verdict(2, "directly-follows-oracle", elapsed < 5.0, f"(50 logs, {elapsed:.2f}s < 5s)")


# -- criterion 3 -------------------------------------------------------------

def test_criterion_03_relative_variance():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        v0 = {name: float(np.round(rng.uniform(0, 10), 3)) for name in metrics.PRODUCT_METRIC_COLUMNS}
        v1 = {name: float(np.round(rng.uniform(0, 10), 3)) for name in metrics.PRODUCT_METRIC_COLUMNS}
        for values in (v0, v1):
            values["TLOC"] = float(int(values["TLOC"] * 100))
            for name in metrics.PRODUCT_METRIC_COLUMNS:
                if rng.random() < 0.05:
                    values[name] = 0.0
        t0 = metrics.ProductMetricsSnapshot("T", "t0", v0)
        t1 = metrics.ProductMetricsSnapshot("T", "t1", v1)
        delta = metrics.compute_delta(t0, t1)
        for name in metrics.PRODUCT_METRIC_COLUMNS:
            if v0[name] == 0.0:
                assert name in delta.undefined and name not in delta.deltas
            else:
                expected = (v1[name] - v0[name]) / v0[name] * 100.0
                assert abs(delta.deltas[name] - expected) <= 1e-12
                assert np.isfinite(delta.deltas[name])
    _verdict(3, "relative-variance", True, "(1000 snapshots, tol 1e-12)")


# -- criterion 4 -------------------------------------------------------------

def test_criterion_04_spearman():
    rng = np.random.default_rng(13)
    for _ in range(250):  # no ties: sum-of-squared-rank-differences formula
        n = int(rng.integers(4, 40))
        x = rng.permutation(n).astype(float)
        y = rng.permutation(n).astype(float)
        d2 = float(np.sum((stats.average_ranks(x) - stats.average_ranks(y)) ** 2))
        expected = 1.0 - 6.0 * d2 / (n * (n * n - 1.0))
        assert abs(stats.spearman_rho(x, y) - expected) <= 1e-9
    for _ in range(250):  # ties: ranked-Pearson definition
        n = int(rng.integers(4, 30))
        x = rng.integers(0, 6, n).astype(float)
        y = rng.integers(0, 6, n).astype(float)
        if len(set(x)) < 2 or len(set(y)) < 2:
            continue
        rx, ry = stats.average_ranks(x), stats.average_ranks(y)
        num = float(np.sum((rx - rx.mean()) * (ry - ry.mean())))
        den = float(np.sqrt(np.sum((rx - rx.mean()) ** 2) * np.sum((ry - ry.mean()) ** 2)))
        assert abs(stats.spearman_rho(x, y) - num / den) <= 1e-9

    assert stats.spearman_p_value(1.0, 5, "exact-permutation") == 2 / 120

    worst = 0.0
    for _ in range(200):
        x = rng.random(9)
        y = rng.random(9)
        rho = stats.spearman_rho(x, y)
        gap = abs(
            stats.spearman_p_value(rho, 9, "exact-permutation")
            - stats.spearman_p_value(rho, 9, "t-approx")
        )
        worst = max(worst, gap)
    _verdict(4, "spearman", worst < 0.05,
             f"(500 rho pairs tol 1e-9; exact p(n=5,rho=1)=2/120; max exact-vs-t gap {worst:.4f} < 0.05)")


# -- criterion 5 -------------------------------------------------------------

def test_criterion_05_auc_calibration():
    rng = np.random.default_rng(99)
    scores = rng.random(10_000)
    positive = np.array([True, False] * 5_000)
    random_auc = learn.roc_auc(scores, positive)

    separated = np.concatenate([rng.uniform(0.6, 1.0, 500), rng.uniform(0.0, 0.4, 500)])
    separated_positive = np.array([True] * 500 + [False] * 500)
    perfect = learn.roc_auc(separated, separated_positive)

    fixture = learn.roc_auc([0.6, 0.35, 0.8, 0.4], [True, True, True, False])

    ok = abs(random_auc - 0.5) <= 0.02 and perfect == 1.0 and fixture == 2 / 3
    _verdict(5, "auc-calibration", ok,
             f"(random {random_auc:.4f} within 0.5±0.02; separated {perfect}; fixture {fixture:.6f} == 2/3)")


# -- criterion 6 -------------------------------------------------------------

def test_criterion_06_clustering():
    start = time.perf_counter()
    rng = np.random.default_rng(17)
    centers = np.array([(0.0, 0.0), (4.0, 0.0), (2.0, 2 * np.sqrt(3.0))])  # mutual distance 4
    sigma = 0.1 * 4.0
    points = np.vstack([rng.normal(c, sigma, size=(100, 2)) for c in centers])
    truth = np.repeat([0, 1, 2], 100)

    _, elbow_k = stats.elbow_select(points, range(2, 11), seed=5)
    silhouette_by_k = {
        k: stats.silhouette_score(points, stats.best_of_restarts(points, k, 5).assignment).mean
        for k in range(2, 11)
    }
    silhouette_k = max(silhouette_by_k, key=lambda k: silhouette_by_k[k])

    clustering = stats.best_of_restarts(points, 3, seed=5)
    agreement = max(
        np.mean([perm[a] for a in clustering.assignment] == truth)
        for perm in itertools.permutations(range(3))
    )
    elapsed = time.perf_counter() - start
    ok = elbow_k == 3 and silhouette_k == 3 and agreement >= 0.99 and elapsed < 10.0
    _verdict(6, "clustering", ok,
             f"(elbow k={elbow_k}, silhouette k={silhouette_k}, agreement {agreement:.3f} >= 0.99, {elapsed:.1f}s < 10s)")


# -- criterion 7 -------------------------------------------------------------

def test_criterion_07_partition_fixture():
    values = [2, 3.9, 4.2, 8.5, 9.5, 12]
    partition = stats.level_partition(values, 3, ["LOW", "MEDIUM", "HIGH"], seed=0)
    assigned = partition.assign_all(values)
    expected = ["LOW", "LOW", "MEDIUM", "MEDIUM", "HIGH", "HIGH"]
    _verdict(7, "partition-fixture", assigned == expected,
             f"(got {assigned}, edges {tuple(round(e, 3) for e in partition.edges)})")


# -- criteria 8-10: the synthetic end-to-end pipeline ------------------------

def _run_chain(out: Path, seed: int, through_train: bool) -> None:
    out_s = str(out)
    steps = [
        ["synth", "--out", out_s, "--seed", str(seed)],
        ["ingest", "--input", str(out / "events.jsonl"), "--out", out_s],
        ["metrics", "--out", out_s, "--products", str(out / "products.csv"),
         "--labels", str(out / "ground_truth.csv")],
    ]
    if through_train:
        steps += [
            ["partition", "--out", out_s, "--seed", str(seed)],
            ["correlate", "--out", out_s],
            ["train", "--out", out_s, "--family", "forest", "--folds", "10",
             "--seed", str(seed), "--noise-features", "5"],
            ["report", "--out", out_s],
        ]
    for argv in steps:
        assert main(argv) == 0, argv


def _cohort_pcc_means(out: Path) -> dict[str, float]:
    with open(out / "features.csv", encoding="utf-8") as handle:
        rows = list(csv.DictReader(handle))
    means: dict[str, list[float]] = {}
    for row in rows:
        means.setdefault(row["practice"], []).append(float(row["PCC"]))
    return {practice: float(np.mean(values)) for practice, values in means.items()}


@pytest.fixture(scope="module")
def full_pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance_seed1")
    start = time.perf_counter()
    _run_chain(out, seed=1, through_train=True)
    return {"dir": out, "elapsed": time.perf_counter() - start}


def test_criterion_08_end_to_end_synthetic(full_pipeline, tmp_path):
    start = time.perf_counter()
    means = {1: _cohort_pcc_means(full_pipeline["dir"])}
    for seed in range(2, 11):
        out = tmp_path / f"seed{seed}"
        out.mkdir()
        _run_chain(out, seed=seed, through_train=False)
        means[seed] = _cohort_pcc_means(out)
    ordered = all(m["MR"] > m["AR"] for m in means.values())

    train_report = json.loads((full_pipeline["dir"] / "train_report.json").read_text())
    weighted_roc = train_report["cv"]["weighted_roc"]

    with open(full_pipeline["dir"] / "importance.csv", encoding="utf-8") as handle:
        importance = {row["feature"]: float(row["importance"]) for row in csv.DictReader(handle)}
    drivers = {name: importance[name] for name in ("EVTS", "NOA", "DEV", "NCOM")}
    noise = {name: score for name, score in importance.items() if name.startswith("noise_")}
    ranked = min(drivers.values()) > max(noise.values())

    elapsed = full_pipeline["elapsed"] + (time.perf_counter() - start)
    ok = ordered and weighted_roc >= 0.90 and ranked and elapsed < 120.0
    _verdict(
        8, "end-to-end-synthetic", ok,
        f"(PCC ordering 10/10 seeds: {ordered}; weighted ROC {weighted_roc:.3f} >= 0.90; "
        f"min driver {min(drivers.values()):.3f} > max noise {max(noise.values()):.3f}; "
        f"{elapsed:.0f}s < 120s)",
    )


def test_criterion_09_label_permutation_null(full_pipeline):
    from idemine.pipeline import dataset_from_table, read_feature_table

    table = read_feature_table(full_pipeline["dir"] / "features.csv")
    data = dataset_from_table(table, "standard", "practice")
    spec = learn.ClassifierSpec("forest")
    rocs = []
    for shuffle in range(5):
        rng = np.random.default_rng([1, shuffle])
        shuffled = data.with_labels(tuple(np.array(data.y)[rng.permutation(data.n_rows)]))
        rocs.append(learn.cross_validate(spec, shuffled, folds=10, seed=1).weighted.roc_auc)
    mean_roc = float(np.mean(rocs))
    _verdict(9, "label-permutation-null", abs(mean_roc - 0.5) <= 0.1,
             f"(mean pooled-CV ROC over 5 shuffles {mean_roc:.3f} within 0.5±0.1)")


def _tree_snapshot(root: Path) -> dict[str, bytes]:
    return {
        str(path.relative_to(root)): path.read_bytes()
        for path in sorted(root.rglob("*"))
        if path.is_file()
    }


def test_criterion_10_deterministic_artifacts(tmp_path):
    out = tmp_path / "tree"
    out.mkdir()
    _run_chain(out, seed=4, through_train=True)
    first = _tree_snapshot(out)
    _run_chain(out, seed=4, through_train=True)
    second = _tree_snapshot(out)
    same_files = sorted(first) == sorted(second)
    diffs = [name for name in first if first[name] != second.get(name)]
    ok = same_files and not diffs
    _verdict(10, "deterministic-artifacts", ok,
             f"({len(first)} files, differing: {diffs if diffs else 'none'})")


# -- criterion 11 ------------------------------------------------------------

def _oracle_roc(scores, positive) -> float:
    pos = [s for s, p in zip(scores, positive) if p]
    neg = [s for s, p in zip(scores, positive) if not p]
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
    return wins / (len(pos) * len(neg))


def _oracle_prc(scores, positive) -> float:
    n_pos = sum(positive)
    area, prev_recall = 0.0, 0.0
    for threshold in sorted(set(scores), reverse=True):
        tp = sum(1 for s, p in zip(scores, positive) if s >= threshold and p)
        fp = sum(1 for s, p in zip(scores, positive) if s >= threshold and not p)
        recall = tp / n_pos
        precision = tp / (tp + fp) if tp + fp else 1.0
        area += (recall - prev_recall) * precision
        prev_recall = recall
    return area


def test_criterion_11_evaluation_oracle():
    rng = np.random.default_rng(23)
    checked = 0
    while checked < 50:
        n = int(rng.integers(4, 40))
        classes = ("a", "b", "c")[: int(rng.integers(2, 4))]
        raw = rng.random((n, len(classes)))
        raw = np.round(raw, 2) + 1e-9
        proba = raw / raw.sum(axis=1, keepdims=True)
        labels = [classes[int(i)] for i in rng.integers(0, len(classes), n)]
        if len(set(labels)) < len(classes):
            continue
        checked += 1
        report = learn.evaluate(proba, labels, classes)
        predicted = [classes[int(np.argmax(row))] for row in proba]

        weighted = {field: 0.0 for field in (
            "tp_rate", "fp_rate", "precision", "recall", "f_measure", "mcc", "roc_auc", "prc_auc",
        )}
        total = len(labels)
        for column, cls in enumerate(classes):
            tp = sum(1 for p, t in zip(predicted, labels) if p == cls and t == cls)
            fp = sum(1 for p, t in zip(predicted, labels) if p == cls and t != cls)
            fn = sum(1 for p, t in zip(predicted, labels) if p != cls and t == cls)
            tn = sum(1 for p, t in zip(predicted, labels) if p != cls and t != cls)
            precision = tp / (tp + fp) if tp + fp else 0.0
            recall = tp / (tp + fn) if tp + fn else 0.0
            f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
            denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
            mcc = (tp * tn - fp * fn) / np.sqrt(denom) if denom else 0.0
            scores = proba[:, column].tolist()
            pos = [t == cls for t in labels]
            expect = {
                "tp_rate": recall,
                "fp_rate": fp / (fp + tn) if fp + tn else 0.0,
                "precision": precision,
                "recall": recall,
                "f_measure": f1,
                "mcc": mcc,
                "roc_auc": _oracle_roc(scores, pos),
                "prc_auc": _oracle_prc(scores, pos),
            }
            m = report.per_class[cls]
            for field, value in expect.items():
                assert abs(getattr(m, field) - value) <= 1e-12, (field, cls)
                weighted[field] += value * (tp + fn)
        accuracy = sum(1 for p, t in zip(predicted, labels) if p == t) / total
        assert abs(report.accuracy - accuracy) <= 1e-12
        for field, value in weighted.items():
            assert abs(getattr(report.weighted, field) - value / total) <= 1e-12, field
    _verdict(11, "evaluation-oracle", checked == 50, "(50 prediction sets, tol 1e-12)")
