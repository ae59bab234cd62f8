"""Aggregate stage outputs into one summary document plus rendered figures.

The report stage is tolerant: it summarizes whatever artifacts earlier stages
left in the output directory and renders matplotlib figures (PNG) alongside
the delimited outputs.  Figure bytes are stable across reruns: the Agg
backend is used with pinned metadata.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .pipeline import FeatureTable, PipelineConfig, StageWriter, _num, read_feature_table

PRACTICE_COLORS = {"AR": "#1f77b4", "MR": "#d62728"}


def _load_json(path: Path):
    if not path.exists():
        return None
    return json.loads(path.read_text(encoding="utf-8"))


def _cohorts(table: FeatureTable) -> dict[str, list[dict]]:
    groups: dict[str, list[dict]] = {}
    for row in table.rows:
        practice = row.get("practice") or "all"
        groups.setdefault(practice, []).append(row)
    return dict(sorted(groups.items()))


def _cohort_stats(table: FeatureTable) -> list[dict]:
    stats_rows = []
    for practice, rows in _cohorts(table).items():
        sub = FeatureTable(columns=table.columns, rows=rows)
        vg = sub.numeric("vg_reduction")
        vg = vg[~np.isnan(vg)]
        stats_rows.append(
            {
                "practice": practice,
                "teams": len(rows),
                "developers": int(sub.numeric("DEV").sum()),
                "sessions": int(sub.numeric("SES").sum()),
                "events": int(sub.numeric("EVTS").sum()),
                "mean_vg_reduction": float(vg.mean()) if len(vg) else None,
                "mean_pcc": float(sub.numeric("PCC").mean()),
            }
        )
    return stats_rows


def _practice_overview_figure(table: FeatureTable):
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    groups = _cohorts(table)
    for axis, column, title in (
        (axes[0], "PCC", "Process cyclomatic complexity"),
        (axes[1], "vg_reduction", "Code complexity reduction (%)"),
    ):
        positions, labels = [], []
        for i, (practice, rows) in enumerate(groups.items()):
            sub = FeatureTable(columns=table.columns, rows=rows)
            values = sub.numeric(column)
            values = values[~np.isnan(values)]
            if not len(values):
                continue
            color = PRACTICE_COLORS.get(practice, "#555555")
            jitter = np.linspace(-0.18, 0.18, len(values))
            axis.scatter(np.full(len(values), i) + jitter, values, s=12, alpha=0.7, color=color)
            axis.boxplot(
                [values], positions=[i], widths=0.5, showfliers=False,
                medianprops={"color": "black"},
            )
            positions.append(i)
            labels.append(practice)
        axis.set_xticks(positions)
        axis.set_xticklabels(labels)
        axis.set_title(title, fontsize=10)
        axis.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    return fig


def _partition_figure(partition: dict):
    panels = [(key, diag) for key, diag in (
        ("pcc", (partition.get("pcc") or {}).get("diagnostics")),
        ("vg", (partition.get("vg") or {}).get("diagnostics")),
    ) if diag]
    if not panels:
        return None
    fig, axes = plt.subplots(len(panels), 2, figsize=(9, 3.2 * len(panels)), squeeze=False)
    for row, (key, diag) in enumerate(panels):
        ks = [k for k, _ in diag["distortion_curve"]]
        axes[row][0].plot(ks, [d for _, d in diag["distortion_curve"]], marker="o")
        axes[row][0].axvline(diag["elbow_k"], color="#d62728", linestyle="--", linewidth=1)
        axes[row][0].set_title(f"{key.upper()}: distortion (elbow k={diag['elbow_k']})", fontsize=9)
        axes[row][0].set_xlabel("k")
        axes[row][1].plot(
            [k for k, _ in diag["silhouette_curve"]],
            [s for _, s in diag["silhouette_curve"]],
            marker="o",
            color="#2ca02c",
        )
        axes[row][1].axvline(diag["max_silhouette_k"], color="#d62728", linestyle="--", linewidth=1)
        axes[row][1].set_title(
            f"{key.upper()}: mean silhouette (best k={diag['max_silhouette_k']})", fontsize=9
        )
        axes[row][1].set_xlabel("k")
    fig.tight_layout()
    return fig


def _read_matrix(path: Path) -> tuple[list[str], np.ndarray] | None:
    if not path.exists():
        return None
    with open(path, encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        names = header[1:]
        cells = []
        for row in reader:
            cells.append([float(c) if c != "" else math.nan for c in row[1:]])
    return names, np.array(cells)


def _heatmap_figure(names: list[str], matrix: np.ndarray, title: str):
    fig, axis = plt.subplots(figsize=(7.5, 6.5))
    masked = np.ma.masked_invalid(matrix)
    cmap = matplotlib.colormaps["RdBu_r"].copy()
    cmap.set_bad(color="#f0f0f0")
    image = axis.imshow(masked, vmin=-1.0, vmax=1.0, cmap=cmap)
    axis.set_xticks(range(len(names)))
    axis.set_xticklabels(names, rotation=90, fontsize=7)
    axis.set_yticks(range(len(names)))
    axis.set_yticklabels(names, fontsize=7)
    axis.set_title(title, fontsize=10)
    fig.colorbar(image, ax=axis, shrink=0.8)
    fig.tight_layout()
    return fig


def _importance_figure(path: Path):
    if not path.exists():
        return None
    with open(path, encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        pairs = [(row["feature"], float(row["importance"])) for row in reader]
    if not pairs:
        return None
    top = pairs[:20][::-1]
    fig, axis = plt.subplots(figsize=(7, 0.3 * len(top) + 1.2))
    axis.barh([name for name, _ in top], [value for _, value in top], color="#1f77b4")
    axis.set_xlabel("permutation importance (normalized)")
    axis.set_title("Feature importance", fontsize=10)
    fig.tight_layout()
    return fig


def build_report(config: PipelineConfig, writer: StageWriter) -> dict:
    out = config.out()
    summary: dict = {"artifacts": {}}

    table = None
    for name in ("features_partitioned.csv", "features.csv"):
        if (out / name).exists():
            table = read_feature_table(out / name)
            summary["artifacts"]["features"] = name
            break

    if table is not None:
        cohorts = _cohort_stats(table)
        summary["cohorts"] = cohorts
        csv_out = io.StringIO()
        fields = [
            "practice", "teams", "developers", "sessions", "events",
            "mean_vg_reduction", "mean_pcc",
        ]
        csv_writer = csv.DictWriter(csv_out, fieldnames=fields, lineterminator="\n")
        csv_writer.writeheader()
        for row in cohorts:
            csv_writer.writerow(
                {
                    key: (_num(value) if isinstance(value, float) else "" if value is None else value)
                    for key, value in row.items()
                }
            )
        writer.write_text("summary.csv", csv_out.getvalue())
        figure = _practice_overview_figure(table)
        writer.write_figure("figures/practice_overview.png", figure)
        plt.close(figure)

    partition = _load_json(out / "partition.json")
    if partition:
        summary["partition"] = {
            key: (None if partition.get(key) is None else {
                "labels": partition[key]["labels"],
                "edges": partition[key]["edges"],
            })
            for key in ("pcc", "vg")
        }
        figure = _partition_figure(partition)
        if figure is not None:
            writer.write_figure("figures/partition_selection.png", figure)
            plt.close(figure)

    correlation = _load_json(out / "correlation_summary.json")
    if correlation:
        summary["correlation"] = correlation
        for cohort in correlation:
            loaded = _read_matrix(out / f"correlation_significant_{cohort}.csv")
            if loaded is None:
                continue
            names, matrix = loaded
            figure = _heatmap_figure(
                names, matrix, f"Significant Spearman correlations ({cohort})"
            )
            writer.write_figure(f"figures/correlation_heatmap_{cohort}.png", figure)
            plt.close(figure)

    train_report = _load_json(out / "train_report.json")
    if train_report:
        summary["model"] = {
            "family": train_report["family"],
            "target": train_report["target"],
            "accuracy": train_report["cv"]["accuracy"],
            "weighted_roc": train_report["cv"]["weighted_roc"],
            "selected_features": train_report["selected_features"],
        }
        figure = _importance_figure(out / "importance.csv")
        if figure is not None:
            writer.write_figure("figures/feature_importance.png", figure)
            plt.close(figure)

    ingest_report = _load_json(out / "ingest_report.json")
    if ingest_report:
        summary["ingest"] = ingest_report

    writer.write_json("summary.json", summary)
    return summary
