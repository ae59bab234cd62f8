"""Pipeline stages behind the CLI: ingest -> discover -> metrics -> partition
-> correlate -> train -> report, plus the synthetic-scenario stage.

Every stage reads plain CSV/JSON/DOT artifacts from the output directory (or
explicit input paths), writes its outputs atomically (temp file + rename) and
removes partial outputs on failure, so reruns with the same config and seed
produce byte-identical artifact trees and any stage can run standalone.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import discovery, eventlog, learn, metrics, stats, synth
from .errors import ConfigurationError, InputError, SchemaError

DELTA_PREFIX = "delta_"
COMMAND_PREFIX = "cmd:"


@dataclass
class PipelineConfig:
    """Effective configuration for one stage invocation."""

    out_dir: str = "out"
    input: str | None = None
    products: str | None = None
    labels: str | None = None
    catalog: str | None = None
    event_format: str = "json-lines"
    verify_hashes: bool = False
    level: int = 2
    filter_activities: float = 1.0
    filter_paths: float = 1.0
    overlay: str = "absolute-frequency"
    k: int = 3
    pcc_k: int = 2
    alpha: float = 0.05
    folds: int = 10
    seed: int = 7
    features: str = "standard"
    family: str = "forest"
    target: str = "practice"
    grid: bool = False
    select: str | None = None
    noise_features: int = 0
    importance_repeats: int = 5

    def validate(self) -> None:
        if self.level not in (0, 1, 2):
            raise ConfigurationError("level must be 0, 1 or 2")
        for name in ("filter_activities", "filter_paths"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ConfigurationError(f"{name} must be in (0, 1]")
        if self.features not in ("standard", "extended"):
            raise ConfigurationError("features must be standard or extended")
        if self.family not in learn.FAMILIES:
            raise ConfigurationError(f"family must be one of {', '.join(learn.FAMILIES)}")
        if self.target not in ("practice", "vg_level"):
            raise ConfigurationError("target must be practice or vg_level")
        if self.select not in (None, "forward", "backward"):
            raise ConfigurationError("select must be forward or backward")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError("alpha must be in (0, 1)")
        if self.folds < 2:
            raise ConfigurationError("folds must be at least 2")
        if self.k < 1 or self.pcc_k < 1:
            raise ConfigurationError("partition k must be positive")
        if self.noise_features < 0:
            raise ConfigurationError("noise_features must be non-negative")

    def out(self) -> Path:
        return Path(self.out_dir)


def level_labels(k: int) -> tuple[str, ...]:
    named = {
        1: ("ALL",),
        2: ("LOW", "HIGH"),
        3: ("LOW", "MEDIUM", "HIGH"),
        4: ("LOW", "MEDIUM", "HIGH", "VERY HIGH"),
    }
    return named.get(k, tuple(f"LEVEL_{i + 1}" for i in range(k)))


class StageWriter:
    """Atomic artifact writer that can roll back a failed stage."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.created: list[Path] = []

    def _commit(self, path: Path, writer: Callable[[Path], None]) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.parent / (path.name + ".tmp")
        writer(tmp)
        os.replace(tmp, path)
        self.created.append(path)
        return path

    def write_text(self, relpath: str, text: str) -> Path:
        return self._commit(
            self.out_dir / relpath, lambda tmp: tmp.write_text(text, encoding="utf-8")
        )

    def write_json(self, relpath: str, payload) -> Path:
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
        return self.write_text(relpath, text)

    def write_figure(self, relpath: str, figure) -> Path:
        def save(tmp: Path) -> None:
            figure.savefig(tmp, format="png", dpi=120, metadata={"Software": "idemine"})

        return self._commit(self.out_dir / relpath, save)

    def rollback(self) -> None:
        for path in self.created:
            try:
                path.unlink()
            except OSError:
                pass


def run_stage(name: str, config: PipelineConfig, stage: Callable[[PipelineConfig, StageWriter], dict]) -> dict:
    """Run one stage with config echo and partial-output rollback."""
    config.validate()
    writer = StageWriter(config.out())
    try:
        result = stage(config, writer)
        echo = {key: value for key, value in asdict(config).items()}
        writer.write_json(f"config_{name}.json", echo)
        return result
    except BaseException:
        writer.rollback()
        raise


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise ConfigurationError(f"missing input path {path} ({hint})")
    return path


def _num(value: float) -> str:
    if isinstance(value, float) and value.is_integer():
        return repr(value)
    return repr(value)


# ---------------------------------------------------------------------------
# synth

def stage_synth(config: PipelineConfig, writer: StageWriter) -> dict:
    scenario = synth.default_config(config.seed)
    result = synth.generate(scenario)
    writer.write_text("events.jsonl", synth.events_as_json_lines(result.events))
    writer.write_text("products.csv", metrics.write_product_snapshots(result.snapshots))
    writer.write_text("ground_truth.csv", synth.ground_truth_as_csv(result.ground_truth))
    return {
        "teams": len(result.ground_truth),
        "events": len(result.events),
    }


# ---------------------------------------------------------------------------
# ingest

def stage_ingest(config: PipelineConfig, writer: StageWriter) -> dict:
    if config.input is None:
        raise ConfigurationError("ingest needs --input pointing at an event file")
    source = _require(Path(config.input), "raw events")
    try:
        payload = source.read_bytes()
    except OSError as exc:
        raise InputError(f"unreadable source {source}: {exc}") from exc
    events, report = eventlog.parse_events(
        payload, fmt=config.event_format, verify_hashes=config.verify_hashes
    )
    deduped = eventlog.deduplicate(events)
    report.duplicates_removed = len(events) - len(deduped)
    writer.write_text("clean_events.jsonl", synth.events_as_json_lines(deduped))
    writer.write_json("ingest_report.json", report.as_dict())
    return report.as_dict()


def load_clean_log(config: PipelineConfig) -> eventlog.EventLog:
    path = Path(config.input) if config.input else config.out() / "clean_events.jsonl"
    _require(path, "run the ingest stage first or pass --input")
    events, report = eventlog.parse_events(path.read_bytes(), fmt="json-lines")
    if report.rejected:
        raise SchemaError(f"clean event file contains {report.rejected} invalid records")
    return eventlog.build_log(eventlog.deduplicate(events))


# ---------------------------------------------------------------------------
# discover

def stage_discover(config: PipelineConfig, writer: StageWriter) -> dict:
    log = load_clean_log(config)
    model = discovery.discover_model(log, max_level=2)
    system = discovery.flatten_level(model, config.level)
    filtered = discovery.filter_model(system, config.filter_activities, config.filter_paths)
    writer.write_text("model.dot", discovery.export_dot(filtered, overlay=config.overlay))
    writer.write_json("model_summary.json", discovery.model_as_dict(model))
    return {
        "level": config.level,
        "nodes": len(filtered.nodes),
        "arcs": filtered.arc_count,
    }


# ---------------------------------------------------------------------------
# metrics

def _read_labels(path: Path) -> dict[str, str]:
    with open(path, encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or "team" not in reader.fieldnames:
            raise SchemaError(f"label file {path} needs a 'team' column")
        label_col = "practice" if "practice" in reader.fieldnames else None
        if label_col is None:
            raise SchemaError(f"label file {path} needs a 'practice' column")
        return {row["team"]: row[label_col] for row in reader}


def feature_csv_columns(catalog: Sequence[str], extended: bool) -> list[str]:
    columns = ["team", *metrics.PROCESS_METRIC_COLUMNS]
    if extended:
        columns.extend(f"{COMMAND_PREFIX}{label}" for label in catalog)
    columns.extend(f"{DELTA_PREFIX}{name}" for name in metrics.PRODUCT_METRIC_COLUMNS)
    columns.extend(["vg_reduction", "practice"])
    return columns


def stage_metrics(config: PipelineConfig, writer: StageWriter) -> dict:
    log = load_clean_log(config)
    if config.products is None:
        raise ConfigurationError("metrics needs --products pointing at snapshot CSV")
    products_path = _require(Path(config.products), "product snapshots")
    snapshots = metrics.read_product_snapshots(products_path.read_text(encoding="utf-8"))
    pairs = metrics.pair_snapshots(snapshots)
    labels = _read_labels(_require(Path(config.labels), "labels")) if config.labels else {}
    catalog = metrics.load_catalog(config.catalog)
    extended = config.features == "extended"

    team_logs = eventlog.split_by_team(log)
    undefined_report: dict[str, list[str]] = {}
    rows = []
    for team, team_log in team_logs.items():
        model = discovery.discover_model(team_log, max_level=2)
        record = metrics.compute_process_metrics(team_log, model)
        delta = None
        if team in pairs:
            delta = metrics.compute_delta(*pairs[team])
            if delta.undefined:
                undefined_report[team] = list(delta.undefined)
        vector = metrics.command_frequency_vector(team_log, catalog) if extended else None
        rows.append(
            metrics.FeatureRow(
                team=team,
                process=record,
                delta=delta,
                commands=vector,
                practice=labels.get(team),
            )
        )

    columns = feature_csv_columns(catalog, extended)
    out = io.StringIO()
    csv_writer = csv.writer(out, lineterminator="\n")
    csv_writer.writerow(columns)
    for row in rows:
        process_values = row.process.as_row()
        cells: list[str] = [row.team]
        cells.extend(_num(float(process_values[name])) for name in metrics.PROCESS_METRIC_COLUMNS)
        if extended:
            assert row.commands is not None
            cells.extend(str(row.commands.counts[label]) for label in catalog)
        for name in metrics.PRODUCT_METRIC_COLUMNS:
            if row.delta is None or name in row.delta.undefined:
                cells.append("")
            else:
                cells.append(_num(row.delta.deltas[name]))
        reduction = None if row.delta is None else row.delta.vg_reduction
        cells.append("" if reduction is None else _num(reduction))
        cells.append(row.practice or "")
        csv_writer.writerow(cells)
    writer.write_text("features.csv", out.getvalue())
    writer.write_json(
        "metrics_report.json",
        {
            "teams": len(rows),
            "events": log.event_count,
            "feature_set": config.features,
            "undefined_deltas": undefined_report,
        },
    )
    return {"teams": len(rows), "features": len(columns) - 1}


# ---------------------------------------------------------------------------
# feature-table access

@dataclass
class FeatureTable:
    columns: list[str]
    rows: list[dict[str, str]]

    def numeric(self, column: str) -> np.ndarray:
        values = []
        for row in self.rows:
            cell = row.get(column, "")
            values.append(float(cell) if cell != "" else np.nan)
        return np.array(values)

    def teams(self) -> list[str]:
        return [row["team"] for row in self.rows]


def read_feature_table(path: Path) -> FeatureTable:
    with open(path, encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise SchemaError(f"empty feature table {path}")
        return FeatureTable(columns=list(reader.fieldnames), rows=list(reader))


def load_feature_table(config: PipelineConfig, partitioned_ok: bool = True) -> tuple[FeatureTable, Path]:
    candidates = []
    if config.input:
        candidates.append(Path(config.input))
    else:
        if partitioned_ok:
            candidates.append(config.out() / "features_partitioned.csv")
        candidates.append(config.out() / "features.csv")
    for path in candidates:
        if path.exists():
            return read_feature_table(path), path
    raise ConfigurationError(
        f"missing input path {candidates[-1]} (run the metrics stage first or pass --input)"
    )


# ---------------------------------------------------------------------------
# partition

def _partition_diagnostics(values: np.ndarray, seed: int) -> dict | None:
    points = values.reshape(-1, 1)
    max_k = min(8, len(np.unique(values)) - 1, len(values) - 1)
    if max_k < 4:
        return None
    k_range = list(range(2, max_k + 1))
    curve, elbow_k = stats.elbow_select(points, k_range, seed)
    silhouettes = []
    for k in k_range:
        clustering = stats.best_of_restarts(points, k, seed)
        silhouettes.append(
            (k, stats.silhouette_score(points, clustering.assignment).mean)
        )
    best_sil = max(silhouettes, key=lambda item: (item[1], -item[0]))[0]
    return {
        "distortion_curve": [[k, d] for k, d in curve],
        "elbow_k": elbow_k,
        "silhouette_curve": [[k, s] for k, s in silhouettes],
        "max_silhouette_k": best_sil,
    }


def stage_partition(config: PipelineConfig, writer: StageWriter) -> dict:
    table, _ = load_feature_table(config, partitioned_ok=False)
    report: dict = {}

    pcc_values = table.numeric("PCC")
    pcc_partition = stats.level_partition(
        pcc_values, config.pcc_k, level_labels(config.pcc_k), config.seed
    )
    pcc_levels = pcc_partition.assign_all(pcc_values)
    report["pcc"] = {
        "k": config.pcc_k,
        "labels": list(pcc_partition.labels),
        "edges": list(pcc_partition.edges),
        "diagnostics": _partition_diagnostics(pcc_values, config.seed),
    }

    vg_values = table.numeric("vg_reduction")
    defined = ~np.isnan(vg_values)
    vg_levels = [""] * len(table.rows)
    if defined.sum() >= config.k:
        vg_partition = stats.level_partition(
            vg_values[defined], config.k, level_labels(config.k), config.seed
        )
        assigned = vg_partition.assign_all(vg_values[defined])
        for slot, index in enumerate(np.flatnonzero(defined)):
            vg_levels[int(index)] = assigned[slot]
        report["vg"] = {
            "k": config.k,
            "labels": list(vg_partition.labels),
            "edges": list(vg_partition.edges),
            "diagnostics": _partition_diagnostics(vg_values[defined], config.seed),
        }
    else:
        report["vg"] = None

    out = io.StringIO()
    columns = table.columns + ["PCC_LEVEL", "VG_LEVEL"]
    csv_writer = csv.writer(out, lineterminator="\n")
    csv_writer.writerow(columns)
    for row, pcc_level, vg_level in zip(table.rows, pcc_levels, vg_levels):
        csv_writer.writerow([row.get(c, "") for c in table.columns] + [pcc_level, vg_level])
    writer.write_text("features_partitioned.csv", out.getvalue())
    writer.write_json("partition.json", report)
    return report


# ---------------------------------------------------------------------------
# correlate

CORRELATION_COLUMNS = tuple(metrics.PROCESS_METRIC_COLUMNS) + ("vg_reduction",)


def _write_matrix_csv(names: Sequence[str], matrix: np.ndarray, mask=None) -> str:
    out = io.StringIO()
    csv_writer = csv.writer(out, lineterminator="\n")
    csv_writer.writerow(["metric", *names])
    for i, name in enumerate(names):
        row = [name]
        for j in range(len(names)):
            value = matrix[i, j]
            hide = math.isnan(value) or (mask is not None and not mask[i, j])
            row.append("" if hide else _num(float(value)))
        csv_writer.writerow(row)
    return out.getvalue()


def stage_correlate(config: PipelineConfig, writer: StageWriter) -> dict:
    table, _ = load_feature_table(config)
    practices = sorted({row.get("practice", "") for row in table.rows} - {""})
    cohorts = practices if practices else ["all"]
    summary = {}
    for cohort in cohorts:
        if cohort == "all":
            rows = table.rows
        else:
            rows = [row for row in table.rows if row.get("practice") == cohort]
        sub = FeatureTable(columns=table.columns, rows=rows)
        columns = {
            name: sub.numeric(name)
            for name in CORRELATION_COLUMNS
            if name in table.columns
        }
        names, rho, pval = stats.correlation_matrix(columns, alpha=config.alpha, method="auto")
        significant = pval < config.alpha
        writer.write_text(f"correlation_rho_{cohort}.csv", _write_matrix_csv(names, rho))
        writer.write_text(f"correlation_p_{cohort}.csv", _write_matrix_csv(names, pval))
        writer.write_text(
            f"correlation_significant_{cohort}.csv",
            _write_matrix_csv(names, rho, mask=significant),
        )
        vg_index = names.index("vg_reduction")
        pcc_index = names.index("PCC")
        summary[cohort] = {
            "n": len(rows),
            "rho_vg_pcc": None
            if math.isnan(rho[vg_index, pcc_index])
            else rho[vg_index, pcc_index],
            "p_vg_pcc": None
            if math.isnan(pval[vg_index, pcc_index])
            else pval[vg_index, pcc_index],
        }
    writer.write_json("correlation_summary.json", summary)
    return summary


# ---------------------------------------------------------------------------
# train

def dataset_from_table(table: FeatureTable, feature_set: str, target: str) -> learn.Dataset:
    feature_names = list(metrics.PROCESS_METRIC_COLUMNS)
    if feature_set == "extended":
        command_columns = [c for c in table.columns if c.startswith(COMMAND_PREFIX)]
        if not command_columns:
            raise SchemaError("feature table has no command-frequency columns; "
                              "rerun the metrics stage with --features extended")
        feature_names.extend(command_columns)
    label_column = "practice" if target == "practice" else "VG_LEVEL"
    if label_column not in table.columns:
        raise SchemaError(f"feature table has no {label_column} column")
    rows, labels = [], []
    for row in table.rows:
        label = row.get(label_column, "")
        if not label:
            continue
        rows.append([float(row[name]) for name in feature_names])
        labels.append(label)
    if not rows:
        raise SchemaError(f"no rows carry a {label_column} label")
    return learn.Dataset.from_rows(feature_names, rows, labels)


def stage_train(config: PipelineConfig, writer: StageWriter) -> dict:
    table, _ = load_feature_table(config)
    data = dataset_from_table(table, config.features, config.target)
    if config.noise_features:
        data = learn.add_noise_features(data, config.noise_features, config.seed)

    grid_rows = []
    if config.grid:
        spec, scored = learn.grid_search(config.family, data, config.folds, config.seed)
        grid_rows = [
            {"hyperparameters": s.as_dict()["hyperparameters"], "weighted_roc": score}
            for s, score in scored
        ]
    else:
        spec = learn.ClassifierSpec(config.family)

    selected = list(data.feature_names)
    if config.select:
        selected = list(
            learn.greedy_feature_select(spec, data, config.select, config.folds, config.seed)
        )
        data = data.select_features(selected)

    report = learn.cross_validate(spec, data, config.folds, config.seed)
    model = learn.train(spec, data, config.seed)
    # out-of-fold variant: a memorizing model shows no drop on its own
    # training rows, so importance is judged on held-out predictions
    importance = learn.cv_permutation_importance(
        spec, data, folds=config.folds, repeats=config.importance_repeats, seed=config.seed
    )

    eval_csv = io.StringIO()
    csv_writer = csv.DictWriter(
        eval_csv, fieldnames=list(learn.EVAL_CSV_COLUMNS), lineterminator="\n"
    )
    csv_writer.writeheader()
    for row in report.as_rows():
        csv_writer.writerow(
            {key: (_num(value) if isinstance(value, float) else value) for key, value in row.items()}
        )
    writer.write_text("eval_report.csv", eval_csv.getvalue())

    importance_csv = io.StringIO()
    imp_writer = csv.writer(importance_csv, lineterminator="\n")
    imp_writer.writerow(["feature", "importance"])
    for name, value in importance.ranked():
        imp_writer.writerow([name, _num(value)])
    writer.write_text("importance.csv", importance_csv.getvalue())

    writer.write_json("model.json", model.to_dict())
    train_report = {
        "target": config.target,
        "feature_set": config.features,
        "family": config.family,
        "rows": data.n_rows,
        "classes": list(data.classes),
        "spec": spec.as_dict(),
        "grid": grid_rows,
        "selected_features": selected,
        "noise_features": config.noise_features,
        "cv": {
            "folds": config.folds,
            "accuracy": report.accuracy,
            "weighted_roc": report.weighted.roc_auc,
            "weighted_f_measure": report.weighted.f_measure,
            "weighted_mcc": report.weighted.mcc,
        },
    }
    writer.write_json("train_report.json", train_report)
    return train_report


# ---------------------------------------------------------------------------
# report

def stage_report(config: PipelineConfig, writer: StageWriter) -> dict:
    from . import report as report_module

    return report_module.build_report(config, writer)


STAGES: dict[str, Callable[[PipelineConfig, StageWriter], dict]] = {
    "synth": stage_synth,
    "ingest": stage_ingest,
    "discover": stage_discover,
    "metrics": stage_metrics,
    "partition": stage_partition,
    "correlate": stage_correlate,
    "train": stage_train,
    "report": stage_report,
}


def run(subcommand: str, config: PipelineConfig) -> dict:
    """Run one pipeline stage by name."""
    if subcommand not in STAGES:
        raise ConfigurationError(f"unknown subcommand {subcommand!r}")
    return run_stage(subcommand, config, STAGES[subcommand])
