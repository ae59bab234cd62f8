"""Process metrics, deltas, command frequencies and feature assembly."""

import numpy as np
import pytest

from idemine import discovery, eventlog, metrics
from idemine.discovery import TransitionSystem
from idemine.errors import SchemaError
from idemine.eventlog import END_LABEL, START_LABEL

from conftest import make_log, random_log


def _ts(nodes: dict, arcs: dict) -> TransitionSystem:
    return TransitionSystem(level=2, nodes=nodes, arcs=arcs)


def test_pcc_straight_chain_is_one():
    ts = _ts(
        {"a": 1, "b": 1, "c": 1},
        {(START_LABEL, "a"): 1, ("a", "b"): 1, ("b", "c"): 1, ("c", END_LABEL): 1},
    )
    # E=4, N=5, P=1 -> 4 - 5 + 2 = 1
    assert metrics.compute_pcc(ts) == 1


def test_pcc_diamond():
    ts = _ts(
        {"a": 1, "b": 1, "c": 1, "d": 1},
        {("a", "b"): 1, ("a", "c"): 1, ("b", "d"): 1, ("c", "d"): 1,
         (START_LABEL, "a"): 1, ("d", END_LABEL): 1},
    )
    # E=6, N=6, P=1 -> 2
    assert metrics.compute_pcc(ts) == 2


def test_pcc_two_disjoint_chains():
    ts = _ts(
        {"a": 1, "b": 1, "c": 1, "d": 1},
        {("a", "b"): 1, ("c", "d"): 1},
    )
    # E=2, N=6 (incl. START/END), P=4 -> 2 - 6 + 8 = 4
    assert metrics.compute_pcc(ts) == 4


def test_pcc_empty_errors():
    with pytest.raises(ValueError):
        metrics.compute_pcc(_ts({}, {}))


def _bfs_pcc_oracle(ts: TransitionSystem) -> int:
    labels = list(ts.all_labels())
    neighbours = {label: set() for label in labels}
    for a, b in ts.arcs:
        neighbours[a].add(b)
        neighbours[b].add(a)
    seen = set()
    components = 0
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
    return len(ts.arcs) - len(labels) + 2 * components


def test_pcc_matches_bfs_oracle_on_random_graphs():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(1, 20))
        labels = [f"n{i}" for i in range(n)]
        everything = labels + [START_LABEL, END_LABEL]
        arcs = {}
        for _ in range(int(rng.integers(0, 40))):
            a = everything[int(rng.integers(len(everything)))]
            b = everything[int(rng.integers(len(everything)))]
            arcs[(a, b)] = int(rng.integers(1, 5))
        ts = _ts({lab: 1 for lab in labels}, arcs)
        assert metrics.compute_pcc(ts) == _bfs_pcc_oracle(ts)


def test_process_metrics_direct_counts():
    log = make_log({"Team-A/s1": [("f", "Edit", "Copy"), ("f", "Edit", "Paste")]})
    model = discovery.discover_model(log)
    record = metrics.compute_process_metrics(log, model)
    assert (record.dev, record.ses, record.evts, record.nfiles, record.ncom) == (1, 1, 2, 1, 2)
    assert record.ncat == 1
    assert record.ec == 2
    assert record.nss == 2            # two leaf activities
    assert record.ncs == 2            # composite "f" and "f|Edit"
    assert record.noa == record.nss + record.ncs
    assert record.pcc == metrics.compute_pcc(discovery.flatten_level(model, 2))
    assert record.pccpf == record.pcc / record.nfiles


def test_noa_identity_on_random_logs():
    rng = np.random.default_rng(9)
    for _ in range(10):
        log = random_log(rng)
        model = discovery.discover_model(log)
        record = metrics.compute_process_metrics(log, model)
        assert record.noa == record.nss + record.ncs
        assert record.not_ == discovery.flatten_level(model, 2).arc_count


def test_distinct_counts_permutation_invariant(small_scenario):
    events = list(small_scenario.events)
    log_a = eventlog.build_log(events)
    log_b = eventlog.build_log(list(reversed(events)))
    team_a = eventlog.split_by_team(log_a)
    team_b = eventlog.split_by_team(log_b)
    for team in team_a:
        rec_a = metrics.compute_process_metrics(team_a[team], discovery.discover_model(team_a[team]))
        rec_b = metrics.compute_process_metrics(team_b[team], discovery.discover_model(team_b[team]))
        assert rec_a == rec_b


def _snapshot(team="T", moment="t0", **overrides):
    values = {name: 10.0 for name in metrics.PRODUCT_METRIC_COLUMNS}
    values["TLOC"] = 5000.0
    values.update(overrides)
    return metrics.ProductMetricsSnapshot(team=team, moment=moment, values=values)


def test_delta_basic_arithmetic():
    t0 = _snapshot(VG=200.0)
    t1 = _snapshot(moment="t1", VG=150.0)
    delta = metrics.compute_delta(t0, t1)
    assert delta.deltas["VG"] == pytest.approx(-25.0, abs=1e-12)
    assert delta.vg_reduction == pytest.approx(25.0, abs=1e-12)


def test_delta_identity_is_zero():
    t0 = _snapshot()
    t1 = _snapshot(moment="t1")
    delta = metrics.compute_delta(t0, t1)
    assert all(value == 0.0 for value in delta.deltas.values())
    assert delta.undefined == ()


def test_delta_zero_baseline_flagged_not_propagated():
    t0 = _snapshot(NSC=0.0)
    t1 = _snapshot(moment="t1", NSC=3.0)
    delta = metrics.compute_delta(t0, t1)
    assert "NSC" in delta.undefined
    assert "NSC" not in delta.deltas
    assert not any(np.isnan(list(delta.deltas.values())))


def test_delta_team_and_moment_validation():
    with pytest.raises(SchemaError):
        metrics.compute_delta(_snapshot(team="A"), _snapshot(team="B", moment="t1"))
    with pytest.raises(SchemaError):
        metrics.compute_delta(_snapshot(moment="t0"), _snapshot(moment="t0"))


def test_snapshot_validation():
    with pytest.raises(SchemaError):
        _snapshot(TLOC=10.5)
    with pytest.raises(SchemaError):
        _snapshot(VG=-1.0)
    with pytest.raises(SchemaError):
        metrics.ProductMetricsSnapshot(team="T", moment="t2", values={})


def test_snapshot_csv_round_trip():
    snaps = [_snapshot(team="A"), _snapshot(team="A", moment="t1", VG=9.0)]
    text = metrics.write_product_snapshots(snaps)
    parsed = metrics.read_product_snapshots(text)
    assert parsed == snaps
    pairs = metrics.pair_snapshots(parsed)
    assert set(pairs) == {"A"}


def test_command_frequency_vector_counts_and_other_bucket():
    catalog = ("Edit|Copy", "Edit|Paste")
    log = make_log({"T/1": [("f", "Edit", "Copy")] * 3 + [("f", "View", "Open")]})
    vector = metrics.command_frequency_vector(log, catalog)
    assert vector.counts == {"Edit|Copy": 3, "Edit|Paste": 0}
    assert vector.other == 1
    assert vector.total == log.event_count


def test_command_frequency_empty_log_all_zero():
    vector = metrics.command_frequency_vector(make_log({}), ("Edit|Copy",))
    assert vector.counts == {"Edit|Copy": 0} and vector.other == 0


def test_packaged_catalog_loads():
    catalog = metrics.load_catalog()
    assert "Eclipse View|Long Method" in catalog
    assert "Refactor|Java-Extract Method" in catalog
    assert len(catalog) >= 33


def _feature_row(team, practice="AR", commands=None):
    log = make_log({f"{team}/s1": [("f", "Edit", "Copy"), ("g", "Edit", "Paste")]})
    record = metrics.compute_process_metrics(log, discovery.discover_model(log))
    return metrics.FeatureRow(team=team, process=record, practice=practice, commands=commands)


def test_assemble_standard_is_18_columns():
    data = metrics.assemble_feature_table([_feature_row("A"), _feature_row("B", "MR")])
    assert data.X.shape == (2, 18)
    assert data.feature_names == metrics.PROCESS_METRIC_COLUMNS
    assert data.y == ("AR", "MR")


def test_assemble_extended_adds_catalog_columns():
    catalog = ("Edit|Copy", "Edit|Paste", "View|Open")
    rows = []
    for team, practice in (("A", "AR"), ("B", "MR")):
        log = make_log({f"{team}/s1": [("f", "Edit", "Copy")]})
        record = metrics.compute_process_metrics(log, discovery.discover_model(log))
        rows.append(
            metrics.FeatureRow(
                team=team,
                process=record,
                practice=practice,
                commands=metrics.command_frequency_vector(log, catalog),
            )
        )
    data = metrics.assemble_feature_table(rows, feature_set="extended")
    assert data.X.shape == (2, 18 + 3)
    assert data.feature_names[18:] == tuple(f"cmd:{c}" for c in catalog)


def test_assemble_duplicate_team_rejected():
    with pytest.raises(SchemaError, match="duplicate team"):
        metrics.assemble_feature_table([_feature_row("A"), _feature_row("A")])


def test_assemble_extended_requires_vectors():
    with pytest.raises(SchemaError, match="command frequencies"):
        metrics.assemble_feature_table([_feature_row("A")], feature_set="extended")


def test_assemble_missing_label_rejected():
    with pytest.raises(SchemaError, match="practice label"):
        metrics.assemble_feature_table([_feature_row("A", practice=None)])
