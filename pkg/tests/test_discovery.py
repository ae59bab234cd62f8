"""Hierarchical discovery, flattening, filtering and DOT export."""

from collections import Counter

import numpy as np
import pytest

from idemine import discovery
from idemine.errors import ConfigurationError
from idemine.eventlog import END_LABEL, START_LABEL

from conftest import make_log, random_log


def test_single_trace_chain_level2():
    log = make_log({"T/1": [("f", "Edit", "Copy"), ("f", "Edit", "Paste")]})
    ts = discovery.flatten_level(discovery.discover_model(log), 2)
    assert set(ts.nodes) == {"f|Edit|Copy", "f|Edit|Paste"}
    assert ts.arcs == {
        (START_LABEL, "f|Edit|Copy"): 1,
        ("f|Edit|Copy", "f|Edit|Paste"): 1,
        ("f|Edit|Paste", END_LABEL): 1,
    }


def test_directly_follows_frequencies_abab():
    log = make_log({"T/1": [("a", "c", "x"), ("b", "c", "x"), ("a", "c", "x"), ("b", "c", "x")]})
    ts = discovery.flatten_level(discovery.discover_model(log), 0)
    assert ts.arcs[("a", "b")] == 2
    assert ts.arcs[("b", "a")] == 1
    assert ts.nodes == {"a": 2, "b": 2}


def test_disjoint_traces_only_connect_via_boundaries():
    log = make_log({
        "T/1": [("f1", "Edit", "Copy"), ("f1", "Edit", "Paste")],
        "T/2": [("f2", "Edit", "Copy"), ("f2", "Edit", "Paste")],
    })
    ts = discovery.flatten_level(discovery.discover_model(log), 0)
    assert set(ts.nodes) == {"f1", "f2"}
    cross = [(a, b) for (a, b) in ts.arcs if a in ("f1", "f2") and b in ("f1", "f2") and a != b]
    assert cross == []


def test_empty_log_errors():
    log = make_log({})
    with pytest.raises(ValueError, match="no traces"):
        discovery.discover_model(log)


def test_flatten_levels_and_caching():
    log = make_log({"T/1": [("f", "Edit", "Copy"), ("g", "Edit", "Paste")]})
    model = discovery.discover_model(log, max_level=2)
    level0 = discovery.flatten_level(model, 0)
    assert set(level0.nodes) == {"f", "g"}
    assert discovery.flatten_level(model, 2) is discovery.flatten_level(model, 2)
    assert discovery.flatten_level(model, 2) == discovery.flatten_level(model, 2)
    with pytest.raises(ConfigurationError):
        discovery.flatten_level(model, 3)


def test_hierarchy_structure_and_frequencies():
    log = make_log({"T/1": [("f", "Edit", "Copy"), ("f", "Edit", "Paste"), ("f", "View", "Open")]})
    model = discovery.discover_model(log)
    (root,) = model.roots
    assert root.label == "f" and root.kind == "composite"
    assert root.absolute_frequency == 3
    assert {child.label for child in root.children} == {"f|Edit", "f|View"}
    leaves = model.nodes_at(2)
    assert all(leaf.kind == "simple" for leaf in leaves)
    for node in model.all_nodes():
        if node.kind == "composite":
            assert node.absolute_frequency == sum(c.absolute_frequency for c in node.children)


def _naive_directly_follows(log, level):
    arcs = Counter()
    for trace in log.traces:
        labels = [e.label(level) for e in trace.events]
        walk = [START_LABEL] + labels + [END_LABEL]
        for pair in zip(walk, walk[1:]):
            arcs[pair] += 1
    return dict(arcs)


def test_directly_follows_matches_naive_scan_on_random_logs():
    rng = np.random.default_rng(42)
    for _ in range(15):
        log = random_log(rng)
        model = discovery.discover_model(log)
        for level in range(3):
            assert dict(discovery.flatten_level(model, level).arcs) == _naive_directly_follows(log, level)


def test_replay_soundness_and_flow_conservation():
    rng = np.random.default_rng(7)
    for _ in range(10):
        log = random_log(rng)
        model = discovery.discover_model(log)
        for level in range(3):
            ts = discovery.flatten_level(model, level)
            for trace in log.traces:
                assert ts.replays([e.label(level) for e in trace.events])
            for label, freq in ts.nodes.items():
                inflow = sum(f for (a, b), f in ts.arcs.items() if b == label)
                outflow = sum(f for (a, b), f in ts.arcs.items() if a == label)
                assert inflow == freq and outflow == freq


def test_filter_identity():
    log = make_log({"T/1": [("f", "Edit", "Copy"), ("g", "Edit", "Paste")]})
    ts = discovery.flatten_level(discovery.discover_model(log), 2)
    assert discovery.filter_model(ts, 1.0, 1.0) == ts


def test_filter_equal_frequency_ties_break_lexicographically():
    log = make_log({"T/1": [(f"f{i}", "Edit", "Copy") for i in range(10)]})
    ts = discovery.flatten_level(discovery.discover_model(log), 0)
    assert len(ts.nodes) == 10
    filtered = discovery.filter_model(ts, 0.2, 1.0)
    assert sorted(filtered.nodes) == ["f0", "f1"]


def test_filter_path_fraction_ceiling():
    # two heavy a->b->c walks plus one light a->c shortcut: 5 arcs, one droppable
    log = make_log({
        "T/1": [("a", "c", "x"), ("b", "c", "x"), ("c", "c", "x")],
        "T/2": [("a", "c", "x"), ("b", "c", "x"), ("c", "c", "x")],
        "T/3": [("a", "c", "x"), ("c", "c", "x")],
    })
    ts = discovery.flatten_level(discovery.discover_model(log), 0)
    assert ts.arc_count == 5
    filtered = discovery.filter_model(ts, 1.0, 0.8)
    assert filtered.arc_count == 4
    assert ("a", "c") not in filtered.arcs  # the least frequent arc went


def test_filter_repair_restores_chain_tail():
    # dropping the single exit arc of a chain is mended by one boundary arc
    log = make_log({"T/1": [(x, "c", "x") for x in "abcd"]})
    ts = discovery.flatten_level(discovery.discover_model(log), 0)
    filtered = discovery.filter_model(ts, 1.0, 0.8)
    assert filtered == ts


def test_filter_repairs_connectivity():
    rng = np.random.default_rng(11)
    for _ in range(10):
        log = random_log(rng)
        ts = discovery.flatten_level(discovery.discover_model(log), 2)
        filtered = discovery.filter_model(ts, 0.3, 0.5)
        assert set(filtered.nodes) <= set(ts.nodes)
        # every kept node reachable from START and co-reachable to END
        forward = {START_LABEL}
        changed = True
        while changed:
            changed = False
            for (a, b) in filtered.arcs:
                if a in forward and b not in forward:
                    forward.add(b)
                    changed = True
        assert set(filtered.nodes) <= forward
        backward = {END_LABEL}
        changed = True
        while changed:
            changed = False
            for (a, b) in filtered.arcs:
                if b in backward and a not in backward:
                    backward.add(a)
                    changed = True
        assert set(filtered.nodes) <= backward


def test_filter_fraction_validation():
    log = make_log({"T/1": [("a", "c", "x")]})
    ts = discovery.flatten_level(discovery.discover_model(log), 0)
    for bad in (0.0, -0.5, 1.5):
        with pytest.raises(ConfigurationError):
            discovery.filter_model(ts, bad, 1.0)


def test_export_dot_stable_and_valid():
    log = make_log({"T/1": [("f", "Edit", "Copy"), ("g", "Edit", "Paste")]})
    ts = discovery.flatten_level(discovery.discover_model(log), 0)
    dot = discovery.export_dot(ts)
    assert dot == discovery.export_dot(ts)
    assert dot.startswith("digraph process {")
    assert dot.rstrip().endswith("}")
    assert '"START" -> "f"' in dot
    assert '"g" -> "END"' in dot
    assert "fillcolor" in dot


def test_export_dot_overlay_none_has_no_style():
    log = make_log({"T/1": [("f", "Edit", "Copy")]})
    ts = discovery.flatten_level(discovery.discover_model(log), 0)
    dot = discovery.export_dot(ts, overlay="none")
    assert "fillcolor" not in dot and "style" not in dot and "label=" not in dot
    with pytest.raises(ConfigurationError):
        discovery.export_dot(ts, overlay="heat")


def test_model_summary_dict_round_trips_counts():
    log = make_log({"T/1": [("f", "Edit", "Copy"), ("f", "Edit", "Paste")]})
    model = discovery.discover_model(log)
    summary = discovery.model_as_dict(model)
    assert summary["max_level"] == 2
    assert len(summary["levels"]) == 3
    level2 = summary["levels"]["2"]
    assert {n["label"] for n in level2["nodes"]} == {"f|Edit|Copy", "f|Edit|Paste"}
    assert len(level2["arcs"]) == 3
