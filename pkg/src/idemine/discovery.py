"""Hierarchical process discovery over an event log.

The structured-names heuristic derives a three-level activity hierarchy from
``filename | category | command`` labels.  At each flattening level the
control-flow perspective is captured as a transition system: one node per
distinct level label plus artificial START/END boundary nodes, and one arc per
directly-follows pair observed inside a trace, with parallel arcs merged and
their absolute frequencies summed.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Iterable, Mapping

from .errors import ConfigurationError
from .eventlog import END_LABEL, START_LABEL, EventLog

MAX_HIERARCHY_LEVEL = 2  # activity paths have exactly three segments


@dataclass(frozen=True)
class ActivityNode:
    """One state of the hierarchical model; composites contain deeper states."""

    label: str
    level: int
    kind: str  # "simple" | "composite"
    children: tuple["ActivityNode", ...]
    absolute_frequency: int


@dataclass(frozen=True)
class TransitionSystem:
    """One flattening level: activity nodes plus START/END, and merged arcs.

    ``nodes`` maps activity labels to absolute frequencies and excludes the
    artificial boundary nodes; ``node_count`` includes them.
    """

    level: int
    nodes: Mapping[str, int]
    arcs: Mapping[tuple[str, str], int]

    @property
    def node_count(self) -> int:
        return len(self.nodes) + 2

    @property
    def arc_count(self) -> int:
        return len(self.arcs)

    def all_labels(self) -> tuple[str, ...]:
        return (START_LABEL,) + tuple(sorted(self.nodes)) + (END_LABEL,)

    def weak_components(self) -> int:
        """Number of weakly connected components, START/END included."""
        labels = self.all_labels()
        index = {label: i for i, label in enumerate(labels)}
        parent = list(range(len(labels)))

        def find(i: int) -> int:
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for (src, dst) in self.arcs:
            a, b = find(index[src]), find(index[dst])
            if a != b:
                parent[a] = b
        return len({find(i) for i in range(len(labels))})

    def replays(self, labels: Iterable[str]) -> bool:
        """True when the label sequence is a START -> ... -> END walk."""
        sequence = list(labels)
        if not sequence:
            return False
        walk = [START_LABEL] + sequence + [END_LABEL]
        return all((a, b) in self.arcs for a, b in zip(walk, walk[1:]))


@dataclass(frozen=True)
class ProcessModel:
    """Discovered hierarchy plus the per-level transition-system cache."""

    roots: tuple[ActivityNode, ...]
    systems: Mapping[int, TransitionSystem]
    max_level: int
    source_digest: str

    def nodes_at(self, level: int) -> tuple[ActivityNode, ...]:
        nodes: list[ActivityNode] = []

        def walk(node: ActivityNode) -> None:
            if node.level == level:
                nodes.append(node)
                return
            for child in node.children:
                walk(child)

        for root in self.roots:
            walk(root)
        return tuple(nodes)

    def all_nodes(self) -> tuple[ActivityNode, ...]:
        nodes: list[ActivityNode] = []

        def walk(node: ActivityNode) -> None:
            nodes.append(node)
            for child in node.children:
                walk(child)

        for root in self.roots:
            walk(root)
        return tuple(nodes)


def _log_digest(log: EventLog) -> str:
    digest = hashlib.md5()
    for trace in log.traces:
        digest.update(trace.case_id.encode("utf-8"))
        for event in trace.events:
            digest.update(event.label(MAX_HIERARCHY_LEVEL).encode("utf-8"))
            digest.update(event.start.isoformat().encode("ascii"))
            digest.update(event.end.isoformat().encode("ascii"))
    return digest.hexdigest()


def _build_hierarchy(log: EventLog, max_level: int) -> tuple[ActivityNode, ...]:
    counts: list[dict[str, int]] = [{} for _ in range(max_level + 1)]
    children: list[dict[str, set[str]]] = [{} for _ in range(max_level)]
    for trace in log.traces:
        for event in trace.events:
            previous = None
            for level in range(max_level + 1):
                label = event.label(level)
                counts[level][label] = counts[level].get(label, 0) + 1
                if previous is not None:
                    children[level - 1].setdefault(previous, set()).add(label)
                previous = label

    def build(label: str, level: int) -> ActivityNode:
        if level == max_level:
            return ActivityNode(label, level, "simple", (), counts[level][label])
        kids = tuple(
            build(child, level + 1) for child in sorted(children[level].get(label, ()))
        )
        return ActivityNode(label, level, "composite", kids, counts[level][label])

    return tuple(build(label, 0) for label in sorted(counts[0]))


def _directly_follows(log: EventLog, level: int) -> TransitionSystem:
    nodes: dict[str, int] = {}
    arcs: dict[tuple[str, str], int] = {}
    for trace in log.traces:
        labels = [event.label(level) for event in trace.events]
        for label in labels:
            nodes[label] = nodes.get(label, 0) + 1
        walk = [START_LABEL] + labels + [END_LABEL]
        for pair in zip(walk, walk[1:]):
            arcs[pair] = arcs.get(pair, 0) + 1
    ordered_nodes = {label: nodes[label] for label in sorted(nodes)}
    ordered_arcs = {pair: arcs[pair] for pair in sorted(arcs)}
    return TransitionSystem(level=level, nodes=ordered_nodes, arcs=ordered_arcs)


def discover_model(log: EventLog, max_level: int = MAX_HIERARCHY_LEVEL) -> ProcessModel:
    """Discover the hierarchical directly-follows model of an event log."""
    if not 0 <= max_level <= MAX_HIERARCHY_LEVEL:
        raise ConfigurationError(f"max_level must be in [0, {MAX_HIERARCHY_LEVEL}]")
    if not log.traces:
        raise ValueError("no traces")
    systems = {level: _directly_follows(log, level) for level in range(max_level + 1)}
    return ProcessModel(
        roots=_build_hierarchy(log, max_level),
        systems=systems,
        max_level=max_level,
        source_digest=_log_digest(log),
    )


def flatten_level(model: ProcessModel, level: int) -> TransitionSystem:
    """Return the cached transition system for one hierarchy level."""
    if level not in model.systems:
        raise ConfigurationError(
            f"level {level} out of range; model was discovered with max_level={model.max_level}"
        )
    return model.systems[level]


def filter_model(
    ts: TransitionSystem, activity_fraction: float, path_fraction: float
) -> TransitionSystem:
    """Keep only the most frequent nodes and arcs.

    Keeps the ``ceil(activity_fraction * n)`` most frequent activity nodes
    (START/END always survive) and then the ``ceil(path_fraction * m)`` most
    frequent arcs among survivors; frequency ties break by label order.  Kept
    nodes left without an entry from START or an exit to END are reattached so
    the result stays one weakly connected flow.
    """
    for name, value in (("activity_fraction", activity_fraction), ("path_fraction", path_fraction)):
        if not 0.0 < value <= 1.0:
            raise ConfigurationError(f"{name} must be in (0, 1], got {value}")

    ranked_nodes = sorted(ts.nodes.items(), key=lambda item: (-item[1], item[0]))
    keep_n = math.ceil(activity_fraction * len(ranked_nodes))
    kept_labels = {label for label, _ in ranked_nodes[:keep_n]}
    survivors = kept_labels | {START_LABEL, END_LABEL}

    candidate_arcs = [
        (pair, freq) for pair, freq in ts.arcs.items()
        if pair[0] in survivors and pair[1] in survivors
    ]
    candidate_arcs.sort(key=lambda item: (-item[1], item[0]))
    keep_m = math.ceil(path_fraction * len(candidate_arcs))
    arcs = {pair: freq for pair, freq in candidate_arcs[:keep_m]}

    nodes = {label: ts.nodes[label] for label in sorted(kept_labels)}
    _repair_connectivity(nodes, arcs)
    return TransitionSystem(level=ts.level, nodes=nodes, arcs=dict(sorted(arcs.items())))


def _repair_connectivity(nodes: dict[str, int], arcs: dict[tuple[str, str], int]) -> None:
    """Reattach orphaned nodes so all are reachable from START and co-reach END."""

    def reachable(source: str, forward: bool) -> set[str]:
        adjacency: dict[str, list[str]] = {}
        for (src, dst) in arcs:
            a, b = (src, dst) if forward else (dst, src)
            adjacency.setdefault(a, []).append(b)
        seen = {source}
        stack = [source]
        while stack:
            for nxt in adjacency.get(stack.pop(), ()):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return seen

    def pick(missing: list[str], boundary_sources: bool) -> str:
        # reattach true sources/sinks first so one arc can mend a whole chain
        if boundary_sources:
            ends = {dst for (_, dst) in arcs}
        else:
            ends = {src for (src, _) in arcs}
        loose = [label for label in missing if label not in ends]
        return (loose or missing)[0]

    while True:
        missing = sorted(set(nodes) - reachable(START_LABEL, forward=True))
        if not missing:
            break
        label = pick(missing, boundary_sources=True)
        arcs[(START_LABEL, label)] = arcs.get((START_LABEL, label), 0) + nodes[label]
    while True:
        missing = sorted(set(nodes) - reachable(END_LABEL, forward=False))
        if not missing:
            break
        label = pick(missing, boundary_sources=False)
        arcs[(label, END_LABEL)] = arcs.get((label, END_LABEL), 0) + nodes[label]


def _quote(label: str) -> str:
    return '"' + label.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _fill_color(frequency: int, max_frequency: int) -> tuple[str, str]:
    """Linear white-to-dark-blue fill; darker means more actions."""
    t = frequency / max_frequency if max_frequency else 0.0
    light, dark = (247, 251, 255), (8, 48, 107)
    rgb = tuple(round(a + t * (b - a)) for a, b in zip(light, dark))
    fill = "#{:02x}{:02x}{:02x}".format(*rgb)
    font = "#ffffff" if t > 0.55 else "#000000"
    return fill, font


def export_dot(ts: TransitionSystem, overlay: str = "absolute-frequency") -> str:
    """Render a transition system as a Graphviz digraph; byte-stable output."""
    if overlay not in ("absolute-frequency", "none"):
        raise ConfigurationError(f"unknown overlay {overlay!r}")
    with_overlay = overlay == "absolute-frequency"
    max_freq = max(ts.nodes.values(), default=0)

    lines = ["digraph process {", "  rankdir=LR;"]
    lines.append(f"  {_quote(START_LABEL)} [shape=circle];")
    lines.append(f"  {_quote(END_LABEL)} [shape=doublecircle];")
    for label in sorted(ts.nodes):
        freq = ts.nodes[label]
        if with_overlay:
            fill, font = _fill_color(freq, max_freq)
            lines.append(
                f"  {_quote(label)} [shape=box, style=filled, "
                f'fillcolor="{fill}", fontcolor="{font}", label={_quote(f"{label} ({freq})")}];'
            )
        else:
            lines.append(f"  {_quote(label)} [shape=box];")
    for (src, dst) in sorted(ts.arcs):
        if with_overlay:
            lines.append(
                f"  {_quote(src)} -> {_quote(dst)} [label={_quote(str(ts.arcs[(src, dst)]))}];"
            )
        else:
            lines.append(f"  {_quote(src)} -> {_quote(dst)};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def system_as_dict(ts: TransitionSystem) -> dict:
    """JSON-friendly flat view of one transition system."""
    return {
        "level": ts.level,
        "nodes": [
            {"label": label, "frequency": freq} for label, freq in sorted(ts.nodes.items())
        ],
        "arcs": [
            {"from": src, "to": dst, "frequency": freq}
            for (src, dst), freq in sorted(ts.arcs.items())
        ],
    }


def model_as_dict(model: ProcessModel) -> dict:
    """JSON-friendly summary of a discovered model (node/arc lists per level)."""

    def node_dict(node: ActivityNode) -> dict:
        entry = {
            "label": node.label,
            "level": node.level,
            "kind": node.kind,
            "frequency": node.absolute_frequency,
        }
        if node.children:
            entry["children"] = [node_dict(child) for child in node.children]
        return entry

    return {
        "max_level": model.max_level,
        "source_digest": model.source_digest,
        "hierarchy": [node_dict(root) for root in model.roots],
        "levels": {str(level): system_as_dict(ts) for level, ts in sorted(model.systems.items())},
    }
