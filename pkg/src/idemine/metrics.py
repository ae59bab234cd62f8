"""Process metrics, product-metric deltas and the joined per-team feature table.

Process metrics summarize one team's event log and its discovered model:
distinct-entity counts straight from the events, plus graph figures (states,
transitions, cyclomatic complexity) from the deepest flattened transition
system.  Product metrics arrive as before/after snapshots and are compared as
signed relative percentage deltas.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Mapping, Sequence

from .discovery import ProcessModel, TransitionSystem, flatten_level
from .errors import SchemaError
from .eventlog import EventLog

# Column order of the process-metric block, fixed for every exported table.
PROCESS_METRIC_COLUMNS: tuple[str, ...] = (
    "DEV",
    "SES",
    "EVTS",
    "NFILES",
    "NCOM",
    "PCCPF",
    "EC",
    "NOA",
    "NSS",
    "NCS",
    "NOT",
    "PCC",
    "NVER",
    "NCAT",
    "NPLA",
    "NISP",
    "NOS",
    "NPER",
)

# The 23 product measures tracked per snapshot, in export order.
PRODUCT_METRIC_COLUMNS: tuple[str, ...] = (
    "VG",
    "PAR",
    "NBD",
    "CA",
    "CE",
    "RMI",
    "RMA",
    "RMD",
    "DIT",
    "WMC",
    "NSC",
    "NORM",
    "LCOM",
    "NOF",
    "NSF",
    "SIX",
    "NOP",
    "NOC",
    "NOI",
    "NOM",
    "NSM",
    "MLOC",
    "TLOC",
)

PRACTICE_LABELS = ("AR", "MR")


@dataclass
class ProcessMetricsRecord:
    """Table of per-team process metrics; see PROCESS_METRIC_COLUMNS for order."""

    dev: int
    ses: int
    evts: int
    nfiles: int
    ncom: int
    pccpf: float
    ec: int
    noa: int
    nss: int
    ncs: int
    not_: int
    pcc: int
    nver: int
    ncat: int
    npla: int
    nisp: int
    nos: int
    nper: int
    pcc_level: str | None = None

    def as_row(self) -> dict[str, float]:
        return {
            "DEV": self.dev,
            "SES": self.ses,
            "EVTS": self.evts,
            "NFILES": self.nfiles,
            "NCOM": self.ncom,
            "PCCPF": self.pccpf,
            "EC": self.ec,
            "NOA": self.noa,
            "NSS": self.nss,
            "NCS": self.ncs,
            "NOT": self.not_,
            "PCC": self.pcc,
            "NVER": self.nver,
            "NCAT": self.ncat,
            "NPLA": self.npla,
            "NISP": self.nisp,
            "NOS": self.nos,
            "NPER": self.nper,
        }


def compute_pcc(ts: TransitionSystem) -> int:
    """Cyclomatic complexity E - N + 2P of a transition system.

    N counts the START/END boundary nodes; P is the number of weakly
    connected components.
    """
    if not ts.nodes:
        raise ValueError("empty transition system")
    return ts.arc_count - ts.node_count + 2 * ts.weak_components()


def compute_process_metrics(log: EventLog, model: ProcessModel) -> ProcessMetricsRecord:
    """Compute the per-team metric record from a log and its discovered model.

    Distinct-entity counts come straight from event attributes; the state and
    transition figures come from the model: NSS counts leaf states, NCS the
    composite states above them, NOA all activity states (NSS + NCS), and NOT
    and PCC are taken from the deepest flattened transition system.
    """
    distinct: dict[str, set[str]] = {
        key: set()
        for key in (
            "username",
            "session",
            "filename",
            "command",
            "category",
            "platform_version",
            "platform_branch",
            "os_name",
            "city",
            "perspective",
        )
    }
    events = 0
    for trace in log.traces:
        for event in trace.events:
            events += 1
            distinct["username"].add(event.resource)
            distinct["session"].add(event.attributes["session"])
            distinct["filename"].add(event.activity_path[0])
            distinct["category"].add(event.activity_path[1])
            distinct["command"].add(event.activity_path[2])
            distinct["platform_version"].add(event.attributes["platform_version"])
            distinct["platform_branch"].add(event.attributes["platform_branch"])
            distinct["os_name"].add(event.attributes["os_name"])
            distinct["city"].add(event.attributes["city"])
            distinct["perspective"].add(event.attributes["perspective"])

    deepest = flatten_level(model, model.max_level)
    all_nodes = model.all_nodes()
    nss = sum(1 for node in all_nodes if node.kind == "simple")
    ncs = sum(1 for node in all_nodes if node.kind == "composite")
    pcc = compute_pcc(deepest)
    nfiles = len(distinct["filename"])
    return ProcessMetricsRecord(
        dev=len(distinct["username"]),
        ses=len(distinct["session"]),
        evts=events,
        nfiles=nfiles,
        ncom=len(distinct["command"]),
        pccpf=pcc / nfiles if nfiles else 0.0,
        ec=len(log.catalog[2]) if 2 in log.catalog else len(deepest.nodes),
        noa=nss + ncs,
        nss=nss,
        ncs=ncs,
        not_=deepest.arc_count,
        pcc=pcc,
        nver=len(distinct["platform_version"]),
        ncat=len(distinct["category"]),
        npla=len(distinct["platform_branch"]),
        nisp=len(distinct["city"]),
        nos=len(distinct["os_name"]),
        nper=len(distinct["perspective"]),
    )


@dataclass(frozen=True)
class ProductMetricsSnapshot:
    """One team's product measures at moment t0 (before) or t1 (after)."""

    team: str
    moment: str  # "t0" | "t1"
    values: Mapping[str, float]

    def __post_init__(self) -> None:
        if self.moment not in ("t0", "t1"):
            raise SchemaError(f"moment must be t0 or t1, got {self.moment!r}")
        missing = [name for name in PRODUCT_METRIC_COLUMNS if name not in self.values]
        if missing:
            raise SchemaError(f"snapshot missing metrics: {', '.join(missing)}")
        for name in PRODUCT_METRIC_COLUMNS:
            if self.values[name] < 0:
                raise SchemaError(f"{name} must be non-negative")
        if self.values["TLOC"] != int(self.values["TLOC"]):
            raise SchemaError("TLOC must be integer-valued")


@dataclass
class DeltaRecord:
    """Signed relative percentage change per product metric, t0 -> t1.

    Metrics whose baseline is zero are flagged in ``undefined`` instead of
    propagating NaN.  ``vg_reduction`` is the negated VG delta, matching the
    convention of reporting complexity reductions as positive percentages.
    """

    team: str
    deltas: dict[str, float]
    undefined: tuple[str, ...] = ()
    vg_level: str | None = None

    @property
    def vg_reduction(self) -> float | None:
        if "VG" in self.undefined:
            return None
        return -self.deltas["VG"]


def compute_delta(t0: ProductMetricsSnapshot, t1: ProductMetricsSnapshot) -> DeltaRecord:
    """Relative variance (v1 - v0) / v0 * 100 for every product metric."""
    if t0.team != t1.team:
        raise SchemaError(f"snapshots from different teams: {t0.team!r} vs {t1.team!r}")
    if (t0.moment, t1.moment) != ("t0", "t1"):
        raise SchemaError("compute_delta expects moments (t0, t1)")
    deltas: dict[str, float] = {}
    undefined: list[str] = []
    for name in PRODUCT_METRIC_COLUMNS:
        v0, v1 = t0.values[name], t1.values[name]
        if v0 == 0:
            undefined.append(name)
        else:
            deltas[name] = (v1 - v0) / v0 * 100.0
    return DeltaRecord(team=t0.team, deltas=deltas, undefined=tuple(undefined))


def load_catalog(source: str | None = None) -> tuple[str, ...]:
    """Load the command catalog: one ``category|command`` label per line.

    With no argument the packaged catalog is used, which ships pre-seeded
    with the frequently analyzed Eclipse commands and is user-extensible.
    """
    if source is None:
        text = resources.files("idemine.data").joinpath("command_catalog.txt").read_text("utf-8")
    else:
        with open(source, encoding="utf-8") as handle:
            text = handle.read()
    labels: list[str] = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "|" not in line:
            raise SchemaError(f"catalog entry without '|' separator: {line!r}")
        if line not in labels:
            labels.append(line)
    return tuple(labels)


@dataclass
class CommandFrequencyVector:
    """Counts of events per (category, command) catalog entry, plus an 'other' bucket."""

    counts: dict[str, int]
    other: int

    @property
    def total(self) -> int:
        return sum(self.counts.values()) + self.other


def command_frequency_vector(log: EventLog, catalog: Sequence[str]) -> CommandFrequencyVector:
    """Count events whose category|command pair matches each catalog entry."""
    if not catalog:
        raise SchemaError("catalog must be non-empty")
    counts = {label: 0 for label in catalog}
    other = 0
    for trace in log.traces:
        for event in trace.events:
            label = f"{event.activity_path[1]}|{event.activity_path[2]}"
            if label in counts:
                counts[label] += 1
            else:
                other += 1
    return CommandFrequencyVector(counts=counts, other=other)


@dataclass
class FeatureRow:
    """One team's joined features: process metrics, optional command
    frequencies, product deltas and the practice label."""

    team: str
    process: ProcessMetricsRecord
    delta: DeltaRecord | None = None
    commands: CommandFrequencyVector | None = None
    practice: str | None = None


def assemble_feature_table(
    rows: Sequence[FeatureRow],
    feature_set: str = "standard",
    label: str = "practice",
):
    """Build a learn.Dataset from feature rows.

    ``standard`` uses the process-metric block only; ``extended`` appends one
    column per catalog command (prefixed ``cmd:``).  ``label`` selects the
    target: the AR/MR practice or the VG_LEVEL assigned by partitioning.
    """
    from .learn import Dataset  # local import to keep module layering one-way

    if feature_set not in ("standard", "extended"):
        raise SchemaError(f"unknown feature set {feature_set!r}")
    if label not in ("practice", "vg_level"):
        raise SchemaError(f"unknown label kind {label!r}")
    if not rows:
        raise SchemaError("no feature rows")

    seen_teams: set[str] = set()
    catalog: tuple[str, ...] | None = None
    matrix: list[list[float]] = []
    labels: list[str] = []
    for row in rows:
        if row.team in seen_teams:
            raise SchemaError(f"duplicate team id {row.team!r}")
        seen_teams.add(row.team)
        values = row.process.as_row()
        vector = [float(values[name]) for name in PROCESS_METRIC_COLUMNS]
        if feature_set == "extended":
            if row.commands is None:
                raise SchemaError(f"team {row.team!r} has no command frequencies")
            row_catalog = tuple(row.commands.counts)
            if catalog is None:
                catalog = row_catalog
            elif catalog != row_catalog:
                raise SchemaError("rows use different command catalogs")
            vector.extend(float(row.commands.counts[name]) for name in catalog)
        if label == "practice":
            if row.practice is None:
                raise SchemaError(f"team {row.team!r} has no practice label")
            labels.append(row.practice)
        else:
            if row.delta is None or row.delta.vg_level is None:
                raise SchemaError(f"team {row.team!r} has no VG level")
            labels.append(row.delta.vg_level)
        matrix.append(vector)

    names = list(PROCESS_METRIC_COLUMNS)
    if feature_set == "extended" and catalog is not None:
        names.extend(f"cmd:{entry}" for entry in catalog)
    return Dataset.from_rows(names, matrix, labels)


def read_product_snapshots(text: str) -> list[ProductMetricsSnapshot]:
    """Parse snapshot CSV: columns team, moment, then the product metrics."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise SchemaError("empty product snapshot file")
    required = {"team", "moment", *PRODUCT_METRIC_COLUMNS}
    missing = required - set(reader.fieldnames)
    if missing:
        raise SchemaError(f"product snapshot CSV missing columns: {', '.join(sorted(missing))}")
    snapshots = []
    for row in reader:
        values = {name: float(row[name]) for name in PRODUCT_METRIC_COLUMNS}
        snapshots.append(
            ProductMetricsSnapshot(team=row["team"], moment=row["moment"], values=values)
        )
    return snapshots


def write_product_snapshots(snapshots: Iterable[ProductMetricsSnapshot]) -> str:
    """Serialize snapshots to CSV with the documented stable header."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["team", "moment", *PRODUCT_METRIC_COLUMNS])
    for snap in snapshots:
        writer.writerow(
            [snap.team, snap.moment, *[repr(float(snap.values[m])) for m in PRODUCT_METRIC_COLUMNS]]
        )
    return out.getvalue()


def pair_snapshots(
    snapshots: Iterable[ProductMetricsSnapshot],
) -> dict[str, tuple[ProductMetricsSnapshot, ProductMetricsSnapshot]]:
    """Group snapshots into (t0, t1) pairs per team."""
    by_team: dict[str, dict[str, ProductMetricsSnapshot]] = {}
    for snap in snapshots:
        slot = by_team.setdefault(snap.team, {})
        if snap.moment in slot:
            raise SchemaError(f"duplicate {snap.moment} snapshot for team {snap.team!r}")
        slot[snap.moment] = snap
    pairs = {}
    for team in sorted(by_team):
        slot = by_team[team]
        if "t0" not in slot or "t1" not in slot:
            raise SchemaError(f"team {team!r} needs both t0 and t1 snapshots")
        pairs[team] = (slot["t0"], slot["t1"])
    return pairs
