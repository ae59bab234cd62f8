"""Deterministic synthetic scenario generator with ground-truth bookkeeping.

Two practice cohorts are emitted with contrasting behavior: plugin-assisted
teams lean on code-smell detection views and produce fewer events and simpler
processes, manual teams lean on editing/navigation commands and produce more
events and more complex processes.

Each team's control flow is planned before any event is emitted: a base path
through R distinct activities plus X additional backward/self arcs, walked by
every session.  The resulting directly-follows graph then has exactly R + 2
nodes, R + 1 + X arcs and one component, so its cyclomatic complexity is
X + 1 by construction, which lets the generator hit a target complexity band
exactly and record it as ground truth.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from datetime import timedelta
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigurationError
from .eventlog import (
    FIELD_ORDER,
    HASH_FIELD,
    RawEvent,
    compute_event_hash,
    format_timestamp,
    parse_timestamp,
)
from .metrics import (
    PRODUCT_METRIC_COLUMNS,
    ProductMetricsSnapshot,
    load_catalog,
    write_product_snapshots,
)

VG_LEVEL_BINS = ((4.0, "LOW"), (9.0, "MEDIUM"), (math.inf, "HIGH"))

_PLATFORM_BRANCHES = ("Eclipse Oxygen", "Eclipse Photon", "Eclipse 2019-03")
_PLATFORM_VERSIONS = (
    "4.7.3.M20180330-0640",
    "4.8.0.I20180611-0500",
    "4.11.0.I20190307-0500",
)
_JAVA_VERSIONS = ("1.8.0_171-b11", "1.8.0_201-b09", "11.0.2+9")
_OS_NAMES = ("Windows 10", "Linux", "Mac OS X")
_PERSPECTIVES = ("Java", "Debug", "Java EE")
_LOCATIONS = (
    ("Europe", "Portugal", "Lisbon"),
    ("Europe", "Portugal", "Porto"),
    ("Europe", "Portugal", "Coimbra"),
    ("Europe", "Spain", "Madrid"),
    ("Europe", "Germany", "Munich"),
)
_FILE_POOL_SIZE = 60

# Categories whose commands signal plugin-assisted smell detection.
SMELL_VIEW_COMMANDS = (
    "Eclipse View|Long Method",
    "Eclipse View|God Class",
    "Eclipse View|Code Smell Visualization",
    "Eclipse View|Type Checking",
    "Eclipse View|Feature Envy",
    "Eclipse View|Duplicated Code",
)

DEFAULT_BASELINE: dict[str, float] = {
    "VG": 2.47,
    "PAR": 1.22,
    "NBD": 1.63,
    "CA": 6.0,
    "CE": 5.0,
    "RMI": 0.45,
    "RMA": 0.12,
    "RMD": 0.31,
    "DIT": 1.85,
    "WMC": 12.4,
    "NSC": 0.72,
    "NORM": 0.34,
    "LCOM": 0.26,
    "NOF": 3.1,
    "NSF": 0.94,
    "SIX": 0.21,
    "NOP": 4.0,
    "NOC": 8.5,
    "NOI": 0.83,
    "NOM": 7.2,
    "NSM": 1.14,
    "MLOC": 9.8,
    "TLOC": 7430.0,
}


def _category_weight_map(catalog: Sequence[str], rules: Mapping[str, float],
                         overrides: Mapping[str, float]) -> dict[str, float]:
    weights = {}
    for label in catalog:
        category = label.split("|", 1)[0]
        weights[label] = overrides.get(label, rules.get(category, 1.0))
    return weights


@dataclass(frozen=True)
class PracticeProfile:
    """Behavior profile for one practice cohort."""

    practice: str
    teams: int
    devs: tuple[int, int]
    sessions: tuple[int, int]
    files: tuple[int, int]
    commands: tuple[int, int]
    activities: tuple[int, int]
    events_per_session: tuple[int, int]
    pcc_band: tuple[float, float]
    vg_reduction_band: tuple[float, float]
    command_weights: Mapping[str, float]
    always_include: tuple[str, ...] = ()

    def validate(self) -> None:
        for name in ("devs", "sessions", "files", "commands", "activities", "events_per_session"):
            lo, hi = getattr(self, name)
            if not (1 <= lo <= hi):
                raise ConfigurationError(f"{self.practice}: invalid {name} range ({lo}, {hi})")
        for name in ("pcc_band", "vg_reduction_band"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ConfigurationError(f"{self.practice}: empty {name} ({lo}, {hi})")
        if self.pcc_band[0] < 1:
            raise ConfigurationError(f"{self.practice}: pcc_band must start at 1 or above")
        if sum(self.command_weights.values()) <= 0:
            raise ConfigurationError(f"{self.practice}: command weights sum to zero")
        if self.teams < 1:
            raise ConfigurationError(f"{self.practice}: need at least one team")


def default_profiles(catalog: Sequence[str] | None = None) -> tuple[PracticeProfile, PracticeProfile]:
    catalog = tuple(catalog) if catalog is not None else load_catalog()
    ar_weights = _category_weight_map(
        catalog,
        rules={
            "Eclipse View": 1.5,
            "Refactor": 1.5,
            "Eclipse Editor": 3.0,
            "Edit": 1.0,
            "File": 1.0,
            "Source": 0.5,
            "Compare": 0.25,
            "Text Editing": 0.25,
        },
        overrides={label: 6.0 for label in SMELL_VIEW_COMMANDS},
    )
    mr_weights = _category_weight_map(
        catalog,
        rules={
            "Eclipse View": 2.0,
            "Refactor": 1.5,
            "Eclipse Editor": 6.0,
            "Edit": 5.0,
            "File": 2.5,
            "Source": 1.0,
            "Compare": 0.5,
            "Text Editing": 1.0,
        },
        overrides={label: 0.0 for label in SMELL_VIEW_COMMANDS},
    )
    # Ranges overlap across cohorts on purpose: no single feature
    # perfectly separates the practices, only their combination does.
    ar = PracticeProfile(
        practice="AR",
        teams=32,
        devs=(2, 4),
        sessions=(3, 6),
        files=(4, 10),
        commands=(9, 16),
        activities=(40, 68),
        events_per_session=(50, 150),
        pcc_band=(90.0, 243.0),  # centered on 166.5
        vg_reduction_band=(2.68, 16.77),
        command_weights=ar_weights,
        always_include=("Eclipse View|Long Method", "Eclipse Editor|File Editing"),
    )
    mr = PracticeProfile(
        practice="MR",
        teams=39,
        devs=(1, 2),
        sessions=(3, 6),
        files=(6, 16),
        commands=(13, 22),
        activities=(52, 90),
        events_per_session=(90, 240),
        pcc_band=(180.0, 420.6),  # centered on 300.3
        vg_reduction_band=(0.32, 13.98),
        command_weights=mr_weights,
        always_include=("Eclipse Editor|File Editing", "Edit|Paste"),
    )
    return ar, mr


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    profiles: tuple[PracticeProfile, ...]
    baseline: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_BASELINE))
    start_time: str = "2019-03-01 09:00:00.000"

    def validate(self) -> None:
        if not self.profiles:
            raise ConfigurationError("no practice profiles configured")
        for profile in self.profiles:
            profile.validate()
        missing = [m for m in PRODUCT_METRIC_COLUMNS if m not in self.baseline]
        if missing:
            raise ConfigurationError(f"baseline snapshot missing: {', '.join(missing)}")


def default_config(seed: int) -> ScenarioConfig:
    return ScenarioConfig(seed=seed, profiles=default_profiles())


@dataclass
class GroundTruth:
    """Per-team truth recorded while emitting, for end-to-end oracle tests."""

    team: str
    practice: str
    dev: int
    ses: int
    evts: int
    nfiles: int
    ncom: int
    ncat: int
    nver: int
    npla: int
    nos: int
    nisp: int
    nper: int
    ec: int
    noa: int
    nss: int
    ncs: int
    not_: int
    pcc: int
    vg_reduction: float
    vg_level: str

    CSV_COLUMNS = (
        "team", "practice", "DEV", "SES", "EVTS", "NFILES", "NCOM", "NCAT",
        "NVER", "NPLA", "NOS", "NISP", "NPER", "EC", "NOA", "NSS", "NCS",
        "NOT", "PCC", "vg_reduction", "vg_level",
    )

    def as_row(self) -> list:
        return [
            self.team, self.practice, self.dev, self.ses, self.evts, self.nfiles,
            self.ncom, self.ncat, self.nver, self.npla, self.nos, self.nisp,
            self.nper, self.ec, self.noa, self.nss, self.ncs, self.not_,
            self.pcc, repr(self.vg_reduction), self.vg_level,
        ]


@dataclass
class ScenarioResult:
    events: list[RawEvent]
    snapshots: list[ProductMetricsSnapshot]
    ground_truth: list[GroundTruth]


def vg_level_for(reduction: float) -> str:
    for upper, label in VG_LEVEL_BINS:
        if reduction <= upper:
            return label
    raise AssertionError("unreachable")


def _slug(text: str) -> str:
    return ".".join("".join(c if c.isalnum() else " " for c in text.lower()).split())


def _sample_range(rng: np.random.Generator, bounds: tuple[int, int]) -> int:
    return int(rng.integers(bounds[0], bounds[1] + 1))


def _triangular_pair(flat: int) -> tuple[int, int]:
    u = int((math.isqrt(8 * flat + 1) - 1) // 2)
    return u, flat - u * (u + 1) // 2


def _plan_extra_arcs(rng: np.random.Generator, r: int, x: int) -> list[tuple[int, int]]:
    """Sample x distinct backward/self arcs (v <= u), biased to short jumps."""
    capacity = r * (r + 1) // 2
    if x > capacity:
        raise ConfigurationError(
            f"target complexity needs {x} extra arcs but only {capacity} fit {r} activities"
        )
    if x == 0:
        return []
    weights = np.empty(capacity)
    for flat in range(capacity):
        u, v = _triangular_pair(flat)
        weights[flat] = 1.0 / (1.0 + (u - v)) ** 4  # keep detour jumps short
    chosen = rng.choice(capacity, size=x, replace=False, p=weights / weights.sum())
    return [_triangular_pair(int(flat)) for flat in sorted(chosen)]


def _walk_session(r: int, detours: Sequence[tuple[int, int]]) -> list[int]:
    """Walk the base path 0..r-1, taking each assigned backward detour once."""
    pending: dict[int, list[int]] = {}
    for u, v in detours:
        pending.setdefault(u, []).append(v)
    walk = [0]
    position = 0
    while True:
        queue = pending.get(position)
        if queue:
            position = queue.pop()
            walk.append(position)
        elif position + 1 < r:
            position += 1
            walk.append(position)
        else:
            break
    return walk


def _pick_commands(rng: np.random.Generator, profile: PracticeProfile, count: int) -> list[str]:
    labels = [label for label, w in profile.command_weights.items() if w > 0]
    weights = np.array([profile.command_weights[label] for label in labels])
    count = min(count, len(labels))
    chosen = rng.choice(len(labels), size=count, replace=False, p=weights / weights.sum())
    picked = [labels[int(i)] for i in chosen]
    forced = [req for req in profile.always_include if req in labels and req not in picked]
    for slot, required in enumerate(forced):
        position = len(picked) - 1 - slot
        if position >= 0 and picked[position] not in profile.always_include:
            picked[position] = required
        else:
            picked.append(required)
    # forced inclusion may have displaced duplicates; keep entries unique
    unique: list[str] = []
    for label in picked:
        if label not in unique:
            unique.append(label)
    return unique


def _generate_team(
    config: ScenarioConfig,
    profile: PracticeProfile,
    profile_index: int,
    team_index: int,
    team_clock_start,
) -> tuple[list[RawEvent], ProductMetricsSnapshot, ProductMetricsSnapshot, GroundTruth]:
    rng = np.random.default_rng([config.seed, profile_index, team_index])
    team = f"Team-{profile.practice}{team_index + 1:02d}"

    sessions = _sample_range(rng, profile.sessions)
    devs = min(_sample_range(rng, profile.devs), sessions)
    n_files = _sample_range(rng, profile.files)
    n_commands = _sample_range(rng, profile.commands)

    target_pcc = float(rng.uniform(*profile.pcc_band))
    extra_count = max(0, round(target_pcc) - 1)
    min_activities = 1
    while min_activities * (min_activities + 1) // 2 < extra_count:
        min_activities += 1

    file_indices = sorted(rng.choice(_FILE_POOL_SIZE, size=n_files, replace=False).tolist())
    files = [f"/jasml_0.10/src/Unit{idx:02d}.java" for idx in file_indices]
    commands = _pick_commands(rng, profile, n_commands)

    lower = max(min_activities, len(files), len(commands))
    upper = len(files) * len(commands)
    if lower > upper:
        raise ConfigurationError(
            f"{team}: cannot plan {lower} activities with {len(files)} files x "
            f"{len(commands)} commands"
        )
    n_activities = min(max(_sample_range(rng, profile.activities), lower), upper)

    # Cover every file and command, then fill with unused random pairs.
    pairs: list[tuple[int, int]] = []
    used = set()
    for i in range(max(len(files), len(commands))):
        pair = (i % len(files), i % len(commands))
        if pair not in used:
            used.add(pair)
            pairs.append(pair)
    remaining = [
        (fi, ci)
        for fi in range(len(files))
        for ci in range(len(commands))
        if (fi, ci) not in used
    ]
    extra_needed = n_activities - len(pairs)
    if extra_needed > 0:
        for flat in rng.choice(len(remaining), size=extra_needed, replace=False):
            pairs.append(remaining[int(flat)])
    order = rng.permutation(len(pairs))
    vocabulary = [pairs[int(i)] for i in order]
    r = len(vocabulary)

    extras = _plan_extra_arcs(rng, r, extra_count)
    shuffled_extras = [extras[int(i)] for i in rng.permutation(len(extras))]
    per_session: list[list[tuple[int, int]]] = [[] for _ in range(sessions)]
    for index, arc in enumerate(shuffled_extras):
        per_session[index % sessions].append(arc)

    # Pad sessions toward their event target by replaying planned short arcs.
    pad_pool = sorted(extras, key=lambda arc: (arc[0] - arc[1], arc))[: max(1, len(extras) // 3)]
    for k in range(sessions):
        target_events = _sample_range(rng, profile.events_per_session)
        length = r + sum(1 + (u - v) for u, v in per_session[k])
        while pad_pool and length < target_events:
            u, v = pad_pool[int(rng.integers(len(pad_pool)))]
            per_session[k].append((u, v))
            length += 1 + (u - v)

    # Environment attributes: independent of the practice, by design.
    platform_branch = str(rng.choice(_PLATFORM_BRANCHES))
    platform_version = str(rng.choice(_PLATFORM_VERSIONS))
    java_version = str(rng.choice(_JAVA_VERSIONS))
    locations = [_LOCATIONS[int(i)] for i in rng.choice(len(_LOCATIONS), size=_sample_range(rng, (1, 2)), replace=False)]
    perspectives = [str(p) for p in rng.choice(_PERSPECTIVES, size=_sample_range(rng, (1, 2)), replace=False)]
    dev_names = [f"{team.lower()}-d{d + 1}" for d in range(devs)]
    dev_os = {name: str(rng.choice(_OS_NAMES)) for name in dev_names}

    events: list[RawEvent] = []
    seen: dict[str, set[str]] = {key: set() for key in (
        "file", "command", "category", "session", "user", "version", "branch",
        "os", "city", "perspective",
    )}
    clock_ms = 0
    for k in range(sessions):
        session_id = f"{team.lower()}-s{k + 1:02d}"
        username = dev_names[k % devs]
        continent, country, city = locations[k % len(locations)]
        perspective = perspectives[k % len(perspectives)]
        session_start_ms = clock_ms
        walk = _walk_session(r, per_session[k])
        offset_ms = 0
        for step, activity_index in enumerate(walk):
            file_i, command_i = vocabulary[activity_index]
            filename = files[file_i]
            category, command = commands[command_i].split("|", 1)
            offset_ms += int(rng.integers(2_000, 18_000))
            begin = team_clock_start + timedelta(milliseconds=session_start_ms + offset_ms)
            duration_ms = int(rng.integers(400, 20_000))
            end = begin + timedelta(milliseconds=duration_ms)
            record = {
                "team": team,
                "session": session_id,
                "timestamp_begin": format_timestamp(begin),
                "timestamp_end": format_timestamp(end),
                "fullname": username.replace("-", " ").title(),
                "username": username,
                "workspacename": "Workspace1",
                "projectname": "/jasml_0.10",
                "filename": filename,
                "extension": "java",
                "category_name": category,
                "command_name": command,
                "category_id": f"org.eclipse.ui.{_slug(category)}",
                "command_id": f"iscte.plugin.eclipse.commands.{_slug(command)}",
                "platform_branch": platform_branch,
                "platform_version": platform_version,
                "java_version": java_version,
                "continent": continent,
                "country": country,
                "city": city,
                "os_name": dev_os[username],
                "perspective": perspective,
            }
            digest = compute_event_hash(record)
            events.append(
                RawEvent(
                    hash=digest,
                    extras={},
                    **{**record,
                       "timestamp_begin": begin,
                       "timestamp_end": end},
                )
            )
            seen["file"].add(filename)
            seen["command"].add(command)
            seen["category"].add(category)
            seen["session"].add(session_id)
            seen["user"].add(username)
            seen["version"].add(platform_version)
            seen["branch"].add(platform_branch)
            seen["os"].add(dev_os[username])
            seen["city"].add(city)
            seen["perspective"].add(perspective)
        clock_ms = session_start_ms + offset_ms + 4 * 3600 * 1000

    # Model-shape truth follows from the plan: R simple states, one composite
    # per file and per (file, category) pair, base path + extras as arcs.
    level1 = {(files[fi], commands[ci].split("|", 1)[0]) for fi, ci in vocabulary}
    nss = r
    ncs = len(seen["file"]) + len(level1)
    not_ = (r + 1) + len(extras)
    pcc = len(extras) + 1

    vg_reduction = float(rng.uniform(*profile.vg_reduction_band))
    t0 = ProductMetricsSnapshot(team=team, moment="t0", values=dict(config.baseline))
    t1_values = {}
    for name in PRODUCT_METRIC_COLUMNS:
        v0 = float(config.baseline[name])
        if name == "VG":
            t1_values[name] = v0 * (1.0 - vg_reduction / 100.0)
        else:
            t1_values[name] = v0 * float(1.0 + rng.uniform(-0.12, 0.08))
    t1_values["TLOC"] = float(round(t1_values["TLOC"]))
    t1 = ProductMetricsSnapshot(team=team, moment="t1", values=t1_values)

    truth = GroundTruth(
        team=team,
        practice=profile.practice,
        dev=len(seen["user"]),
        ses=len(seen["session"]),
        evts=len(events),
        nfiles=len(seen["file"]),
        ncom=len(seen["command"]),
        ncat=len(seen["category"]),
        nver=len(seen["version"]),
        npla=len(seen["branch"]),
        nos=len(seen["os"]),
        nisp=len(seen["city"]),
        nper=len(seen["perspective"]),
        ec=r,
        noa=nss + ncs,
        nss=nss,
        ncs=ncs,
        not_=not_,
        pcc=pcc,
        vg_reduction=vg_reduction,
        vg_level=vg_level_for(vg_reduction),
    )
    return events, t0, t1, truth


def generate(config: ScenarioConfig) -> ScenarioResult:
    """Emit all teams' events, snapshots and ground truth; deterministic per seed."""
    config.validate()
    start = parse_timestamp(config.start_time)
    events: list[RawEvent] = []
    snapshots: list[ProductMetricsSnapshot] = []
    truths: list[GroundTruth] = []
    global_team = 0
    for profile_index, profile in enumerate(config.profiles):
        for team_index in range(profile.teams):
            team_start = start + timedelta(days=global_team)
            team_events, t0, t1, truth = _generate_team(
                config, profile, profile_index, team_index, team_start
            )
            events.extend(team_events)
            snapshots.extend([t0, t1])
            truths.append(truth)
            global_team += 1
    return ScenarioResult(events=events, snapshots=snapshots, ground_truth=truths)


def events_as_json_lines(events: Sequence[RawEvent]) -> str:
    lines = []
    for event in events:
        record = {name: event.field_value(name) for name in FIELD_ORDER}
        record[HASH_FIELD] = event.hash
        lines.append(json.dumps(record))
    return "\n".join(lines) + "\n"


def ground_truth_as_csv(truths: Sequence[GroundTruth]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(GroundTruth.CSV_COLUMNS)
    for truth in truths:
        writer.writerow(truth.as_row())
    return out.getvalue()


def write_scenario(result: ScenarioResult, out_dir: str | Path) -> dict[str, Path]:
    """Write events.jsonl, products.csv and ground_truth.csv under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "events": out / "events.jsonl",
        "products": out / "products.csv",
        "ground_truth": out / "ground_truth.csv",
    }
    paths["events"].write_text(events_as_json_lines(result.events), encoding="utf-8")
    paths["products"].write_text(write_product_snapshots(result.snapshots), encoding="utf-8")
    paths["ground_truth"].write_text(ground_truth_as_csv(result.ground_truth), encoding="utf-8")
    return paths


def read_ground_truth(text: str) -> list[GroundTruth]:
    reader = csv.DictReader(io.StringIO(text))
    truths = []
    for row in reader:
        truths.append(
            GroundTruth(
                team=row["team"],
                practice=row["practice"],
                dev=int(row["DEV"]),
                ses=int(row["SES"]),
                evts=int(row["EVTS"]),
                nfiles=int(row["NFILES"]),
                ncom=int(row["NCOM"]),
                ncat=int(row["NCAT"]),
                nver=int(row["NVER"]),
                npla=int(row["NPLA"]),
                nos=int(row["NOS"]),
                nisp=int(row["NISP"]),
                nper=int(row["NPER"]),
                ec=int(row["EC"]),
                noa=int(row["NOA"]),
                nss=int(row["NSS"]),
                ncs=int(row["NCS"]),
                not_=int(row["NOT"]),
                pcc=int(row["PCC"]),
                vg_reduction=float(row["vg_reduction"]),
                vg_level=row["vg_level"],
            )
        )
    return truths
