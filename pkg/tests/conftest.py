"""Shared fixtures: event builders, in-memory logs, small synthetic scenarios."""

from __future__ import annotations

import json

import numpy as np
import pytest

from idemine import eventlog, synth
from idemine.eventlog import (
    FIELD_ORDER,
    CanonicalEvent,
    EventLog,
    RawEvent,
    Trace,
    compute_event_hash,
    parse_timestamp,
)

BASE_RECORD = {
    "team": "Team-10",
    "session": "dkoep74-ajodje5-63j3k2",
    "timestamp_begin": "2019-05-03 16:53:52.144",
    "timestamp_end": "2019-05-03 16:54:04.468",
    "fullname": "John User",
    "username": "john",
    "workspacename": "Workspace1",
    "projectname": "/jasml_0.10",
    "filename": "/jasml_0.10/src/jasml.java",
    "extension": "java",
    "category_name": "Eclipse Editor",
    "command_name": "File Editing",
    "category_id": "org.eclipse.ui.internal.EditorReference",
    "command_id": "iscte.plugin.eclipse.commands.file.edit",
    "platform_branch": "Eclipse Oxygen",
    "platform_version": "4.7.3.M20180330-0640",
    "java_version": "1.8.0_171-b11",
    "continent": "Europe",
    "country": "Portugal",
    "city": "Lisbon",
    "os_name": "Windows 10",
    "perspective": "Java",
}


def make_record(**overrides) -> dict:
    """A valid flat event record (strings) with a freshly computed hash."""
    record = {**BASE_RECORD, **overrides}
    record["hash"] = compute_event_hash(record)
    return record


def make_raw_event(**overrides) -> RawEvent:
    record = make_record(**overrides)
    values = {name: record[name] for name in FIELD_ORDER}
    values["timestamp_begin"] = parse_timestamp(values["timestamp_begin"])
    values["timestamp_end"] = parse_timestamp(values["timestamp_end"])
    return RawEvent(hash=record["hash"], extras={}, **values)


def record_to_json_line(record: dict) -> str:
    return json.dumps(record)


def make_canonical(
    path: tuple[str, str, str],
    start: str,
    case_id: str = "Team-10/s1",
    end: str | None = None,
    **attribute_overrides,
) -> CanonicalEvent:
    attributes = {
        "team": case_id.split("/", 1)[0],
        "session": case_id.split("/", 1)[1],
        "fullname": "Dev",
        "username": attribute_overrides.pop("username", "dev-1"),
        "workspacename": "Workspace1",
        "projectname": "/jasml_0.10",
        "extension": "java",
        "category_id": "cat.id",
        "command_id": attribute_overrides.pop("command_id", "cmd.id"),
        "platform_branch": "Eclipse Oxygen",
        "platform_version": "4.7",
        "java_version": "1.8",
        "continent": "Europe",
        "country": "Portugal",
        "city": "Lisbon",
        "os_name": "Linux",
        "perspective": "Java",
    }
    attributes.update(attribute_overrides)
    begin = parse_timestamp(start)
    finish = parse_timestamp(end) if end else begin
    return CanonicalEvent(
        case_id=case_id,
        activity_path=path,
        start=begin,
        end=finish,
        resource=attributes["username"],
        attributes=attributes,
    )


def make_log(cases: dict[str, list[tuple[str, str, str]]]) -> EventLog:
    """Build an EventLog straight from {case_id: [activity paths]}."""
    traces = []
    for case_id in sorted(cases):
        events = []
        for index, path in enumerate(cases[case_id]):
            stamp = f"2019-05-03 10:{index // 60:02d}:{index % 60:02d}.000"
            events.append(make_canonical(path, stamp, case_id=case_id))
        traces.append(Trace(case_id=case_id, events=tuple(events)))
    catalog = {}
    for level in range(3):
        catalog[level] = tuple(
            sorted({e.label(level) for t in traces for e in t.events})
        )
    return EventLog(traces=tuple(traces), catalog=catalog)


def random_log(rng: np.random.Generator, max_events: int = 200) -> EventLog:
    """A random multi-trace log over a small activity alphabet."""
    files = [f"/p/F{i}.java" for i in range(rng.integers(2, 6))]
    categories = ["Edit", "View", "Refactor"][: rng.integers(1, 4)]
    commands = [f"Cmd{i}" for i in range(rng.integers(2, 7))]
    n_traces = int(rng.integers(1, 8))
    cases = {}
    remaining = int(rng.integers(n_traces, max_events + 1))
    for t in range(n_traces):
        length = max(1, int(rng.integers(1, max(2, remaining // max(1, n_traces - t) + 1))))
        remaining -= length
        cases[f"T/{t}"] = [
            (
                files[int(rng.integers(len(files)))],
                categories[int(rng.integers(len(categories)))],
                commands[int(rng.integers(len(commands)))],
            )
            for _ in range(length)
        ]
    return make_log(cases)


def small_scenario_config(seed: int = 5) -> synth.ScenarioConfig:
    """A shrunken two-practice scenario for fast tests."""
    ar, mr = synth.default_profiles()
    small_ar = synth.PracticeProfile(
        practice="AR", teams=5, devs=(2, 3), sessions=(2, 3), files=(3, 5),
        commands=(6, 9), activities=(12, 18), events_per_session=(20, 45),
        pcc_band=(12.0, 40.0), vg_reduction_band=ar.vg_reduction_band,
        command_weights=ar.command_weights, always_include=ar.always_include,
    )
    small_mr = synth.PracticeProfile(
        practice="MR", teams=6, devs=(1, 2), sessions=(2, 3), files=(4, 7),
        commands=(8, 12), activities=(16, 24), events_per_session=(35, 70),
        pcc_band=(35.0, 90.0), vg_reduction_band=mr.vg_reduction_band,
        command_weights=mr.command_weights, always_include=mr.always_include,
    )
    return synth.ScenarioConfig(seed=seed, profiles=(small_ar, small_mr))


@pytest.fixture(scope="session")
def small_scenario() -> synth.ScenarioResult:
    return synth.generate(small_scenario_config())


@pytest.fixture(scope="session")
def small_log(small_scenario) -> EventLog:
    return eventlog.build_log(eventlog.deduplicate(small_scenario.events))
