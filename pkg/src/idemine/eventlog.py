"""Parse, verify, deduplicate and canonicalize raw IDE events into a case-structured event log.

Raw events arrive as JSON-lines (one object per line) or CSV with a header
matching the canonical field names below.  Every accepted record becomes a
:class:`RawEvent`; :func:`build_log` then groups events into per-case traces,
where a case is one team/session pair and the activity is the three-level
``filename | category | command`` hierarchy.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable, Iterable, Mapping

from .errors import ConfigurationError, InputError

# Canonical field order.  This is also the serialization order used when
# hashing an event, so it must never be reordered once data has been written.
FIELD_ORDER: tuple[str, ...] = (
    "team",
    "session",
    "timestamp_begin",
    "timestamp_end",
    "fullname",
    "username",
    "workspacename",
    "projectname",
    "filename",
    "extension",
    "category_name",
    "command_name",
    "category_id",
    "command_id",
    "platform_branch",
    "platform_version",
    "java_version",
    "continent",
    "country",
    "city",
    "os_name",
    "perspective",
)

HASH_FIELD = "hash"

# Key aliases accepted on JSON input (the Eclipse plugin emits camelCase for
# a few fields and calls the JVM version plainly "java").
JSON_KEY_ALIASES: dict[str, str] = {
    "categoryName": "category_name",
    "commandName": "command_name",
    "categoryID": "category_id",
    "commandID": "command_id",
    "java": "java_version",
}

REQUIRED_NON_EMPTY = ("team", "session", "username", "category_name", "command_name")

_HASH_RE = re.compile(r"^[0-9a-f]{32}$")

# Reserved labels used by the discovery module for artificial boundary nodes.
START_LABEL = "START"
END_LABEL = "END"


def _md5_hex(data: bytes) -> str:
    return hashlib.md5(data).hexdigest()


def _blake2b128_hex(data: bytes) -> str:
    return hashlib.blake2b(data, digest_size=16).hexdigest()


# Pluggable 128-bit digests rendered as 32 lowercase hex chars.  The source
# logs never state which function produced their hashes, so round-tripping
# foreign files is not guaranteed; "md5" is the default for data produced by
# this toolkit.
HASH_ALGORITHMS: dict[str, Callable[[bytes], str]] = {
    "md5": _md5_hex,
    "blake2b-128": _blake2b128_hex,
}

DEFAULT_HASH_ALGORITHM = "md5"


def parse_timestamp(text: str) -> datetime:
    """Parse ``YYYY-MM-DD HH:MM:SS.mmm`` (or any ISO-8601 form) as a UTC instant.

    Naive inputs are interpreted as UTC; offset-bearing inputs are converted.
    Precision is truncated to milliseconds, the resolution of the source logs.
    """
    raw = text.strip()
    if raw.endswith("Z"):
        raw = raw[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(raw)
    except ValueError as exc:
        raise ValueError(f"invalid timestamp {text!r}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    else:
        dt = dt.astimezone(timezone.utc)
    return dt.replace(microsecond=(dt.microsecond // 1000) * 1000)


def format_timestamp(dt: datetime) -> str:
    """Render a UTC instant in the canonical ``YYYY-MM-DD HH:MM:SS.mmm`` form."""
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    dt = dt.astimezone(timezone.utc)
    return dt.strftime("%Y-%m-%d %H:%M:%S.") + f"{dt.microsecond // 1000:03d}"


@dataclass(frozen=True)
class RawEvent:
    """One timestamped IDE action exactly as collected, plus its integrity hash."""

    team: str
    session: str
    timestamp_begin: datetime
    timestamp_end: datetime
    fullname: str
    username: str
    workspacename: str
    projectname: str
    filename: str
    extension: str
    category_name: str
    command_name: str
    category_id: str
    command_id: str
    platform_branch: str
    platform_version: str
    java_version: str
    continent: str
    country: str
    city: str
    os_name: str
    perspective: str
    hash: str
    extras: Mapping[str, str] = field(default_factory=dict)

    def field_value(self, name: str) -> str:
        value = getattr(self, name)
        if name in ("timestamp_begin", "timestamp_end"):
            return format_timestamp(value)
        return value

    def as_record(self) -> dict[str, str]:
        """Flat string mapping in canonical field order (hash last, extras after)."""
        record = {name: self.field_value(name) for name in FIELD_ORDER}
        record[HASH_FIELD] = self.hash
        record.update(self.extras)
        return record


def canonical_serialization(fields: Mapping[str, str]) -> str:
    """Join the canonical fields (everything except ``hash``) with ``|``.

    Absent fields serialize as the empty string.  Unknown extra fields are
    deliberately not covered: they are opaque payload, not integrity-bearing.
    """
    return "|".join(fields.get(name, "") for name in FIELD_ORDER)


def compute_event_hash(
    fields: Mapping[str, str] | RawEvent, algorithm: str = DEFAULT_HASH_ALGORITHM
) -> str:
    """Digest of the canonical serialization, as 32 lowercase hex chars."""
    if isinstance(fields, RawEvent):
        fields = {name: fields.field_value(name) for name in FIELD_ORDER}
    try:
        digest = HASH_ALGORITHMS[algorithm]
    except KeyError:
        raise ConfigurationError(f"unknown hash algorithm {algorithm!r}") from None
    return digest(canonical_serialization(fields).encode("utf-8"))


def verify_event_hash(event: RawEvent, algorithm: str = DEFAULT_HASH_ALGORITHM) -> bool:
    """True iff the stored hash byte-exactly equals the recomputed digest."""
    return compute_event_hash(event, algorithm) == event.hash


@dataclass
class IngestReport:
    """Bookkeeping for one ingest batch; ``parsed == accepted + rejected``."""

    parsed: int = 0
    accepted: int = 0
    rejected: int = 0
    reasons: Counter = field(default_factory=Counter)
    duplicates_removed: int = 0
    hash_failures: int = 0

    def reject(self, reason: str) -> None:
        self.rejected += 1
        self.reasons[reason] += 1

    def as_dict(self) -> dict[str, int]:
        flat = {
            "parsed": self.parsed,
            "accepted": self.accepted,
            "rejected": self.rejected,
            "duplicates_removed": self.duplicates_removed,
            "hash_failures": self.hash_failures,
        }
        for reason in sorted(self.reasons):
            flat[f"reason:{reason}"] = self.reasons[reason]
        return flat


def _build_raw_event(record: Mapping[str, str], extras: Mapping[str, str]) -> RawEvent:
    """Validate one flat record against the event invariants; raises ValueError."""
    for name in FIELD_ORDER + (HASH_FIELD,):
        if name not in record or record[name] is None:
            raise ValueError(f"missing field {name}")
    for name in REQUIRED_NON_EMPTY:
        if not str(record[name]).strip():
            raise ValueError(f"empty field {name}")
    begin = parse_timestamp(str(record["timestamp_begin"]))
    end = parse_timestamp(str(record["timestamp_end"]))
    if begin > end:
        raise ValueError("timestamp_begin after timestamp_end")
    digest = str(record[HASH_FIELD])
    if not _HASH_RE.match(digest):
        raise ValueError("invalid hash format")
    values = {name: str(record[name]) for name in FIELD_ORDER}
    values["timestamp_begin"] = begin  # type: ignore[assignment]
    values["timestamp_end"] = end  # type: ignore[assignment]
    return RawEvent(hash=digest, extras=dict(extras), **values)  # type: ignore[arg-type]


def _records_from_json_lines(text: str) -> Iterable[tuple[dict, dict, str | None]]:
    for line in text.splitlines():
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            yield {}, {}, f"invalid json: {exc.msg}"
            continue
        if not isinstance(obj, dict):
            yield {}, {}, "invalid json: not an object"
            continue
        record: dict[str, str] = {}
        extras: dict[str, str] = {}
        for key, value in obj.items():
            name = JSON_KEY_ALIASES.get(key, key)
            if name in FIELD_ORDER or name == HASH_FIELD:
                record[name] = str(value)
            else:
                extras[name] = str(value)
        yield record, extras, None


def _records_from_csv(text: str) -> Iterable[tuple[dict, dict, str | None]]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        return
    known = set(FIELD_ORDER) | {HASH_FIELD}
    for row in reader:
        if not any(cell.strip() for cell in row):
            continue
        record: dict[str, str] = {}
        extras: dict[str, str] = {}
        for name, value in zip(header, row):
            if name in known:
                record[name] = value
            else:
                extras[name] = value
        yield record, extras, None


def parse_events(
    source,
    fmt: str = "json-lines",
    verify_hashes: bool = False,
    hash_algorithm: str = DEFAULT_HASH_ALGORITHM,
) -> tuple[list[RawEvent], IngestReport]:
    """Parse a byte stream (or bytes/str) of raw events.

    Malformed records are counted and skipped, never aborting the batch.
    With ``verify_hashes`` the stored digest is recomputed and mismatching
    events are rejected and counted in ``report.hash_failures``.
    """
    if isinstance(source, bytes):
        data = source
    elif isinstance(source, str):
        data = source.encode("utf-8")
    else:
        try:
            data = source.read()
        except OSError as exc:
            raise InputError(f"unreadable source: {exc}") from exc
        if isinstance(data, str):
            data = data.encode("utf-8")
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise InputError(f"source is not valid UTF-8: {exc}") from exc

    if fmt == "json-lines":
        records = _records_from_json_lines(text)
    elif fmt == "csv":
        records = _records_from_csv(text)
    else:
        raise ConfigurationError(f"unknown event format {fmt!r}")

    events: list[RawEvent] = []
    report = IngestReport()
    for record, extras, error in records:
        report.parsed += 1
        if error is not None:
            report.reject(error)
            continue
        try:
            event = _build_raw_event(record, extras)
        except ValueError as exc:
            report.reject(str(exc))
            continue
        if verify_hashes and not verify_event_hash(event, hash_algorithm):
            report.hash_failures += 1
            report.reject("hash mismatch")
            continue
        events.append(event)
        report.accepted += 1
    return events, report


def deduplicate(events: Iterable[RawEvent]) -> list[RawEvent]:
    """Drop events sharing a (username, timestamp_begin, timestamp_end) key.

    The first occurrence wins and relative order is preserved, mirroring the
    unique-key insertion rule of the original event store.
    """
    seen: set[tuple[str, datetime, datetime]] = set()
    kept: list[RawEvent] = []
    for event in events:
        key = (event.username, event.timestamp_begin, event.timestamp_end)
        if key in seen:
            continue
        seen.add(key)
        kept.append(event)
    return kept


@dataclass(frozen=True)
class CanonicalEvent:
    """A raw event mapped into case/activity/timestamp/resource form."""

    case_id: str
    activity_path: tuple[str, str, str]
    start: datetime
    end: datetime
    resource: str
    attributes: Mapping[str, str]

    def label(self, level: int) -> str:
        """Activity label at hierarchy level 0..2: the first level+1 path segments joined by '|'."""
        return "|".join(self.activity_path[: level + 1])


@dataclass(frozen=True)
class Trace:
    """All events of one case, totally ordered by (start, end, command_id, input index)."""

    case_id: str
    events: tuple[CanonicalEvent, ...]


@dataclass(frozen=True)
class EventLog:
    """A set of traces plus the distinct activity labels seen per hierarchy level."""

    traces: tuple[Trace, ...]
    catalog: Mapping[int, tuple[str, ...]]

    def events(self) -> Iterable[CanonicalEvent]:
        for trace in self.traces:
            yield from trace.events

    @property
    def event_count(self) -> int:
        return sum(len(trace.events) for trace in self.traces)

    def teams(self) -> tuple[str, ...]:
        return tuple(sorted({e.attributes["team"] for e in self.events()}))


def case_id_for(team: str, session: str) -> str:
    return f"{team}/{session}"


_PATH_FIELDS = ("filename", "category_name", "command_name")
_CORE_FIELDS = set(_PATH_FIELDS) | {"timestamp_begin", "timestamp_end", "hash"}


def canonicalize(event: RawEvent) -> CanonicalEvent:
    """Map a raw event onto the case/activity view used for discovery."""
    path = tuple(getattr(event, name) for name in _PATH_FIELDS)
    for segment, name in zip(path, _PATH_FIELDS):
        if not segment:
            raise ValueError(f"empty activity segment {name}")
        if segment in (START_LABEL, END_LABEL):
            raise ValueError(f"activity segment {name} uses reserved label {segment!r}")
    attributes = {
        name: event.field_value(name) for name in FIELD_ORDER if name not in _CORE_FIELDS
    }
    attributes.update(event.extras)
    return CanonicalEvent(
        case_id=case_id_for(event.team, event.session),
        activity_path=path,  # type: ignore[arg-type]
        start=event.timestamp_begin,
        end=event.timestamp_end,
        resource=event.username,
        attributes=attributes,
    )


def build_log(events: Iterable[RawEvent]) -> EventLog:
    """Group deduplicated events into one trace per (team, session) case.

    Events inside a trace are sorted by start then end time; residual ties are
    broken by command_id and finally the original input position so that
    discovery is reproducible regardless of input order.
    """
    by_case: dict[str, list[tuple]] = {}
    for index, event in enumerate(events):
        canonical = canonicalize(event)
        key = (canonical.start, canonical.end, event.command_id, index)
        by_case.setdefault(canonical.case_id, []).append((key, canonical))

    traces = []
    for case_id in sorted(by_case):
        ordered = tuple(ev for _, ev in sorted(by_case[case_id], key=lambda item: item[0]))
        traces.append(Trace(case_id=case_id, events=ordered))

    catalog: dict[int, tuple[str, ...]] = {}
    for level in range(3):
        labels = {e.label(level) for trace in traces for e in trace.events}
        catalog[level] = tuple(sorted(labels))
    return EventLog(traces=tuple(traces), catalog=catalog)


def split_by_team(log: EventLog) -> dict[str, EventLog]:
    """Split a log into one sub-log per team, preserving traces as-is."""
    grouped: dict[str, list[Trace]] = {}
    for trace in log.traces:
        team = trace.events[0].attributes["team"]
        grouped.setdefault(team, []).append(trace)
    result = {}
    for team in sorted(grouped):
        traces = tuple(grouped[team])
        catalog: dict[int, tuple[str, ...]] = {}
        for level in range(3):
            labels = {e.label(level) for trace in traces for e in trace.events}
            catalog[level] = tuple(sorted(labels))
        result[team] = EventLog(traces=traces, catalog=catalog)
    return result
