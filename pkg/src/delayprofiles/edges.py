"""Stop-to-stop delay-change extraction and edge filtering.

A course is a time-ordered sequence of snapshots sharing a course_id. The
reported delay is recomputed on arrival at each stop, so the delay changes
exactly when ``stop_no`` changes; every such transition yields one directed
edge observation carrying the delay delta between the two stops. Inferred
edges are then validated against the schedule and thinned by an observation
support threshold, which removes reporting glitches and detour artifacts.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime
from itertools import groupby
from pathlib import Path
from typing import Iterable, Sequence

from .gtfs import ScheduleEdgeSet
from .ingest import TIME_FORMAT, VehicleSnapshot, VehicleType

EVENT_COLUMNS = (
    "stop_from",
    "stop_to",
    "delay_delta_ms",
    "observed_at",
    "course_id",
    "vehicle_type",
    "line_no",
)

DEFAULT_SUPPORT_THRESHOLD = 200


@dataclass(frozen=True, order=True)
class EdgeKey:
    stop_from: str
    stop_to: str

    def __post_init__(self):
        if self.stop_from == self.stop_to:
            raise ValueError(f"self-loop edge ({self.stop_from!r})")

    def __str__(self) -> str:
        return f"{self.stop_from}->{self.stop_to}"


@dataclass(frozen=True)
class DelayChangeEvent:
    edge: EdgeKey
    delay_delta_ms: int
    observed_at: datetime
    course_id: int
    vehicle_type: VehicleType
    line_no: str


@dataclass
class EdgeObservations:
    edge: EdgeKey
    events: list[DelayChangeEvent]

    @property
    def support(self) -> int:
        return len(self.events)


def extract_delay_changes(course: Sequence[VehicleSnapshot]) -> list[DelayChangeEvent]:
    """Emit one event per adjacent snapshot pair whose stop_no differs.

    The delta is signed (positive means the delay grew) and is stamped with
    the later snapshot's time, when the new delay value was reported.
    Requires the course to be sorted ascending by time and to share one
    course_id; empty and singleton courses yield no events.
    """
    events: list[DelayChangeEvent] = []
    for prev, cur in zip(course, course[1:]):
        if prev.course_id != cur.course_id:
            raise ValueError(
                f"course mixes course_ids {prev.course_id} and {cur.course_id}"
            )
        if cur.time < prev.time:
            raise ValueError(f"course {cur.course_id} is not sorted by time")
        if prev.stop_no == cur.stop_no:
            continue
        events.append(
            DelayChangeEvent(
                edge=EdgeKey(prev.stop_no, cur.stop_no),
                delay_delta_ms=cur.delay_ms - prev.delay_ms,
                observed_at=cur.time,
                course_id=cur.course_id,
                vehicle_type=cur.vehicle_type,
                line_no=cur.line_no,
            )
        )
    return events


def extract_all_courses(records: Iterable[VehicleSnapshot]) -> list[DelayChangeEvent]:
    """Segment records by course_id, sort each course by time, extract events."""
    ordered = sorted(records, key=lambda r: (r.course_id, r.time))
    events: list[DelayChangeEvent] = []
    for _, course in groupby(ordered, key=lambda r: r.course_id):
        events.extend(extract_delay_changes(list(course)))
    return events


def group_by_edge(events: Iterable[DelayChangeEvent]) -> list[EdgeObservations]:
    """One EdgeObservations per distinct edge, ordered lexicographically."""
    grouped: dict[EdgeKey, list[DelayChangeEvent]] = {}
    for event in events:
        grouped.setdefault(event.edge, []).append(event)
    return [EdgeObservations(edge, grouped[edge]) for edge in sorted(grouped)]


def filter_by_schedule(
    groups: Iterable[EdgeObservations], schedule: ScheduleEdgeSet
) -> list[EdgeObservations]:
    """Keep edges that connect consecutive mandatory stops in the schedule."""
    allowed = schedule.mandatory_edges
    return [g for g in groups if (g.edge.stop_from, g.edge.stop_to) in allowed]


def filter_by_support(
    groups: Iterable[EdgeObservations], threshold: int = DEFAULT_SUPPORT_THRESHOLD
) -> list[EdgeObservations]:
    """Keep edges observed strictly more than ``threshold`` times."""
    if threshold < 0:
        raise ValueError(f"support threshold must be non-negative, got {threshold}")
    return [g for g in groups if g.support > threshold]


def support_sweep(
    groups: Sequence[EdgeObservations], thresholds: Sequence[int]
) -> list[tuple[int, int]]:
    """Surviving-edge count for each threshold; counts are non-increasing."""
    if not thresholds:
        raise ValueError("thresholds must be non-empty")
    supports = [g.support for g in groups]
    return [(t, sum(1 for s in supports if s > t)) for t in thresholds]


def write_events(events: Iterable[DelayChangeEvent], path: Path | str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(EVENT_COLUMNS)
        for e in events:
            writer.writerow(
                [
                    e.edge.stop_from,
                    e.edge.stop_to,
                    e.delay_delta_ms,
                    e.observed_at.strftime(TIME_FORMAT),
                    e.course_id,
                    e.vehicle_type.value,
                    e.line_no,
                ]
            )


def read_events(path: Path | str) -> list[DelayChangeEvent]:
    events: list[DelayChangeEvent] = []
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        missing = [c for c in EVENT_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path} is missing columns: {', '.join(missing)}")
        for row in reader:
            events.append(
                DelayChangeEvent(
                    edge=EdgeKey(row["stop_from"], row["stop_to"]),
                    delay_delta_ms=int(row["delay_delta_ms"]),
                    observed_at=datetime.strptime(row["observed_at"], TIME_FORMAT),
                    course_id=int(row["course_id"]),
                    vehicle_type=VehicleType(row["vehicle_type"]),
                    line_no=row["line_no"],
                )
            )
    return events
