"""Ingestion of archived vehicle-positioning snapshots.

Raw input is newline-delimited JSON, one snapshot per line, with the feed's
field names (``course_id``, ``vehicle_id``, ``latitude``, ``longitude``,
``line_no``, ``type``, ``direction``, ``delay``, ``time``, ``stop_no``).
The feed re-reports the same observation under later timestamps (cached
results, GPS dropouts), so ingestion deduplicates on content and keeps the
earliest report, then restricts to the weekday daytime service window.
"""

from __future__ import annotations

import gzip
import json
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Sequence

TIME_FORMAT = "%Y-%m-%d %H:%M:%S"

FIELD_ORDER = (
    "course_id",
    "vehicle_id",
    "latitude",
    "longitude",
    "line_no",
    "type",
    "direction",
    "delay",
    "time",
    "stop_no",
)


class VehicleType(str, Enum):
    BUS = "b"
    TRAM = "t"


class SnapshotParseError(ValueError):
    """A malformed snapshot record; carries the 1-based source line number.

    ``kind`` is "malformed" for broken serialization and "rejected" for
    well-formed records that violate the data contract (unknown vehicle type).
    """

    def __init__(self, message: str, line_no: int | None = None, kind: str = "malformed"):
        self.line_no = line_no
        self.kind = kind
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class VehicleSnapshot:
    """One vehicle-positioning report."""

    course_id: int
    vehicle_id: int
    latitude: float
    longitude: float
    line_no: str
    vehicle_type: VehicleType
    direction: str
    delay_ms: int
    time: datetime
    stop_no: str

    def content_key(self) -> tuple:
        """Identity of the observation: every field except the report time."""
        return (
            self.course_id,
            self.vehicle_id,
            self.latitude,
            self.longitude,
            self.line_no,
            self.vehicle_type,
            self.direction,
            self.delay_ms,
            self.stop_no,
        )

    def to_json(self) -> str:
        obj = {
            "course_id": self.course_id,
            "vehicle_id": self.vehicle_id,
            "latitude": self.latitude,
            "longitude": self.longitude,
            "line_no": self.line_no,
            "type": self.vehicle_type.value,
            "direction": self.direction,
            "delay": self.delay_ms,
            "time": self.time.strftime(TIME_FORMAT),
            "stop_no": self.stop_no,
        }
        return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


@dataclass
class IngestStats:
    total_records: int = 0
    unique_records: int = 0
    window_records: int = 0
    parse_errors: int = 0
    rejected_records: int = 0

    def to_dict(self) -> dict:
        return {
            "total_records": self.total_records,
            "unique_records": self.unique_records,
            "window_records": self.window_records,
            "parse_errors": self.parse_errors,
            "rejected_records": self.rejected_records,
        }


@dataclass(frozen=True)
class ServiceWindow:
    """Weekday daytime window; hours are inclusive on both ends.

    The default (6, 20) keeps timestamps from 06:00:00 through 20:59:59.
    """

    start_hour: int = 6
    end_hour: int = 20
    weekdays_only: bool = True

    def __post_init__(self):
        if not 0 <= self.start_hour < self.end_hour <= 23:
            raise ValueError(f"invalid service window [{self.start_hour}, {self.end_hour}]")

    def contains(self, t: datetime) -> bool:
        if self.weekdays_only and t.weekday() > 4:
            return False
        return self.start_hour <= t.hour <= self.end_hour

    @property
    def n_hours(self) -> int:
        return self.end_hour - self.start_hour + 1


def parse_snapshot_record(line: str, line_no: int | None = None) -> VehicleSnapshot | None:
    """Parse one serialized snapshot; blank lines yield None.

    Raises SnapshotParseError for malformed fields or an unknown vehicle type.
    """
    line = line.strip()
    if not line:
        return None
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise SnapshotParseError(f"invalid JSON: {exc.msg}", line_no) from exc
    if not isinstance(obj, dict):
        raise SnapshotParseError("record is not an object", line_no)
    missing = [name for name in FIELD_ORDER if name not in obj]
    if missing:
        raise SnapshotParseError(f"missing fields: {', '.join(missing)}", line_no)
    try:
        type_code = str(obj["type"])
        try:
            vehicle_type = VehicleType(type_code)
        except ValueError:
            raise SnapshotParseError(
                f"unknown vehicle type {type_code!r}", line_no, kind="rejected"
            ) from None
        snapshot = VehicleSnapshot(
            course_id=int(obj["course_id"]),
            vehicle_id=int(obj["vehicle_id"]),
            latitude=float(obj["latitude"]),
            longitude=float(obj["longitude"]),
            line_no=str(obj["line_no"]),
            vehicle_type=vehicle_type,
            direction=str(obj["direction"]),
            delay_ms=int(obj["delay"]),
            time=datetime.strptime(str(obj["time"]), TIME_FORMAT),
            stop_no=str(obj["stop_no"]),
        )
    except SnapshotParseError:
        raise
    except (TypeError, ValueError) as exc:
        raise SnapshotParseError(f"malformed field: {exc}", line_no) from exc
    if not -90.0 <= snapshot.latitude <= 90.0:
        raise SnapshotParseError(f"latitude {snapshot.latitude} out of range", line_no)
    if not -180.0 <= snapshot.longitude <= 180.0:
        raise SnapshotParseError(f"longitude {snapshot.longitude} out of range", line_no)
    return snapshot


def _sort_key(record: VehicleSnapshot) -> tuple:
    return (record.course_id, record.time) + record.content_key()[1:]


def deduplicate(records: Iterable[VehicleSnapshot]) -> tuple[list[VehicleSnapshot], IngestStats]:
    """Collapse repeated reports of the same observation to the earliest one.

    Two records are duplicates when every field except ``time`` matches; the
    survivor carries the minimum time. Output is sorted by course then time,
    so the result is independent of input order.
    """
    stats = IngestStats()
    survivors: dict[tuple, VehicleSnapshot] = {}
    for record in records:
        stats.total_records += 1
        key = record.content_key()
        held = survivors.get(key)
        if held is None or record.time < held.time:
            survivors[key] = record
    out = sorted(survivors.values(), key=_sort_key)
    stats.unique_records = len(out)
    stats.window_records = len(out)
    return out, stats


def filter_service_window(
    records: Iterable[VehicleSnapshot],
    window: ServiceWindow = ServiceWindow(),
) -> list[VehicleSnapshot]:
    """Keep records whose timestamp falls inside the service window."""
    return [r for r in records if window.contains(r.time)]


def _open_text(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, "r", encoding="utf-8")


def read_snapshots(
    paths: Sequence[Path | str],
    stats: IngestStats | None = None,
    on_error: str = "count",
) -> Iterator[VehicleSnapshot]:
    """Stream snapshots from one or more record files (.gz accepted).

    Malformed records are counted (``parse_errors`` / ``rejected_records``)
    and skipped unless ``on_error="raise"``.
    """
    for path in paths:
        path = Path(path)
        with _open_text(path) as handle:
            for line_no, line in enumerate(handle, start=1):
                try:
                    record = parse_snapshot_record(line, line_no)
                except SnapshotParseError as exc:
                    if on_error == "raise":
                        raise
                    if stats is not None:
                        if exc.kind == "rejected":
                            stats.rejected_records += 1
                        else:
                            stats.parse_errors += 1
                    continue
                if record is not None:
                    yield record


def write_snapshots(records: Iterable[VehicleSnapshot], path: Path | str) -> None:
    """Write records in the canonical one-object-per-line format."""
    path = Path(path)
    opener = gzip.open(path, "wt", encoding="utf-8") if path.suffix == ".gz" else open(path, "w", encoding="utf-8")
    with opener as handle:
        for record in records:
            handle.write(record.to_json())
            handle.write("\n")


def ingest_files(
    inputs: Sequence[Path | str],
    window: ServiceWindow = ServiceWindow(),
) -> tuple[list[VehicleSnapshot], IngestStats]:
    """Full ingestion: parse, deduplicate, restrict to the service window."""
    stats = IngestStats()
    raw = list(read_snapshots(inputs, stats=stats))
    deduped, dstats = deduplicate(raw)
    stats.total_records = dstats.total_records
    stats.unique_records = dstats.unique_records
    kept = filter_service_window(deduped, window)
    stats.window_records = len(kept)
    return kept, stats
