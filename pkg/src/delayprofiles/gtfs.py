"""GTFS schedule parsing: stop coordinates and scheduled consecutive stop pairs.

Only two tables are needed: ``stops`` for coordinates and ``stop_times`` for
the directed edges between consecutive stops of each trip. Pickup/drop-off
flags on stop_times decide which edges connect mandatory (regular-service)
stops; an on-request flag at either endpoint keeps the pair out of the
mandatory set.
"""

from __future__ import annotations

import csv
import io
import zipfile
from dataclasses import dataclass, field
from pathlib import Path


class GtfsError(ValueError):
    pass


@dataclass(frozen=True)
class Stop:
    stop_id: str
    latitude: float
    longitude: float
    name: str = ""


@dataclass
class ScheduleEdgeSet:
    """Directed stop pairs serviced by at least one trip.

    ``mandatory_edges`` is the subset where some trip traverses the pair with
    regular (non-request) pickup and drop-off at both endpoints.
    """

    edges: set[tuple[str, str]] = field(default_factory=set)
    mandatory_edges: set[tuple[str, str]] = field(default_factory=set)

    def __post_init__(self):
        if not self.mandatory_edges <= self.edges:
            raise GtfsError("mandatory_edges is not a subset of edges")
        for a, b in self.edges:
            if a == b:
                raise GtfsError(f"self-loop edge ({a!r}, {b!r})")


def _open_table(feed: Path | str, name: str) -> io.TextIOBase:
    """Open a GTFS table from a feed directory or a .zip archive."""
    feed = Path(feed)
    if feed.is_dir():
        path = feed / f"{name}.txt"
        if not path.exists():
            raise GtfsError(f"feed {feed} has no {name}.txt")
        return open(path, "r", encoding="utf-8-sig", newline="")
    if feed.suffix == ".zip":
        archive = zipfile.ZipFile(feed)
        try:
            raw = archive.read(f"{name}.txt")
        except KeyError:
            raise GtfsError(f"feed {feed} has no {name}.txt") from None
        finally:
            archive.close()
        return io.StringIO(raw.decode("utf-8-sig"))
    raise GtfsError(f"feed {feed} is neither a directory nor a .zip archive")


def _require_columns(reader: csv.DictReader, table: str, columns: tuple[str, ...]) -> None:
    header = reader.fieldnames or []
    missing = [c for c in columns if c not in header]
    if missing:
        raise GtfsError(f"{table} is missing required columns: {', '.join(missing)}")


def load_stops(feed: Path | str) -> dict[str, Stop]:
    """Read the stops table into a stop_id -> Stop map. Duplicate ids are errors."""
    stops: dict[str, Stop] = {}
    with _open_table(feed, "stops") as handle:
        reader = csv.DictReader(handle)
        _require_columns(reader, "stops", ("stop_id", "stop_lat", "stop_lon"))
        for row in reader:
            stop_id = row["stop_id"].strip()
            if stop_id in stops:
                raise GtfsError(f"duplicate stop_id {stop_id!r} in stops table")
            try:
                lat = float(row["stop_lat"])
                lon = float(row["stop_lon"])
            except ValueError as exc:
                raise GtfsError(f"stop {stop_id!r} has malformed coordinates") from exc
            if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
                raise GtfsError(f"stop {stop_id!r} has out-of-range coordinates")
            stops[stop_id] = Stop(stop_id, lat, lon, (row.get("stop_name") or "").strip())
    return stops


def _is_regular(value: str | None) -> bool:
    # GTFS: empty or 0 means regularly scheduled; anything else is
    # no-service or on-request.
    return value is None or value.strip() in ("", "0")


def load_schedule_edges(feed: Path | str) -> ScheduleEdgeSet:
    """Derive directed consecutive-stop edges from the stop_times table.

    Rows of a trip must appear in strictly increasing stop_sequence order;
    violations raise an error naming the trip.
    """
    trips: dict[str, list[tuple[int, str, bool]]] = {}
    with _open_table(feed, "stop_times") as handle:
        reader = csv.DictReader(handle)
        _require_columns(reader, "stop_times", ("trip_id", "stop_id", "stop_sequence"))
        for row in reader:
            trip_id = row["trip_id"].strip()
            try:
                seq = int(row["stop_sequence"])
            except ValueError as exc:
                raise GtfsError(f"trip {trip_id!r} has malformed stop_sequence") from exc
            regular = _is_regular(row.get("pickup_type")) and _is_regular(row.get("drop_off_type"))
            trips.setdefault(trip_id, []).append((seq, row["stop_id"].strip(), regular))
    edges: set[tuple[str, str]] = set()
    mandatory: set[tuple[str, str]] = set()
    for trip_id, visits in trips.items():
        for prev, cur in zip(visits, visits[1:]):
            if cur[0] <= prev[0]:
                raise GtfsError(f"trip {trip_id!r} has unsorted or duplicated stop_sequence")
            if cur[1] != prev[1]:
                edges.add((prev[1], cur[1]))
                if prev[2] and cur[2]:
                    mandatory.add((prev[1], cur[1]))
    return ScheduleEdgeSet(edges=edges, mandatory_edges=mandatory)


def write_edge_set(edge_set: ScheduleEdgeSet, path: Path | str) -> None:
    """Write one directed pair per line with a mandatory flag column."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["stop_from", "stop_to", "mandatory"])
        for a, b in sorted(edge_set.edges):
            writer.writerow([a, b, 1 if (a, b) in edge_set.mandatory_edges else 0])


def read_edge_set(path: Path | str) -> ScheduleEdgeSet:
    edges: set[tuple[str, str]] = set()
    mandatory: set[tuple[str, str]] = set()
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        _require_columns(reader, str(path), ("stop_from", "stop_to", "mandatory"))
        for row in reader:
            pair = (row["stop_from"], row["stop_to"])
            edges.add(pair)
            if row["mandatory"].strip() == "1":
                mandatory.add(pair)
    return ScheduleEdgeSet(edges=edges, mandatory_edges=mandatory)
