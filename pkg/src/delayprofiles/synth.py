"""Synthetic vehicle-report corpora with planted delay-change behavior.

Builds a small stop network, assigns each edge a delay-change profile, and
rolls out weekday course traversals whose reports mimic the archive format
consumed by :mod:`delayprofiles.ingest`. Duplicate reports and dropouts are
injected as controlled noise, and the matching schedule tables plus the
ground-truth edge labels are written alongside, so the whole pipeline can be
exercised end to end against a known answer.

Given the same seed the generator is deterministic: two runs produce
byte-identical corpora.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from datetime import date, datetime, time, timedelta
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .edges import EdgeKey
from .features import DEFAULT_SCHEME, BinningScheme
from .gtfs import Stop
from .ingest import ServiceWindow, VehicleSnapshot, VehicleType, write_snapshots

__all__ = [
    "PlantedProfile",
    "SyntheticLine",
    "SyntheticNetwork",
    "SyntheticCorpus",
    "CorpusPaths",
    "default_archetypes",
    "centered_band_weights",
    "build_network",
    "assign_profiles",
    "generate_corpus",
    "write_corpus",
    "write_mini_gtfs",
    "write_ground_truth",
    "read_ground_truth",
    "load_profiles",
]

# First service day of generated corpora; a Monday, so weekday counting
# starts at the top of a week.
DEFAULT_START_DATE = date(2017, 3, 6)

# Scheduled run time between consecutive stops.
INTER_STOP_MINUTES = 2

# First course leaves this many minutes after the window opens; the last
# course is scheduled so that a typically delayed run still finishes inside.
FIRST_RUN_OFFSET_MINUTES = 5
END_BUFFER_MINUTES = 25

# Sampling span, in minutes, for the two open-ended delay bands.
EXTREME_BAND_SPAN_MINUTES = 5.0

_MS_PER_MINUTE = 60_000


@dataclass(frozen=True)
class PlantedProfile:
    """Per-edge delay-change behavior to plant in a synthetic corpus.

    ``band_weights`` holds one mixture row per service-window hour; row ``h``
    gives the probability of each delay band for events in that hour, and
    every row must sum to one. ``headway_minutes`` spaces the courses of a
    line, ``duplicate_rate`` is the chance a report is re-sent with a later
    timestamp, and ``dropout_rate`` the chance a report is lost entirely.
    """

    profile_id: int
    name: str
    band_weights: tuple[tuple[float, ...], ...]
    headway_minutes: float = 45.0
    duplicate_rate: float = 0.0
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.headway_minutes <= 0:
            raise ValueError(f"profile {self.name!r}: headway must be positive")
        for rate_name in ("duplicate_rate", "dropout_rate"):
            rate = getattr(self, rate_name)
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"profile {self.name!r}: {rate_name} must be in [0, 1)")
        if not self.band_weights:
            raise ValueError(f"profile {self.name!r}: band_weights is empty")
        width = len(self.band_weights[0])
        for h, row in enumerate(self.band_weights):
            if len(row) != width:
                raise ValueError(f"profile {self.name!r}: hour {h} has {len(row)} weights, expected {width}")
            if any(w < 0 for w in row):
                raise ValueError(f"profile {self.name!r}: hour {h} has a negative weight")
            total = sum(row)
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"profile {self.name!r}: hour {h} weights sum to {total!r}, expected 1")

    @property
    def n_hours(self) -> int:
        return len(self.band_weights)

    @property
    def n_bands(self) -> int:
        return len(self.band_weights[0])

    @classmethod
    def flat(
        cls,
        profile_id: int,
        name: str,
        weights: Sequence[float],
        *,
        headway_minutes: float = 45.0,
        duplicate_rate: float = 0.0,
        dropout_rate: float = 0.0,
        n_hours: int = DEFAULT_SCHEME.n_time_bins,
    ) -> "PlantedProfile":
        """Profile with the same band mixture in every hour; ``weights`` are
        normalized, so they may be given in percent."""
        total = float(sum(weights))
        if total <= 0:
            raise ValueError(f"profile {name!r}: weights must have positive mass")
        row = tuple(float(w) / total for w in weights)
        return cls(
            profile_id=profile_id,
            name=name,
            band_weights=(row,) * n_hours,
            headway_minutes=headway_minutes,
            duplicate_rate=duplicate_rate,
            dropout_rate=dropout_rate,
        )


def centered_band_weights(
    mass_by_offset: Mapping[int, float], scheme: BinningScheme = DEFAULT_SCHEME
) -> tuple[float, ...]:
    """Band weight vector from offsets relative to the no-change band.

    Offset 0 is the band containing zero, -1 the next band toward decreases,
    +1 toward increases.
    """
    center = scheme.center_bin
    weights = [0.0] * scheme.n_delay_bins
    for offset, mass in mass_by_offset.items():
        index = center + offset
        if not 0 <= index < scheme.n_delay_bins:
            raise ValueError(f"band offset {offset} falls outside the scheme")
        weights[index] = float(mass)
    return tuple(weights)


def default_archetypes(
    *,
    headway_minutes: float = 45.0,
    duplicate_rate: float = 0.1,
    dropout_rate: float = 0.02,
    scheme: BinningScheme = DEFAULT_SCHEME,
) -> list[PlantedProfile]:
    """Four well-separated behaviors: on-time, creeping increase, strong
    recovery, and slight recovery."""
    shapes = [
        ("on_time", {-2: 4, -1: 12, 0: 67, 1: 12, 2: 4, 3: 1}),
        ("creeping_increase", {-1: 8, 0: 37, 1: 22, 2: 16, 3: 13, 4: 4}),
        ("strong_recovery", {-5: 8, -4: 12, -3: 15, -2: 18, -1: 23, 0: 19, 1: 5}),
        ("slight_recovery", {-2: 14, -1: 40, 0: 30, 1: 10, 2: 6}),
    ]
    return [
        PlantedProfile.flat(
            pid,
            name,
            centered_band_weights(mass, scheme),
            headway_minutes=headway_minutes,
            duplicate_rate=duplicate_rate,
            dropout_rate=dropout_rate,
            n_hours=scheme.n_time_bins,
        )
        for pid, (name, mass) in enumerate(shapes, start=1)
    ]


@dataclass(frozen=True)
class SyntheticLine:
    line_no: str
    vehicle_type: VehicleType
    stop_ids: tuple[str, ...]

    def edges(self) -> list[EdgeKey]:
        return [EdgeKey(a, b) for a, b in zip(self.stop_ids, self.stop_ids[1:])]


@dataclass
class SyntheticNetwork:
    stops: dict[str, Stop]
    lines: list[SyntheticLine]

    @property
    def edges(self) -> list[EdgeKey]:
        return [edge for line in self.lines for edge in line.edges()]


def build_network(n_edges: int, *, stops_per_line: int = 6) -> SyntheticNetwork:
    """Disjoint lines of consecutive stops totalling exactly ``n_edges`` edges.

    Stops sit on a deterministic grid around (51.1, 17.0); lines alternate
    between tram and bus.
    """
    if n_edges < 1:
        raise ValueError("n_edges must be at least 1")
    if stops_per_line < 2:
        raise ValueError("stops_per_line must be at least 2")
    per_line = stops_per_line - 1
    stops: dict[str, Stop] = {}
    lines: list[SyntheticLine] = []
    next_stop = 10001
    remaining = n_edges
    index = 0
    while remaining > 0:
        edge_count = min(per_line, remaining)
        remaining -= edge_count
        row = index % 40
        column = index // 40
        stop_ids = []
        for k in range(edge_count + 1):
            stop_id = str(next_stop)
            next_stop += 1
            stops[stop_id] = Stop(
                stop_id=stop_id,
                latitude=round(51.02 + 0.004 * row, 6),
                longitude=round(16.88 + 0.07 * column + 0.003 * k, 6),
                name=f"Stop {stop_id}",
            )
            stop_ids.append(stop_id)
        tram = index % 2 == 0
        lines.append(
            SyntheticLine(
                line_no=str(index + 1) if tram else str(100 + index),
                vehicle_type=VehicleType.TRAM if tram else VehicleType.BUS,
                stop_ids=tuple(stop_ids),
            )
        )
        index += 1
    return SyntheticNetwork(stops=stops, lines=lines)


def assign_profiles(
    network: SyntheticNetwork, profiles: Sequence[PlantedProfile]
) -> dict[EdgeKey, PlantedProfile]:
    """Round-robin the profiles over the network's lines.

    All edges of a line share one profile, so the line's headway and noise
    rates are unambiguous.
    """
    if not profiles:
        raise ValueError("profiles must be non-empty")
    assignment: dict[EdgeKey, PlantedProfile] = {}
    for index, line in enumerate(network.lines):
        profile = profiles[index % len(profiles)]
        for edge in line.edges():
            assignment[edge] = profile
    return assignment


@dataclass
class SyntheticCorpus:
    daily: list[tuple[date, list[VehicleSnapshot]]]
    truth: dict[EdgeKey, int]
    network: SyntheticNetwork = field(repr=False)

    def all_records(self) -> Iterator[VehicleSnapshot]:
        for _, records in self.daily:
            yield from records

    @property
    def n_records(self) -> int:
        return sum(len(records) for _, records in self.daily)


def _band_bounds_ms(scheme: BinningScheme) -> list[tuple[int, int]]:
    # Open-ended bands get a finite sampling span just past their boundary.
    bounds = []
    for i in range(scheme.n_delay_bins):
        lo = scheme.delay_bin_edges[i]
        hi = scheme.delay_bin_edges[i + 1]
        if math.isinf(lo):
            lo = hi - EXTREME_BAND_SPAN_MINUTES
        if math.isinf(hi):
            hi = lo + EXTREME_BAND_SPAN_MINUTES
        bounds.append((round(lo * _MS_PER_MINUTE), round(hi * _MS_PER_MINUTE)))
    return bounds


def _weekdays(start: date, count: int) -> list[date]:
    days = []
    current = start
    while len(days) < count:
        if current.weekday() < 5:
            days.append(current)
        current += timedelta(days=1)
    return days


def generate_corpus(
    network: SyntheticNetwork,
    profile_assignment: Mapping[EdgeKey, PlantedProfile],
    days: int = 20,
    seed: int = 0,
    *,
    window: ServiceWindow = ServiceWindow(),
    scheme: BinningScheme = DEFAULT_SCHEME,
    start_date: date = DEFAULT_START_DATE,
) -> SyntheticCorpus:
    """Roll out ``days`` weekdays of course traversals over the network.

    Every edge of the network must be assigned a profile. Each course starts
    with a small random initial delay; crossing an edge adds a delay change
    drawn from the edge profile's mixture for the scheduled hour, at
    millisecond granularity, so the planted band is recovered exactly by the
    event extraction. Report times are kept strictly increasing along a
    course even when the delay drops faster than the scheduled hop time.
    Dropped reports still advance the delay state, and a duplicated report
    differs from its original only by a strictly later timestamp.

    Delay deltas come from one random stream and noise decisions from a
    second, so corpora generated from the same seed at different noise rates
    contain the same underlying traversals.
    """
    if days < 1:
        raise ValueError("days must be at least 1")
    missing = [e for e in network.edges if e not in profile_assignment]
    if missing:
        names = ", ".join(str(e) for e in missing[:5])
        raise ValueError(f"{len(missing)} network edges have no profile (first: {names})")
    for edge, profile in profile_assignment.items():
        if profile.n_hours != scheme.n_time_bins:
            raise ValueError(
                f"profile {profile.name!r} on {edge} has {profile.n_hours} hour rows, "
                f"scheme expects {scheme.n_time_bins}"
            )
        if profile.n_bands != scheme.n_delay_bins:
            raise ValueError(
                f"profile {profile.name!r} on {edge} has {profile.n_bands} bands, "
                f"scheme expects {scheme.n_delay_bins}"
            )

    children = np.random.SeedSequence(seed).spawn(2)
    signal_rng = np.random.default_rng(children[0])
    noise_rng = np.random.default_rng(children[1])
    bounds_ms = _band_bounds_ms(scheme)
    # Per-profile cumulative mixture rows; the top is forced past 1 so a
    # uniform draw can never index off the end.
    cdf_cache: dict[int, np.ndarray] = {}
    for profile in profile_assignment.values():
        if id(profile) not in cdf_cache:
            cdf = np.cumsum(np.asarray(profile.band_weights, dtype=np.float64), axis=1)
            cdf[:, -1] = np.inf
            cdf_cache[id(profile)] = cdf

    daily: list[tuple[date, list[VehicleSnapshot]]] = []
    for day_index, day in enumerate(_weekdays(start_date, days)):
        records: list[VehicleSnapshot] = []
        for line_index, line in enumerate(network.lines):
            line_edges = line.edges()
            line_profile = profile_assignment[line_edges[0]]
            duration = (len(line.stop_ids) - 1) * INTER_STOP_MINUTES
            first_start = window.start_hour * 60 + FIRST_RUN_OFFSET_MINUTES
            last_start = window.end_hour * 60 + 59 - duration - END_BUFFER_MINUTES
            if last_start < first_start:
                raise ValueError(f"line {line.line_no}: service window too short for one course")
            start = float(first_start)
            run_index = 0
            while start <= last_start:
                start_minute = int(start)
                course_id = (day_index + 1) * 10_000_000 + (line_index + 1) * 1000 + run_index
                vehicle_id = 1000 * (line_index + 1) + run_index % 13
                delay_ms = int(signal_rng.integers(-60_000, 120_001))
                previous: datetime | None = None
                for k, stop_id in enumerate(line.stop_ids):
                    minute = start_minute + k * INTER_STOP_MINUTES
                    scheduled = datetime.combine(day, time(minute // 60, minute % 60))
                    if k > 0:
                        profile = profile_assignment[line_edges[k - 1]]
                        hour_row = min(
                            max(scheduled.hour - window.start_hour, 0),
                            profile.n_hours - 1,
                        )
                        u = signal_rng.random()
                        band = int(np.searchsorted(cdf_cache[id(profile)][hour_row], u, side="right"))
                        lo_ms, hi_ms = bounds_ms[band]
                        delay_ms += int(signal_rng.integers(lo_ms + 1, hi_ms + 1))
                    reported = (scheduled + timedelta(milliseconds=delay_ms)).replace(microsecond=0)
                    # A vehicle cannot report a later stop at an earlier time.
                    if previous is not None and reported <= previous:
                        reported = previous + timedelta(seconds=1)
                    previous = reported
                    # Noise draws are unconditional so the streams stay aligned
                    # across different rate settings.
                    dropped = noise_rng.random() < line_profile.dropout_rate
                    duplicated = noise_rng.random() < line_profile.duplicate_rate
                    offset = int(noise_rng.integers(5, 31))
                    if dropped:
                        continue
                    snapshot = VehicleSnapshot(
                        course_id=course_id,
                        vehicle_id=vehicle_id,
                        latitude=network.stops[stop_id].latitude,
                        longitude=network.stops[stop_id].longitude,
                        line_no=line.line_no,
                        vehicle_type=line.vehicle_type,
                        direction="1",
                        delay_ms=delay_ms,
                        time=reported,
                        stop_no=stop_id,
                    )
                    records.append(snapshot)
                    if duplicated:
                        records.append(replace(snapshot, time=reported + timedelta(seconds=offset)))
                start += line_profile.headway_minutes
                run_index += 1
        records.sort(key=lambda r: (r.time, r.course_id, r.stop_no))
        daily.append((day, records))

    truth = {edge: profile_assignment[edge].profile_id for edge in network.edges}
    return SyntheticCorpus(daily=daily, truth=truth, network=network)


@dataclass
class CorpusPaths:
    avl_files: tuple[Path, ...]
    gtfs_dir: Path
    truth_path: Path


def write_mini_gtfs(network: SyntheticNetwork, feed_dir: Path | str) -> Path:
    """Write a minimal schedule feed (stops, routes, trips, stop_times) with
    one trip per line; every consecutive stop pair becomes a schedule edge."""
    feed_dir = Path(feed_dir)
    feed_dir.mkdir(parents=True, exist_ok=True)
    with open(feed_dir / "stops.txt", "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["stop_id", "stop_name", "stop_lat", "stop_lon"])
        for stop_id in sorted(network.stops):
            stop = network.stops[stop_id]
            writer.writerow([stop.stop_id, stop.name, repr(stop.latitude), repr(stop.longitude)])
    with open(feed_dir / "routes.txt", "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["route_id", "route_short_name", "route_type"])
        for line in network.lines:
            route_type = 0 if line.vehicle_type is VehicleType.TRAM else 3
            writer.writerow([f"R{line.line_no}", line.line_no, route_type])
    with open(feed_dir / "trips.txt", "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["route_id", "service_id", "trip_id"])
        for line in network.lines:
            writer.writerow([f"R{line.line_no}", "WD", f"T{line.line_no}"])
    with open(feed_dir / "stop_times.txt", "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["trip_id", "arrival_time", "departure_time", "stop_id", "stop_sequence"])
        for line in network.lines:
            for k, stop_id in enumerate(line.stop_ids):
                minute = k * INTER_STOP_MINUTES
                stamp = f"{6 + minute // 60:02d}:{minute % 60:02d}:00"
                writer.writerow([f"T{line.line_no}", stamp, stamp, stop_id, k + 1])
    return feed_dir


def write_ground_truth(truth: Mapping[EdgeKey, int], path: Path | str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["stop_from", "stop_to", "profile_id"])
        for edge in sorted(truth, key=lambda e: (e.stop_from, e.stop_to)):
            writer.writerow([edge.stop_from, edge.stop_to, truth[edge]])


def read_ground_truth(path: Path | str) -> dict[EdgeKey, int]:
    truth: dict[EdgeKey, int] = {}
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        required = {"stop_from", "stop_to", "profile_id"}
        if not required.issubset(reader.fieldnames or ()):
            raise ValueError(f"{path} is not a ground-truth table")
        for row in reader:
            truth[EdgeKey(row["stop_from"], row["stop_to"])] = int(row["profile_id"])
    return truth


def write_corpus(corpus: SyntheticCorpus, out_dir: Path | str) -> CorpusPaths:
    """Write one report file per day plus the schedule feed and the truth table."""
    out_dir = Path(out_dir)
    avl_dir = out_dir / "avl"
    avl_dir.mkdir(parents=True, exist_ok=True)
    avl_files = []
    for day, records in corpus.daily:
        path = avl_dir / f"{day.isoformat()}.jsonl"
        write_snapshots(records, path)
        avl_files.append(path)
    gtfs_dir = write_mini_gtfs(corpus.network, out_dir / "gtfs")
    truth_path = out_dir / "ground_truth.csv"
    write_ground_truth(corpus.truth, truth_path)
    return CorpusPaths(avl_files=tuple(avl_files), gtfs_dir=gtfs_dir, truth_path=truth_path)


def load_profiles(path: Path | str, scheme: BinningScheme = DEFAULT_SCHEME) -> list[PlantedProfile]:
    """Read planted profiles from a JSON list.

    Each entry needs ``profile_id``, ``name``, and either ``band_weights``
    (one row, reused for every hour) or ``band_weights_by_hour``; headway and
    noise rates are optional.
    """
    with open(path, "r", encoding="utf-8") as handle:
        data = json.load(handle)
    if not isinstance(data, list) or not data:
        raise ValueError(f"{path}: expected a non-empty JSON list of profiles")
    profiles = []
    for pos, entry in enumerate(data):
        if not isinstance(entry, dict):
            raise ValueError(f"{path}: entry {pos} is not an object")
        try:
            pid = int(entry["profile_id"])
            name = str(entry["name"])
        except KeyError as exc:
            raise ValueError(f"{path}: entry {pos} is missing {exc.args[0]!r}") from exc
        kwargs = {
            "headway_minutes": float(entry.get("headway_minutes", 45.0)),
            "duplicate_rate": float(entry.get("duplicate_rate", 0.0)),
            "dropout_rate": float(entry.get("dropout_rate", 0.0)),
        }
        if "band_weights_by_hour" in entry:
            rows = tuple(tuple(float(w) for w in row) for row in entry["band_weights_by_hour"])
            profiles.append(PlantedProfile(pid, name, rows, **kwargs))
        elif "band_weights" in entry:
            profiles.append(
                PlantedProfile.flat(
                    pid,
                    name,
                    [float(w) for w in entry["band_weights"]],
                    n_hours=scheme.n_time_bins,
                    **kwargs,
                )
            )
        else:
            raise ValueError(f"{path}: entry {pos} ({name!r}) has no band weights")
    return profiles
