"""Per-edge delay-change histograms and their two-stage normalization.

Each edge's events are discretized on two axes: signed delay change in
minutes (fine one-minute bins near zero, five-minute bins further out, open
bins at the extremes) and hour of day (one column per service-window hour).
Counts are first normalized per hour column, so busy and quiet hours weigh
equally, then the whole grid is normalized to unit mass. Edges with an empty
hour column are rejected, since the per-column stage is undefined there.
"""

from __future__ import annotations

import csv
from bisect import bisect_left
from dataclasses import dataclass
from datetime import datetime
from math import inf, isfinite
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .edges import EdgeKey, EdgeObservations
from .ingest import VehicleType

MS_PER_MINUTE = 60_000.0

# Signed delay-change boundaries in minutes: one-minute bins spanning
# (-5.5, 5.5], five-minute bins out to +/-30.5, open bins beyond.
_FIVE_MINUTE_SIDE = (30.5, 25.5, 20.5, 15.5, 10.5)
_ONE_MINUTE_SIDE = (5.5, 4.5, 3.5, 2.5, 1.5, 0.5)
DEFAULT_DELAY_EDGES = (
    (-inf,)
    + tuple(-b for b in _FIVE_MINUTE_SIDE)
    + tuple(-b for b in _ONE_MINUTE_SIDE)
    + tuple(reversed(_ONE_MINUTE_SIDE))
    + tuple(reversed(_FIVE_MINUTE_SIDE))
    + (inf,)
)


@dataclass(frozen=True)
class BinningScheme:
    """Half-open (lo, hi] bins over delay change (minutes) and hour of day.

    ``delay_bin_edges`` includes the -inf/+inf sentinels; ``time_bin_edges``
    are integer hour boundaries, one column per hour.
    """

    delay_bin_edges: tuple[float, ...] = DEFAULT_DELAY_EDGES
    time_bin_edges: tuple[int, ...] = tuple(range(6, 22))

    def __post_init__(self):
        if len(self.delay_bin_edges) < 3:
            raise ValueError("need at least two delay bins")
        if self.delay_bin_edges[0] != -inf or self.delay_bin_edges[-1] != inf:
            raise ValueError("delay_bin_edges must start at -inf and end at +inf")
        interior = self.delay_bin_edges[1:-1]
        if any(not isfinite(x) for x in interior):
            raise ValueError("interior delay boundaries must be finite")
        if any(a >= b for a, b in zip(self.delay_bin_edges, self.delay_bin_edges[1:])):
            raise ValueError("delay_bin_edges must be strictly increasing")
        if len(self.time_bin_edges) < 2:
            raise ValueError("need at least one time bin")
        if any(a >= b for a, b in zip(self.time_bin_edges, self.time_bin_edges[1:])):
            raise ValueError("time_bin_edges must be strictly increasing")

    @property
    def n_delay_bins(self) -> int:
        return len(self.delay_bin_edges) - 1

    @property
    def n_time_bins(self) -> int:
        return len(self.time_bin_edges) - 1

    @property
    def n_bins(self) -> int:
        return self.n_delay_bins * self.n_time_bins

    @property
    def start_hour(self) -> int:
        return self.time_bin_edges[0]

    @property
    def center_bin(self) -> int:
        """Index of the no-change bin, the one whose interval contains 0."""
        return delay_bin_index(0.0, self)

    def delay_band_label(self, index: int) -> str:
        lo = self.delay_bin_edges[index]
        hi = self.delay_bin_edges[index + 1]
        left = "(-inf" if lo == -inf else f"({lo:g}"
        right = "inf)" if hi == inf else f"{hi:g}]"
        return f"{left},{right}"

    @classmethod
    def for_window(cls, start_hour: int, end_hour: int) -> "BinningScheme":
        """Hourly columns covering an inclusive [start_hour, end_hour] window."""
        return cls(time_bin_edges=tuple(range(start_hour, end_hour + 2)))


DEFAULT_SCHEME = BinningScheme()


def delay_bin_index(delta_minutes: float, scheme: BinningScheme = DEFAULT_SCHEME) -> int:
    """Index of the (lo, hi] delay bin containing ``delta_minutes``."""
    if not isfinite(delta_minutes):
        raise ValueError(f"delay change must be finite, got {delta_minutes!r}")
    return bisect_left(scheme.delay_bin_edges, delta_minutes, 1, len(scheme.delay_bin_edges) - 1) - 1


def time_bin_index(t: datetime, scheme: BinningScheme = DEFAULT_SCHEME) -> int:
    """Hourly column index of a timestamp; raises outside the scheme's hours."""
    index = t.hour - scheme.time_bin_edges[0]
    if not 0 <= index < scheme.n_time_bins:
        raise ValueError(
            f"timestamp {t} is outside binned hours "
            f"[{scheme.time_bin_edges[0]}, {scheme.time_bin_edges[-1]})"
        )
    return index


def build_histogram(obs: EdgeObservations, scheme: BinningScheme = DEFAULT_SCHEME) -> np.ndarray:
    """Count events per (delay bin, hour bin) cell; total equals the support."""
    counts = np.zeros((scheme.n_delay_bins, scheme.n_time_bins), dtype=np.int64)
    for event in obs.events:
        i = delay_bin_index(event.delay_delta_ms / MS_PER_MINUTE, scheme)
        try:
            j = time_bin_index(event.observed_at, scheme)
        except ValueError as exc:
            raise ValueError(f"edge {obs.edge}: {exc}") from exc
        counts[i, j] += 1
    return counts


def normalize_counts(counts: np.ndarray) -> np.ndarray | None:
    """Two-stage normalization; None marks a rejected grid (empty hour column).

    Stage one divides each cell by its column total, stage two divides by the
    grand total, so the result has unit mass and uniform column mass.
    """
    counts = np.asarray(counts, dtype=np.float64)
    column_sums = counts.sum(axis=0)
    if np.any(column_sums == 0.0):
        return None
    per_column = counts / column_sums[np.newaxis, :]
    return per_column / per_column.sum()


@dataclass
class EdgeFeatureMatrix:
    edge: EdgeKey
    values: np.ndarray
    support: int


def featurize_edges(
    groups: Iterable[EdgeObservations], scheme: BinningScheme = DEFAULT_SCHEME
) -> tuple[list[EdgeFeatureMatrix], list[tuple[EdgeKey, str]]]:
    """Build normalized feature matrices; rejected edges come back with a reason."""
    accepted: list[EdgeFeatureMatrix] = []
    rejected: list[tuple[EdgeKey, str]] = []
    for obs in groups:
        counts = build_histogram(obs, scheme)
        values = normalize_counts(counts)
        if values is None:
            empty = np.flatnonzero(counts.sum(axis=0) == 0)
            hours = ";".join(str(scheme.time_bin_edges[j]) for j in empty)
            rejected.append((obs.edge, f"empty_hour_columns:{hours}"))
            continue
        accepted.append(EdgeFeatureMatrix(obs.edge, values, obs.support))
    return accepted, rejected


def mode_event_counts(groups: Iterable[EdgeObservations]) -> dict[EdgeKey, tuple[int, int]]:
    """Per-edge (bus, tram) event counts, for mode labeling downstream."""
    out: dict[EdgeKey, tuple[int, int]] = {}
    for obs in groups:
        bus = sum(1 for e in obs.events if e.vehicle_type is VehicleType.BUS)
        out[obs.edge] = (bus, obs.support - bus)
    return out


class DelayHistogramFeaturizer(TransformerMixin, BaseEstimator):
    """Transform edge observations into stacked flattened feature matrices.

    ``transform`` returns an array of shape (n_accepted_edges, n_bins) in
    row-major (delay-bin major) order and records the accepted edge keys,
    supports, per-edge mode counts and rejections on the estimator.
    """

    def __init__(self, scheme: BinningScheme = DEFAULT_SCHEME):
        self.scheme = scheme

    def fit(self, X: Sequence[EdgeObservations], y=None):
        return self

    def transform(self, X: Sequence[EdgeObservations]) -> np.ndarray:
        features, rejected = featurize_edges(X, self.scheme)
        modes = mode_event_counts(X)
        self.edge_keys_ = [f.edge for f in features]
        self.supports_ = np.array([f.support for f in features], dtype=np.int64)
        self.mode_counts_ = {f.edge: modes[f.edge] for f in features}
        self.rejected_ = rejected
        if not features:
            return np.empty((0, self.scheme.n_bins), dtype=np.float64)
        return np.stack([f.values.reshape(-1) for f in features])


def write_features(
    features: Sequence[EdgeFeatureMatrix],
    path: Path | str,
    mode_counts: dict[EdgeKey, tuple[int, int]] | None = None,
) -> None:
    """Write one row per edge: key, support, mode counts, flattened values."""
    n_bins = features[0].values.size if features else DEFAULT_SCHEME.n_bins
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["stop_from", "stop_to", "support", "bus_events", "tram_events"]
            + [f"v{i:03d}" for i in range(n_bins)]
        )
        for f in features:
            bus, tram = (mode_counts or {}).get(f.edge, (0, 0))
            writer.writerow(
                [f.edge.stop_from, f.edge.stop_to, f.support, bus, tram]
                + [repr(v) for v in f.values.reshape(-1).tolist()]
            )


def read_features(
    path: Path | str, scheme: BinningScheme = DEFAULT_SCHEME
) -> tuple[list[EdgeFeatureMatrix], dict[EdgeKey, tuple[int, int]]]:
    features: list[EdgeFeatureMatrix] = []
    modes: dict[EdgeKey, tuple[int, int]] = {}
    shape = (scheme.n_delay_bins, scheme.n_time_bins)
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        n_bins = len(header) - 5
        if n_bins != scheme.n_bins:
            raise ValueError(f"{path} has {n_bins} value columns, scheme expects {scheme.n_bins}")
        for row in reader:
            edge = EdgeKey(row[0], row[1])
            values = np.array([float(v) for v in row[5:]], dtype=np.float64).reshape(shape)
            features.append(EdgeFeatureMatrix(edge, values, int(row[2])))
            modes[edge] = (int(row[3]), int(row[4]))
    return features, modes


def write_rejects(rejected: Sequence[tuple[EdgeKey, str]], path: Path | str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["stop_from", "stop_to", "reason"])
        for edge, reason in rejected:
            writer.writerow([edge.stop_from, edge.stop_to, reason])
