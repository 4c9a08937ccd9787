"""Map and report exports joining cluster labels with stop geometry.

GeoJSON output follows RFC 7946: coordinates are [lon, lat] pairs and each
edge becomes one LineString feature. Feature order, JSON key order, and
float formatting are all fixed so identical inputs produce identical
bytes.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .clustering import ClusterProfile
from .edges import EdgeKey
from .features import DEFAULT_SCHEME, BinningScheme
from .gtfs import Stop


@dataclass(frozen=True)
class EdgeGeometry:
    """One edge resolved to coordinates and enriched with its labels."""

    edge: EdgeKey
    from_coord: tuple[float, float]  # (lat, lon)
    to_coord: tuple[float, float]
    cluster: int
    mode: str  # "b", "t", or "mixed"
    support: int


def resolve_mode(bus_events: int, tram_events: int) -> str:
    if bus_events and tram_events:
        return "mixed"
    if tram_events:
        return "t"
    return "b"


def build_geometries(
    assignment: Mapping[EdgeKey, int],
    stops: Mapping[str, Stop],
    supports: Mapping[EdgeKey, int],
    event_counts: Mapping[EdgeKey, tuple[int, int]] | None = None,
) -> list[EdgeGeometry]:
    """Resolve every assigned edge against the stop map.

    Edges are ordered by key so downstream exports are deterministic.
    Unresolvable stop ids abort with the full list of offenders.
    """
    missing = set()
    for edge in assignment:
        if edge.stop_from not in stops:
            missing.add(edge.stop_from)
        if edge.stop_to not in stops:
            missing.add(edge.stop_to)
    if missing:
        raise ValueError(
            "stop ids missing from the stops table: "
            + ", ".join(sorted(missing))
        )
    out = []
    for edge in sorted(assignment):
        a = stops[edge.stop_from]
        b = stops[edge.stop_to]
        if event_counts and edge in event_counts:
            nb, nt = event_counts[edge]
        else:
            nb, nt = 0, 0
        out.append(
            EdgeGeometry(
                edge=edge,
                from_coord=(a.latitude, a.longitude),
                to_coord=(b.latitude, b.longitude),
                cluster=int(assignment[edge]),
                mode=resolve_mode(nb, nt),
                support=int(supports.get(edge, 0)),
            )
        )
    return out


def export_geojson(
    geometries: Iterable[EdgeGeometry],
    cluster: int | None = None,
    mode: str | None = None,
) -> dict:
    """GeoJSON FeatureCollection of edge LineStrings, optionally filtered.

    Coordinates go out in [lon, lat] order.
    """
    features = []
    for g in geometries:
        if cluster is not None and g.cluster != cluster:
            continue
        if mode is not None and g.mode != mode:
            continue
        features.append(
            {
                "type": "Feature",
                "geometry": {
                    "type": "LineString",
                    "coordinates": [
                        [g.from_coord[1], g.from_coord[0]],
                        [g.to_coord[1], g.to_coord[0]],
                    ],
                },
                "properties": {
                    "cluster": g.cluster,
                    "mode": g.mode,
                    "support": g.support,
                    "stop_from": g.edge.stop_from,
                    "stop_to": g.edge.stop_to,
                },
            }
        )
    return {"type": "FeatureCollection", "features": features}


def write_geojson(path, collection: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(collection, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


_SUMMARY_COLUMNS = (
    "cluster",
    "size",
    "p_no_change",
    "p_increase",
    "p_decrease",
    "pooled_p_no_change",
    "pooled_p_increase",
    "pooled_p_decrease",
    "bus_events",
    "tram_events",
    "dominant_bands",
)


def export_profiles(profiles: Sequence[ClusterProfile], out_dir, scheme: BinningScheme = DEFAULT_SCHEME) -> list[str]:
    """Write the cluster summary CSV plus one matrix grid per cluster.

    The summary lists sizes, the three-way delay split in both edge-mean
    and event-pooled form, and the three highest-likelihood delay bands.
    Matrix dumps are headered text grids (delay band per row, hour per
    column) ready for external heatmap tools. Returns the file names
    written, summary first.
    """
    written = []
    summary_path = os.path.join(str(out_dir), "cluster_summary.csv")
    with open(summary_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(_SUMMARY_COLUMNS) + "\n")
        for p in profiles:
            top = sorted(
                p.band_likelihoods.items(), key=lambda kv: (-kv[1], kv[0])
            )[:3]
            dominant = ";".join(label for label, _ in top)
            fh.write(
                ",".join(
                    [
                        str(p.cluster),
                        str(p.size),
                        repr(p.p_no_change),
                        repr(p.p_increase),
                        repr(p.p_decrease),
                        repr(p.pooled_p_no_change),
                        repr(p.pooled_p_increase),
                        repr(p.pooled_p_decrease),
                        str(p.mode_breakdown.get("bus", 0)),
                        str(p.mode_breakdown.get("tram", 0)),
                        f'"{dominant}"',
                    ]
                )
                + "\n"
            )
    written.append(summary_path)

    hours = scheme.time_bin_edges[:-1]
    for p in profiles:
        grid_path = os.path.join(str(out_dir), f"cluster_{p.cluster}_matrix.txt")
        with open(grid_path, "w", encoding="utf-8") as fh:
            fh.write("delay_band\t" + "\t".join(f"h{h:02d}" for h in hours) + "\n")
            for i in range(scheme.n_delay_bins):
                row = p.mean_matrix[i]
                fh.write(
                    scheme.delay_band_label(i)
                    + "\t"
                    + "\t".join(repr(float(v)) for v in row)
                    + "\n"
                )
        written.append(grid_path)
    return written
