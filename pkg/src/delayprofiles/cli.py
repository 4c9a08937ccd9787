"""Command-line entry points for the delay-profiling toolchain.

Each stage is exposed as a subcommand operating on files, so partial runs
and inspection are easy; ``run`` drives the whole pipeline from a config
file, and ``synth`` produces test corpora with known ground truth.
"""

from __future__ import annotations

import glob
import sys
from pathlib import Path

import click

from . import synth as synthmod
from .clustering import cluster_profile, cut, ward_linkage, write_assignments, write_dendrogram
from .edges import (
    extract_all_courses,
    filter_by_schedule,
    filter_by_support,
    group_by_edge,
    read_events,
    support_sweep,
    write_events,
)
from .emd import bin_coordinates, ground_distance_matrix, pairwise_distances, read_distances, write_distances
from .export import export_profiles
from .features import BinningScheme, featurize_edges, mode_event_counts, read_features, write_features, write_rejects
from .gtfs import load_schedule_edges, read_edge_set, write_edge_set
from .ingest import ServiceWindow, ingest_files, read_snapshots, write_snapshots
from .pipeline import PipelineError, run_pipeline


def _parse_window(value: str, weekdays_only: bool) -> ServiceWindow:
    """``6:21`` means hours 6 through 20 inclusive (21 is the open end)."""
    try:
        start_text, end_text = value.split(":")
        start, end = int(start_text), int(end_text)
    except ValueError:
        raise click.BadParameter(f"expected START:END hours, got {value!r}")
    if not 0 <= start < end <= 24:
        raise click.BadParameter(f"need 0 <= start < end <= 24, got {value!r}")
    return ServiceWindow(start, end - 1, weekdays_only)


def _parse_cuts(value: str) -> tuple[int, ...]:
    try:
        cuts = tuple(int(part) for part in value.split(",") if part.strip())
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {value!r}")
    if not cuts:
        raise click.BadParameter("no cut sizes given")
    return cuts


def _expand_inputs(patterns: tuple[str, ...]) -> list[str]:
    files: list[str] = []
    for pattern in patterns:
        matches = sorted(glob.glob(pattern))
        if matches:
            files.extend(matches)
        elif glob.has_magic(pattern):
            raise click.ClickException(f"pattern {pattern!r} matches no files")
        else:
            files.append(pattern)
    return files


_window_option = click.option(
    "--window",
    default="6:21",
    show_default=True,
    help="Hour range START:END (END exclusive) the analysis is restricted to.",
)


@click.group()
@click.version_option(package_name="delayprofiles")
def main():
    """Stop-to-stop delay-change profiling from vehicle-report archives."""


@main.command()
@click.option("--input", "inputs", multiple=True, required=True, help="Report archive file or glob; repeatable.")
@click.option("--output", required=True, type=click.Path(dir_okay=False), help="Deduplicated in-window records.")
@_window_option
@click.option("--weekdays-only/--all-days", default=True, show_default=True)
def ingest(inputs, output, window, weekdays_only):
    """Parse, deduplicate, and window-filter report archives."""
    service_window = _parse_window(window, weekdays_only)
    files = _expand_inputs(inputs)
    try:
        records, stats = ingest_files(files, service_window)
    except (OSError, ValueError) as exc:
        raise click.ClickException(str(exc))
    write_snapshots(records, output)
    click.echo(
        f"{stats.total_records} records read, {stats.unique_records} unique, "
        f"{stats.window_records} in window, {stats.parse_errors} parse errors -> {output}"
    )


@main.command("gtfs-edges")
@click.option("--feed", required=True, type=click.Path(exists=True), help="GTFS feed directory or zip.")
@click.option("--output", required=True, type=click.Path(dir_okay=False), help="Directed edge table.")
def gtfs_edges(feed, output):
    """Derive scheduled consecutive-stop edges from a GTFS feed."""
    try:
        edge_set = load_schedule_edges(feed)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    write_edge_set(edge_set, output)
    click.echo(f"{len(edge_set.edges)} edges ({len(edge_set.mandatory_edges)} mandatory) -> {output}")


@main.command("extract-edges")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True), help="Ingested records file.")
@click.option("--schedule", required=True, type=click.Path(exists=True), help="Edge table from gtfs-edges.")
@click.option("--min-support", default=200, show_default=True, help="Keep edges with strictly more events.")
@click.option("--output", required=True, type=click.Path(dir_okay=False), help="Per-event table.")
@click.option("--sweep", default=None, help="Also print edge counts for these comma-separated thresholds.")
def extract_edges(input_path, schedule, min_support, output, sweep):
    """Extract per-edge delay-change events, validated against the schedule."""
    try:
        records = read_snapshots([input_path])
        edge_set = read_edge_set(schedule)
        groups = filter_by_schedule(group_by_edge(extract_all_courses(records)), edge_set)
        if sweep is not None:
            for threshold, count in support_sweep(groups, _parse_cuts(sweep)):
                click.echo(f"support>{threshold}: {count} edges")
        surviving = filter_by_support(groups, min_support)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    events = [event for g in surviving for event in g.events]
    write_events(events, output)
    click.echo(f"{len(surviving)} of {len(groups)} edges kept at support>{min_support}, {len(events)} events -> {output}")


@main.command()
@click.option("--events", "events_path", required=True, type=click.Path(exists=True))
@click.option("--output", required=True, type=click.Path(dir_okay=False), help="Normalized feature table.")
@click.option("--rejects", required=True, type=click.Path(dir_okay=False), help="Edges rejected with reasons.")
@_window_option
def featurize(events_path, output, rejects, window):
    """Bin events into normalized delay-band x hour matrices."""
    scheme = BinningScheme.for_window(*_window_bounds(window))
    try:
        groups = group_by_edge(read_events(events_path))
        accepted, rejected = featurize_edges(groups, scheme)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    write_features(accepted, output, mode_event_counts(groups))
    write_rejects(rejected, rejects)
    click.echo(f"{len(accepted)} edges featurized, {len(rejected)} rejected -> {output}")


def _window_bounds(window: str) -> tuple[int, int]:
    parsed = _parse_window(window, True)
    return parsed.start_hour, parsed.end_hour


@main.command()
@click.option("--features", "features_path", required=True, type=click.Path(exists=True))
@click.option("--delay-scale", default=4.0, show_default=True, help="Divisor applied to the delay axis.")
@click.option("--surrogate-offset", default=2.5, show_default=True, help="Midpoint offset for the open-ended bands.")
@click.option("--infinite-bin-rule", default="offset", show_default=True, type=click.Choice(["offset", "boundary"]))
@click.option("--output", required=True, type=click.Path(dir_okay=False), help="Distance file (.txt/.dist/.tsv for text, anything else binary).")
@click.option("--threads", default=None, type=int, help="Worker threads for the pairwise solve.")
@_window_option
def distances(features_path, delay_scale, surrogate_offset, infinite_bin_rule, output, threads, window):
    """Exact pairwise transport distances between edge features."""
    scheme = BinningScheme.for_window(*_window_bounds(window))
    try:
        features, _ = read_features(features_path, scheme)
        if len(features) < 2:
            raise ValueError(f"need at least 2 edges to compare, have {len(features)}")
        coords = bin_coordinates(
            scheme,
            surrogate_offset=surrogate_offset,
            delay_scale=delay_scale,
            infinite_bin_rule=infinite_bin_rule,
        )
        ground = ground_distance_matrix(coords)
        condensed = pairwise_distances(features, ground, n_threads=threads)
    except (ValueError, RuntimeError) as exc:
        raise click.ClickException(str(exc))
    write_distances(
        output,
        condensed,
        [str(f.edge) for f in features],
        metadata={
            "delay_scale": delay_scale,
            "surrogate_offset": surrogate_offset,
            "infinite_bin_rule": infinite_bin_rule,
        },
    )
    click.echo(f"{len(features)} edges, {condensed.size} pairs -> {output}")


@main.command()
@click.option("--distances", "distances_path", required=True, type=click.Path(exists=True))
@click.option("--cuts", default="2,3,4", show_default=True, help="Comma-separated cluster counts to cut at.")
@click.option("--features", "features_path", required=True, type=click.Path(exists=True))
@click.option("--output-dir", required=True, type=click.Path(file_okay=False))
@_window_option
def cluster(distances_path, cuts, features_path, output_dir, window):
    """Agglomerate edges over a precomputed distance file and cut the tree."""
    cut_sizes = _parse_cuts(cuts)
    scheme = BinningScheme.for_window(*_window_bounds(window))
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        values, edge_keys, _ = read_distances(distances_path)
        features, modes = read_features(features_path, scheme)
        dendrogram = ward_linkage(values, leaf_keys=edge_keys)
        write_dendrogram(out / "dendrogram.json", dendrogram)
        inversions = dendrogram.inversions()
        if inversions:
            click.echo(f"note: {len(inversions)} height inversions in the dendrogram")
        for k in cut_sizes:
            labels = cut(dendrogram, k)
            write_assignments(out / f"assignments_k{k}.csv", edge_keys, labels)
            profiles = cluster_profile(
                dict(zip(edge_keys, (int(v) for v in labels))),
                features,
                event_counts={str(e): counts for e, counts in modes.items()},
                scheme=scheme,
            )
            profile_dir = out / f"profiles_k{k}"
            profile_dir.mkdir(exist_ok=True)
            export_profiles(profiles, profile_dir, scheme)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"dendrogram over {dendrogram.n_leaves} edges, cuts {','.join(map(str, cut_sizes))} -> {out}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--force", is_flag=True, help="Recompute every stage even if artifacts are current.")
def run(config_path, out_dir, force):
    """Run the full pipeline from a config file, reusing current artifacts."""
    try:
        manifest = run_pipeline(config_path, out_dir, force=force)
    except (PipelineError, ValueError) as exc:
        raise click.ClickException(str(exc))
    reused = [s for s, entry in manifest["stages"].items() if entry.get("reused")]
    computed = [s for s in manifest["stages"] if s not in reused]
    if reused:
        click.echo(f"reused: {', '.join(reused)}")
    click.echo(f"computed: {', '.join(computed) if computed else 'nothing (all current)'}")
    click.echo(f"manifest -> {Path(out_dir) / 'manifest.json'}")


@main.command()
@click.option("--edges", "n_edges", required=True, type=int, help="Total directed edges in the network.")
@click.option("--profiles", "profiles_path", default=None, type=click.Path(exists=True, dir_okay=False), help="JSON profile definitions; defaults to four built-in archetypes.")
@click.option("--days", default=20, show_default=True, help="Weekdays of traffic to generate.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def synth(n_edges, profiles_path, days, seed, out_dir):
    """Generate a synthetic corpus with planted per-edge delay profiles."""
    try:
        if profiles_path is not None:
            profiles = synthmod.load_profiles(profiles_path)
        else:
            profiles = synthmod.default_archetypes()
        network = synthmod.build_network(n_edges)
        assignment = synthmod.assign_profiles(network, profiles)
        corpus = synthmod.generate_corpus(network, assignment, days=days, seed=seed)
        paths = synthmod.write_corpus(corpus, out_dir)
    except (OSError, ValueError) as exc:
        raise click.ClickException(str(exc))
    click.echo(
        f"{corpus.n_records} records over {len(paths.avl_files)} days, "
        f"{len(network.edges)} edges, truth -> {paths.truth_path}"
    )


if __name__ == "__main__":
    sys.exit(main())
