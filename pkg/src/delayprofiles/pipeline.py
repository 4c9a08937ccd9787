"""Manifest-driven orchestration of the full profiling run.

The pipeline turns raw vehicle-report archives plus a schedule feed into
cluster assignments and map layers, persisting every intermediate artifact in
the output directory. A manifest records all parameters and input digests;
re-running reuses any stage whose fingerprint (parameters, inputs, and
upstream fingerprints) is unchanged and whose outputs still exist, so editing
one knob only recomputes from the first affected stage onward.

The manifest's ``created`` field is the only timestamp anywhere in the
artifact directory; everything else is byte-deterministic.
"""

from __future__ import annotations

import glob
import hashlib
import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Mapping

from .clustering import cluster_profile, cut, ward_linkage, write_assignments, write_dendrogram, read_assignments
from .edges import (
    EdgeKey,
    extract_all_courses,
    filter_by_schedule,
    filter_by_support,
    group_by_edge,
    read_events,
    write_events,
)
from .emd import bin_coordinates, ground_distance_matrix, pairwise_distances, write_distances, read_distances
from .export import build_geometries, export_geojson, export_profiles, write_geojson
from .features import BinningScheme, featurize_edges, mode_event_counts, read_features, write_features, write_rejects
from .gtfs import load_schedule_edges, load_stops, read_edge_set, write_edge_set
from .ingest import ServiceWindow, ingest_files, read_snapshots, write_snapshots

__all__ = [
    "PipelineConfig",
    "PipelineError",
    "STAGES",
    "parse_config",
    "load_config",
    "run_pipeline",
    "MANIFEST_NAME",
]

STAGES = ("ingest", "gtfs", "edges", "features", "distances", "cluster", "export")

MANIFEST_NAME = "manifest.json"

# How exact merge-distance ties are resolved; recorded in the manifest so a
# run documents every decision that shapes its dendrogram.
TIE_BREAK_POLICY = "lowest-cluster-id-pair"


class PipelineError(RuntimeError):
    """A stage failed; carries the stage name."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        super().__init__(f"stage {stage!r} failed: {cause}")


@dataclass(frozen=True)
class PipelineConfig:
    """Resolved run parameters.

    ``avl`` holds the expanded input file list; both input settings are
    resolved relative to the config file's directory when loaded from disk.
    """

    avl: tuple[str, ...]
    gtfs: str
    window_start_hour: int = 6
    window_end_hour: int = 20
    weekdays_only: bool = True
    support_threshold: int = 200
    delay_scale: float = 4.0
    surrogate_offset: float = 2.5
    infinite_bin_rule: str = "offset"
    cuts: tuple[int, ...] = (2, 3, 4)
    threads: int | None = None

    def __post_init__(self):
        if not self.avl:
            raise ValueError("config: no input report files")
        if not self.cuts:
            raise ValueError("config: cuts must be non-empty")
        if any(k < 1 for k in self.cuts):
            raise ValueError("config: every cut must be at least 1")

    @property
    def window(self) -> ServiceWindow:
        return ServiceWindow(self.window_start_hour, self.window_end_hour, self.weekdays_only)

    @property
    def scheme(self) -> BinningScheme:
        return BinningScheme.for_window(self.window_start_hour, self.window_end_hour)

    def parameters(self) -> dict:
        """Every tunable decision, for the manifest."""
        return {
            "window_start_hour": self.window_start_hour,
            "window_end_hour": self.window_end_hour,
            "weekdays_only": self.weekdays_only,
            "support_threshold": self.support_threshold,
            "delay_scale": self.delay_scale,
            "surrogate_offset": self.surrogate_offset,
            "infinite_bin_rule": self.infinite_bin_rule,
            "cuts": list(self.cuts),
            "threads": self.threads,
            "tie_break": TIE_BREAK_POLICY,
        }


_BOOL_WORDS = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}

_CONFIG_KEYS = (
    "avl",
    "gtfs",
    "window_start_hour",
    "window_end_hour",
    "weekdays_only",
    "support_threshold",
    "delay_scale",
    "surrogate_offset",
    "infinite_bin_rule",
    "cuts",
    "threads",
)


def _parse_bool(key: str, raw: str) -> bool:
    try:
        return _BOOL_WORDS[raw.strip().lower()]
    except KeyError:
        raise ValueError(f"config: {key} must be true or false, got {raw!r}") from None


def parse_config(text: str, base_dir: Path | str = ".") -> PipelineConfig:
    """Parse the flat ``key = value`` configuration format.

    Blank lines and ``#`` comments are ignored. ``avl`` takes a
    comma-separated list of paths or glob patterns; matching files are
    sorted. Relative paths resolve against ``base_dir``.
    """
    base = Path(base_dir)
    raw: dict[str, str] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"config line {line_no}: expected key = value, got {stripped!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise ValueError(f"config line {line_no}: unknown key {key!r} (known: {', '.join(_CONFIG_KEYS)})")
        if key in raw:
            raise ValueError(f"config line {line_no}: duplicate key {key!r}")
        raw[key] = value.strip()

    for required in ("avl", "gtfs"):
        if required not in raw or not raw[required]:
            raise ValueError(f"config: missing required key {required!r}")

    avl_files: list[str] = []
    for pattern in raw["avl"].split(","):
        pattern = pattern.strip()
        if not pattern:
            continue
        resolved = pattern if os.path.isabs(pattern) else str(base / pattern)
        matches = sorted(glob.glob(resolved))
        if matches:
            avl_files.extend(matches)
        elif glob.has_magic(pattern):
            raise ValueError(f"config: avl pattern {pattern!r} matches no files")
        else:
            # A literal path is kept even if currently absent; the ingest
            # stage reports it properly.
            avl_files.append(resolved)
    gtfs = raw["gtfs"] if os.path.isabs(raw["gtfs"]) else str(base / raw["gtfs"])

    kwargs: dict = {"avl": tuple(avl_files), "gtfs": gtfs}
    if "window_start_hour" in raw:
        kwargs["window_start_hour"] = int(raw["window_start_hour"])
    if "window_end_hour" in raw:
        kwargs["window_end_hour"] = int(raw["window_end_hour"])
    if "weekdays_only" in raw:
        kwargs["weekdays_only"] = _parse_bool("weekdays_only", raw["weekdays_only"])
    if "support_threshold" in raw:
        kwargs["support_threshold"] = int(raw["support_threshold"])
    if "delay_scale" in raw:
        kwargs["delay_scale"] = float(raw["delay_scale"])
    if "surrogate_offset" in raw:
        kwargs["surrogate_offset"] = float(raw["surrogate_offset"])
    if "infinite_bin_rule" in raw:
        kwargs["infinite_bin_rule"] = raw["infinite_bin_rule"]
    if "cuts" in raw:
        kwargs["cuts"] = tuple(int(part) for part in raw["cuts"].split(",") if part.strip())
    if "threads" in raw and raw["threads"]:
        kwargs["threads"] = int(raw["threads"])
    return PipelineConfig(**kwargs)


def load_config(path: Path | str) -> PipelineConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), base_dir=path.parent)


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _digest_input(path: Path) -> str:
    """Digest of a file, or of a directory's sorted (name, content) pairs."""
    if path.is_dir():
        digest = hashlib.sha256()
        for child in sorted(p for p in path.rglob("*") if p.is_file()):
            digest.update(child.relative_to(path).as_posix().encode())
            digest.update(b"\0")
            digest.update(_sha256_file(child).encode())
        return digest.hexdigest()
    return _sha256_file(path)


def _fingerprint(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


@dataclass
class _Run:
    config: PipelineConfig
    out_dir: Path
    avl_digests: list[dict] = field(default_factory=list)
    gtfs_digest: str = ""
    fingerprints: dict[str, str] = field(default_factory=dict)
    stages: dict[str, dict] = field(default_factory=dict)


def _stage_ingest(run: _Run) -> list[str]:
    cfg = run.config
    records, stats = ingest_files(cfg.avl, cfg.window)
    write_snapshots(records, run.out_dir / "records.jsonl")
    with open(run.out_dir / "ingest_stats.json", "w", encoding="utf-8") as fh:
        json.dump(stats.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    return ["records.jsonl", "ingest_stats.json"]


def _stage_gtfs(run: _Run) -> list[str]:
    edge_set = load_schedule_edges(run.config.gtfs)
    write_edge_set(edge_set, run.out_dir / "schedule_edges.csv")
    return ["schedule_edges.csv"]


def _stage_edges(run: _Run) -> list[str]:
    records = read_snapshots([run.out_dir / "records.jsonl"])
    schedule = read_edge_set(run.out_dir / "schedule_edges.csv")
    groups = group_by_edge(extract_all_courses(records))
    groups = filter_by_schedule(groups, schedule)
    groups = filter_by_support(groups, run.config.support_threshold)
    events = [event for g in groups for event in g.events]
    write_events(events, run.out_dir / "events.csv")
    return ["events.csv"]


def _stage_features(run: _Run) -> list[str]:
    groups = group_by_edge(read_events(run.out_dir / "events.csv"))
    scheme = run.config.scheme
    accepted, rejected = featurize_edges(groups, scheme)
    write_features(accepted, run.out_dir / "features.csv", mode_event_counts(groups))
    write_rejects(rejected, run.out_dir / "rejected_edges.csv")
    return ["features.csv", "rejected_edges.csv"]


def _stage_distances(run: _Run) -> list[str]:
    cfg = run.config
    scheme = cfg.scheme
    features, _ = read_features(run.out_dir / "features.csv", scheme)
    if len(features) < 2:
        raise ValueError(f"need at least 2 featurized edges to compare, have {len(features)}")
    coords = bin_coordinates(
        scheme,
        surrogate_offset=cfg.surrogate_offset,
        delay_scale=cfg.delay_scale,
        infinite_bin_rule=cfg.infinite_bin_rule,
    )
    ground = ground_distance_matrix(coords)
    condensed = pairwise_distances(features, ground, n_threads=cfg.threads)
    write_distances(
        run.out_dir / "distances.bin",
        condensed,
        [str(f.edge) for f in features],
        metadata={
            "delay_scale": cfg.delay_scale,
            "surrogate_offset": cfg.surrogate_offset,
            "infinite_bin_rule": cfg.infinite_bin_rule,
        },
    )
    return ["distances.bin"]


def _stage_cluster(run: _Run) -> list[str]:
    values, edge_keys, _ = read_distances(run.out_dir / "distances.bin")
    dendrogram = ward_linkage(values, leaf_keys=edge_keys)
    write_dendrogram(run.out_dir / "dendrogram.json", dendrogram)
    outputs = ["dendrogram.json"]
    for k in run.config.cuts:
        labels = cut(dendrogram, k)
        name = f"assignments_k{k}.csv"
        write_assignments(run.out_dir / name, edge_keys, labels)
        outputs.append(name)
    return outputs


def _stage_export(run: _Run) -> list[str]:
    cfg = run.config
    scheme = cfg.scheme
    stops = load_stops(cfg.gtfs)
    features, modes = read_features(run.out_dir / "features.csv", scheme)
    supports = {f.edge: f.support for f in features}
    outputs: list[str] = []
    for k in cfg.cuts:
        rows = read_assignments(run.out_dir / f"assignments_k{k}.csv")
        assignment = {EdgeKey(a, b): label for a, b, label in rows}
        geometries = build_geometries(assignment, stops, supports, modes)
        geojson_name = f"edges_k{k}.geojson"
        write_geojson(run.out_dir / geojson_name, export_geojson(geometries))
        outputs.append(geojson_name)
        profiles = cluster_profile(
            {f"{e.stop_from}->{e.stop_to}": label for e, label in assignment.items()},
            features,
            event_counts={str(e): counts for e, counts in modes.items()},
            scheme=scheme,
        )
        profile_dir = run.out_dir / f"profiles_k{k}"
        profile_dir.mkdir(exist_ok=True)
        for written in export_profiles(profiles, profile_dir, scheme):
            outputs.append(str(Path(written).relative_to(run.out_dir)))
    return outputs


_STAGE_RUNNERS: Mapping[str, Callable[[_Run], list[str]]] = {
    "ingest": _stage_ingest,
    "gtfs": _stage_gtfs,
    "edges": _stage_edges,
    "features": _stage_features,
    "distances": _stage_distances,
    "cluster": _stage_cluster,
    "export": _stage_export,
}


def _stage_fingerprint(run: _Run, stage: str) -> str:
    cfg = run.config
    window = {
        "window_start_hour": cfg.window_start_hour,
        "window_end_hour": cfg.window_end_hour,
        "weekdays_only": cfg.weekdays_only,
    }
    if stage == "ingest":
        payload = {"inputs": run.avl_digests, **window}
    elif stage == "gtfs":
        payload = {"gtfs": run.gtfs_digest}
    elif stage == "edges":
        payload = {
            "upstream": [run.fingerprints["ingest"], run.fingerprints["gtfs"]],
            "support_threshold": cfg.support_threshold,
        }
    elif stage == "features":
        payload = {"upstream": [run.fingerprints["edges"]], **window}
    elif stage == "distances":
        payload = {
            "upstream": [run.fingerprints["features"]],
            "delay_scale": cfg.delay_scale,
            "surrogate_offset": cfg.surrogate_offset,
            "infinite_bin_rule": cfg.infinite_bin_rule,
        }
    elif stage == "cluster":
        payload = {
            "upstream": [run.fingerprints["distances"]],
            "cuts": list(cfg.cuts),
            "tie_break": TIE_BREAK_POLICY,
        }
    elif stage == "export":
        payload = {
            "upstream": [run.fingerprints["cluster"], run.fingerprints["features"]],
            "gtfs": run.gtfs_digest,
        }
    else:
        raise ValueError(f"unknown stage {stage!r}")
    payload["stage"] = stage
    return _fingerprint(payload)


def run_pipeline(
    config: PipelineConfig | Path | str,
    out_dir: Path | str,
    force: bool = False,
) -> dict:
    """Execute all stages, reusing up-to-date artifacts from ``out_dir``.

    Returns the manifest. ``force`` recomputes every stage regardless of
    what the existing manifest says.
    """
    cfg = config if isinstance(config, PipelineConfig) else load_config(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    run = _Run(config=cfg, out_dir=out)
    try:
        run.avl_digests = [
            {"path": p, "sha256": _digest_input(Path(p))} for p in cfg.avl
        ]
    except OSError as exc:
        raise PipelineError("ingest", exc) from exc
    try:
        run.gtfs_digest = _digest_input(Path(cfg.gtfs))
    except OSError as exc:
        raise PipelineError("gtfs", exc) from exc

    previous: dict[str, dict] = {}
    manifest_path = out / MANIFEST_NAME
    if manifest_path.exists() and not force:
        try:
            with open(manifest_path, "r", encoding="utf-8") as fh:
                previous = json.load(fh).get("stages", {})
        except (OSError, json.JSONDecodeError):
            previous = {}

    def save_manifest() -> dict:
        manifest = {
            "format": "delay-profiles-manifest",
            "version": 1,
            "created": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
            "parameters": cfg.parameters(),
            "inputs": {
                "avl": run.avl_digests,
                "gtfs": {"path": cfg.gtfs, "sha256": run.gtfs_digest},
            },
            "stages": run.stages,
        }
        with open(manifest_path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=2)
            fh.write("\n")
        return manifest

    try:
        for stage in STAGES:
            fingerprint = _stage_fingerprint(run, stage)
            run.fingerprints[stage] = fingerprint
            cached = previous.get(stage)
            if (
                cached is not None
                and cached.get("fingerprint") == fingerprint
                and all((out / name).exists() for name in cached.get("outputs", []))
            ):
                run.stages[stage] = {**cached, "reused": True}
                continue
            try:
                outputs = _STAGE_RUNNERS[stage](run)
            except PipelineError:
                raise
            except Exception as exc:
                raise PipelineError(stage, exc) from exc
            run.stages[stage] = {"fingerprint": fingerprint, "outputs": outputs, "reused": False}
    finally:
        manifest = save_manifest()
    return manifest
