"""Transit delay-change profiling: ingest, featurize, compare, cluster.

The package turns archived vehicle-position snapshots into per-edge
delay-change histograms, measures edge similarity with exact Earth Mover's
Distances over a configurable ground metric, and groups edges into delay
profiles with Ward-linkage agglomerative clustering.
"""

from .clustering import (
    ClusterProfile,
    Dendrogram,
    Merge,
    WardClustering,
    cluster_profile,
    cut,
    ward_linkage,
)
from .edges import (
    DEFAULT_SUPPORT_THRESHOLD,
    DelayChangeEvent,
    EdgeKey,
    EdgeObservations,
    extract_all_courses,
    extract_delay_changes,
    filter_by_schedule,
    filter_by_support,
    group_by_edge,
    support_sweep,
)
from .emd import (
    BinCoordinate,
    EmdPairwiseDistances,
    bin_coordinates,
    emd,
    ground_distance_matrix,
    pairwise_distances,
)
from .features import (
    DEFAULT_SCHEME,
    BinningScheme,
    DelayHistogramFeaturizer,
    EdgeFeatureMatrix,
    build_histogram,
    delay_bin_index,
    featurize_edges,
    normalize_counts,
    time_bin_index,
)
from .export import EdgeGeometry, build_geometries, export_geojson, export_profiles, resolve_mode
from .gtfs import ScheduleEdgeSet, Stop, load_schedule_edges, load_stops
from .ingest import (
    IngestStats,
    ServiceWindow,
    VehicleSnapshot,
    VehicleType,
    deduplicate,
    filter_service_window,
    ingest_files,
    parse_snapshot_record,
    read_snapshots,
    write_snapshots,
)
from .pipeline import PipelineConfig, PipelineError, load_config, run_pipeline
from .synth import PlantedProfile, build_network, default_archetypes, generate_corpus

__version__ = "0.1.0"

__all__ = [
    "BinCoordinate",
    "BinningScheme",
    "ClusterProfile",
    "DEFAULT_SCHEME",
    "DEFAULT_SUPPORT_THRESHOLD",
    "DelayChangeEvent",
    "DelayHistogramFeaturizer",
    "Dendrogram",
    "EdgeFeatureMatrix",
    "EdgeGeometry",
    "EdgeKey",
    "EdgeObservations",
    "EmdPairwiseDistances",
    "IngestStats",
    "Merge",
    "PipelineConfig",
    "PipelineError",
    "PlantedProfile",
    "ScheduleEdgeSet",
    "ServiceWindow",
    "Stop",
    "VehicleSnapshot",
    "VehicleType",
    "WardClustering",
    "bin_coordinates",
    "build_geometries",
    "build_histogram",
    "build_network",
    "cluster_profile",
    "cut",
    "deduplicate",
    "default_archetypes",
    "delay_bin_index",
    "emd",
    "export_geojson",
    "export_profiles",
    "extract_all_courses",
    "extract_delay_changes",
    "featurize_edges",
    "filter_by_schedule",
    "filter_by_support",
    "filter_service_window",
    "generate_corpus",
    "group_by_edge",
    "ground_distance_matrix",
    "ingest_files",
    "load_config",
    "load_schedule_edges",
    "load_stops",
    "normalize_counts",
    "pairwise_distances",
    "parse_snapshot_record",
    "read_snapshots",
    "resolve_mode",
    "run_pipeline",
    "support_sweep",
    "time_bin_index",
    "ward_linkage",
    "write_snapshots",
]
