from __future__ import annotations

import json
from pathlib import Path

import pytest

from delayprofiles.pipeline import (
    MANIFEST_NAME,
    STAGES,
    PipelineConfig,
    PipelineError,
    load_config,
    parse_config,
    run_pipeline,
)


def test_config_minimal_defaults(tmp_path):
    (tmp_path / "a.jsonl").write_text("")
    (tmp_path / "gtfs").mkdir()
    cfg = parse_config("avl = a.jsonl\ngtfs = gtfs\n", tmp_path)
    assert cfg.avl == (str(tmp_path / "a.jsonl"),)
    assert cfg.gtfs == str(tmp_path / "gtfs")
    assert cfg.window_start_hour == 6
    assert cfg.window_end_hour == 20
    assert cfg.weekdays_only is True
    assert cfg.support_threshold == 200
    assert cfg.delay_scale == 4.0
    assert cfg.surrogate_offset == 2.5
    assert cfg.infinite_bin_rule == "offset"
    assert cfg.cuts == (2, 3, 4)
    assert cfg.threads is None


def test_config_full_parse(tmp_path):
    for name in ("one.jsonl", "two.jsonl"):
        (tmp_path / name).write_text("")
    text = """
    # comment line
    avl = *.jsonl
    gtfs = feed.zip

    window_start_hour = 7
    window_end_hour = 19
    weekdays_only = false
    support_threshold = 120
    delay_scale = 2.0
    surrogate_offset = 1.5
    infinite_bin_rule = boundary
    cuts = 3,5
    threads = 2
    """
    cfg = parse_config(text, tmp_path)
    assert [Path(p).name for p in cfg.avl] == ["one.jsonl", "two.jsonl"]
    assert cfg.window.start_hour == 7
    assert cfg.window.end_hour == 19
    assert cfg.weekdays_only is False
    assert cfg.support_threshold == 120
    assert cfg.cuts == (3, 5)
    assert cfg.threads == 2
    assert cfg.scheme.n_time_bins == 13


@pytest.mark.parametrize(
    "text,match",
    [
        ("avl = a\ngtfs = g\nwat = 1\n", "unknown key 'wat'"),
        ("avl = a\navl = b\ngtfs = g\n", "duplicate key"),
        ("gtfs = g\n", "missing required key 'avl'"),
        ("avl = a\n", "missing required key 'gtfs'"),
        ("avl = a\ngtfs = g\nnonsense\n", "expected key = value"),
        ("avl = a\ngtfs = g\nweekdays_only = maybe\n", "must be true or false"),
        ("avl = missing*.jsonl\ngtfs = g\n", "matches no files"),
        ("avl = a\ngtfs = g\ncuts = 0,2\n", "at least 1"),
        ("avl = a\ngtfs = g\ncuts = ,\n", "non-empty"),
    ],
)
def test_config_errors(tmp_path, text, match):
    with pytest.raises(ValueError, match=match):
        parse_config(text, tmp_path)


def test_config_keeps_literal_missing_path(tmp_path):
    # A literal (non-glob) path that does not exist yet is kept; the run
    # itself reports it when ingest tries to read it.
    cfg = parse_config("avl = later.jsonl\ngtfs = g\n", tmp_path)
    assert cfg.avl == (str(tmp_path / "later.jsonl"),)


def test_load_config_resolves_relative_to_file(tmp_path):
    (tmp_path / "data").mkdir()
    (tmp_path / "data" / "d1.jsonl").write_text("")
    conf = tmp_path / "run.conf"
    conf.write_text("avl = data/*.jsonl\ngtfs = data\n")
    cfg = load_config(conf)
    assert cfg.avl == (str(tmp_path / "data" / "d1.jsonl"),)


def corpus_config(tiny_corpus_dir, support=50, **overrides):
    _, paths = tiny_corpus_dir
    kwargs = {
        "avl": tuple(str(p) for p in paths.avl_files),
        "gtfs": str(paths.gtfs_dir),
        "support_threshold": support,
        "cuts": (2, 4),
    }
    kwargs.update(overrides)
    return PipelineConfig(**kwargs)


def artifact_bytes(out_dir: Path) -> dict[str, bytes]:
    out = {}
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and p.name != MANIFEST_NAME:
            out[str(p.relative_to(out_dir))] = p.read_bytes()
    return out


def test_full_run_produces_all_artifacts(tmp_path, tiny_corpus_dir):
    cfg = corpus_config(tiny_corpus_dir)
    out = tmp_path / "run"
    manifest = run_pipeline(cfg, out)
    assert set(manifest["stages"]) == set(STAGES)
    assert all(not s["reused"] for s in manifest["stages"].values())
    for name in (
        "records.jsonl",
        "ingest_stats.json",
        "schedule_edges.csv",
        "events.csv",
        "features.csv",
        "rejected_edges.csv",
        "distances.bin",
        "dendrogram.json",
        "assignments_k2.csv",
        "assignments_k4.csv",
        "edges_k2.geojson",
        "edges_k4.geojson",
        "profiles_k2/cluster_summary.csv",
        "profiles_k4/cluster_summary.csv",
        MANIFEST_NAME,
    ):
        assert (out / name).exists(), name
    params = manifest["parameters"]
    for key in (
        "window_start_hour",
        "window_end_hour",
        "weekdays_only",
        "support_threshold",
        "delay_scale",
        "surrogate_offset",
        "infinite_bin_rule",
        "cuts",
        "threads",
        "tie_break",
    ):
        assert key in params, key
    assert manifest["inputs"]["gtfs"]["sha256"]
    assert len(manifest["inputs"]["avl"]) == len(cfg.avl)


def test_rerun_reuses_everything(tmp_path, tiny_corpus_dir):
    cfg = corpus_config(tiny_corpus_dir)
    out = tmp_path / "run"
    run_pipeline(cfg, out)
    before = artifact_bytes(out)
    manifest = run_pipeline(cfg, out)
    assert all(s["reused"] for s in manifest["stages"].values())
    assert artifact_bytes(out) == before


def test_independent_runs_byte_identical(tmp_path, tiny_corpus_dir):
    cfg = corpus_config(tiny_corpus_dir)
    one, two = tmp_path / "one", tmp_path / "two"
    run_pipeline(cfg, one)
    run_pipeline(cfg, two)
    assert artifact_bytes(one) == artifact_bytes(two)


def test_threshold_change_recomputes_downstream_only(tmp_path, tiny_corpus_dir):
    out = tmp_path / "run"
    run_pipeline(corpus_config(tiny_corpus_dir, support=50), out)
    manifest = run_pipeline(corpus_config(tiny_corpus_dir, support=30), out)
    reused = {name for name, s in manifest["stages"].items() if s["reused"]}
    assert reused == {"ingest", "gtfs"}


def test_force_recomputes_all(tmp_path, tiny_corpus_dir):
    cfg = corpus_config(tiny_corpus_dir)
    out = tmp_path / "run"
    run_pipeline(cfg, out)
    manifest = run_pipeline(cfg, out, force=True)
    assert all(not s["reused"] for s in manifest["stages"].values())


def test_missing_output_triggers_recompute(tmp_path, tiny_corpus_dir):
    cfg = corpus_config(tiny_corpus_dir)
    out = tmp_path / "run"
    run_pipeline(cfg, out)
    (out / "distances.bin").unlink()
    manifest = run_pipeline(cfg, out)
    assert manifest["stages"]["distances"]["reused"] is False
    assert manifest["stages"]["cluster"]["reused"] is True


def test_missing_gtfs_names_stage(tmp_path, tiny_corpus_dir):
    cfg = corpus_config(tiny_corpus_dir, gtfs=str(tmp_path / "nope"))
    with pytest.raises(PipelineError, match="stage 'gtfs' failed") as info:
        run_pipeline(cfg, tmp_path / "run")
    assert info.value.stage == "gtfs"


def test_missing_avl_names_stage(tmp_path, tiny_corpus_dir):
    cfg = corpus_config(tiny_corpus_dir, avl=(str(tmp_path / "nope.jsonl"),))
    with pytest.raises(PipelineError) as info:
        run_pipeline(cfg, tmp_path / "run")
    assert info.value.stage == "ingest"


def test_too_few_edges_names_distances_stage(tmp_path, tiny_corpus_dir):
    # An absurd threshold filters every edge out; failure surfaces at the
    # distances stage with the manifest still written for the stages done.
    cfg = corpus_config(tiny_corpus_dir, support=10_000_000)
    out = tmp_path / "run"
    with pytest.raises(PipelineError) as info:
        run_pipeline(cfg, out)
    assert info.value.stage == "distances"
    manifest = json.loads((out / MANIFEST_NAME).read_text())
    assert "features" in manifest["stages"]
    assert "distances" not in manifest["stages"]


def test_manifest_created_is_only_timestamp(tmp_path, tiny_corpus_dir):
    cfg = corpus_config(tiny_corpus_dir)
    out = tmp_path / "run"
    manifest = run_pipeline(cfg, out)
    assert "created" in manifest
    without_created = json.loads((out / MANIFEST_NAME).read_text())
    without_created.pop("created")
    redo = run_pipeline(cfg, out)
    redo_doc = json.loads((out / MANIFEST_NAME).read_text())
    redo_doc.pop("created")
    for name, stage in redo_doc["stages"].items():
        stage.pop("reused")
        without_created["stages"][name].pop("reused")
    assert redo_doc == without_created


def test_config_validation_in_constructor():
    with pytest.raises(ValueError, match="no input"):
        PipelineConfig(avl=(), gtfs="g")
    with pytest.raises(ValueError, match="cuts must be non-empty"):
        PipelineConfig(avl=("a",), gtfs="g", cuts=())
