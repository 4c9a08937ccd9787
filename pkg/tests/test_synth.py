from __future__ import annotations

import json

import pytest

from delayprofiles.edges import EdgeKey, extract_all_courses
from delayprofiles.features import DEFAULT_SCHEME
from delayprofiles.gtfs import load_schedule_edges, load_stops
from delayprofiles.ingest import ServiceWindow, VehicleType, deduplicate
from delayprofiles.synth import (
    PlantedProfile,
    assign_profiles,
    build_network,
    centered_band_weights,
    default_archetypes,
    generate_corpus,
    load_profiles,
    read_ground_truth,
    write_corpus,
    write_ground_truth,
    write_mini_gtfs,
)


def one_band_profile(offset=0, **kwargs):
    return PlantedProfile.flat(
        1, "single", centered_band_weights({offset: 1.0}), **kwargs
    )


def content_key(r):
    return (
        r.course_id,
        r.vehicle_id,
        r.line_no,
        r.direction,
        r.stop_no,
        r.delay_ms,
        r.latitude,
        r.longitude,
        r.vehicle_type,
    )


def test_network_shape_and_modes():
    network = build_network(12, stops_per_line=6)
    assert len(network.edges) == 12
    assert len(network.lines) == 3
    assert [line.vehicle_type for line in network.lines] == [
        VehicleType.TRAM,
        VehicleType.BUS,
        VehicleType.TRAM,
    ]
    # Lines are stop-disjoint, so every edge belongs to exactly one line.
    all_stops = [s for line in network.lines for s in line.stop_ids]
    assert len(all_stops) == len(set(all_stops))
    assert build_network(7).lines[-1].stop_ids[-1:]  # ragged last line is fine
    with pytest.raises(ValueError, match="at least 1"):
        build_network(0)


def test_assignment_is_round_robin_per_line():
    network = build_network(10, stops_per_line=3)
    profiles = default_archetypes()
    assignment = assign_profiles(network, profiles)
    for index, line in enumerate(network.lines):
        expected = profiles[index % 4]
        for edge in line.edges():
            assert assignment[edge] is expected
    with pytest.raises(ValueError, match="non-empty"):
        assign_profiles(network, [])


def test_profile_validation():
    with pytest.raises(ValueError, match="headway"):
        one_band_profile(headway_minutes=0.0)
    with pytest.raises(ValueError, match="duplicate_rate"):
        one_band_profile(duplicate_rate=1.0)
    with pytest.raises(ValueError, match="sum to"):
        PlantedProfile(1, "bad", ((0.5, 0.4),))
    with pytest.raises(ValueError, match="negative"):
        PlantedProfile(1, "bad", ((1.5, -0.5),))
    with pytest.raises(ValueError, match="positive mass"):
        PlantedProfile.flat(1, "bad", [0.0, 0.0])
    with pytest.raises(ValueError, match="outside the scheme"):
        centered_band_weights({40: 1.0})


def test_archetypes_are_normalized():
    for profile in default_archetypes():
        assert profile.n_hours == 15
        assert profile.n_bands == 23
        for row in profile.band_weights:
            assert sum(row) == pytest.approx(1.0, abs=1e-9)


def tiny_corpus(**kwargs):
    network = build_network(1, stops_per_line=2)
    profile = one_band_profile(**kwargs.pop("profile_kwargs", {}))
    assignment = assign_profiles(network, [profile])
    return generate_corpus(network, assignment, days=1, seed=3, **kwargs)


def test_zero_noise_courses_hit_the_planted_band():
    # One edge, headway 45, one day: every course contributes exactly one
    # event, and with a single-band profile every delta lands in it.
    corpus = tiny_corpus()
    records = list(corpus.all_records())
    events = extract_all_courses(records)
    courses = {r.course_id for r in records}
    assert len(records) == 2 * len(courses)
    assert len(events) == len(courses)
    for event in events:
        # Center band is (-0.5, 0.5] minutes.
        assert -30_000 < event.delay_delta_ms <= 30_000


def test_planted_offset_band_recovered_exactly():
    network = build_network(1, stops_per_line=2)
    corpus = generate_corpus(
        network, assign_profiles(network, [one_band_profile(3)]), days=1, seed=3
    )
    for event in extract_all_courses(list(corpus.all_records())):
        # Offset +3 band is (2.5, 3.5] minutes.
        assert 150_000 < event.delay_delta_ms <= 210_000


def test_same_seed_reproduces_bytes(tmp_path):
    network = build_network(4, stops_per_line=3)
    assignment = assign_profiles(network, default_archetypes())
    a = generate_corpus(network, assignment, days=2, seed=11)
    b = generate_corpus(network, assignment, days=2, seed=11)
    assert a.daily == b.daily
    pa = write_corpus(a, tmp_path / "one")
    pb = write_corpus(b, tmp_path / "two")
    for fa, fb in zip(pa.avl_files, pb.avl_files):
        assert fa.read_bytes() == fb.read_bytes()
    c = generate_corpus(network, assignment, days=2, seed=12)
    assert c.daily != a.daily


def test_duplicates_only_add_later_copies():
    network = build_network(2, stops_per_line=3)
    clean_profile = one_band_profile()
    noisy_profile = PlantedProfile.flat(
        1, "single", centered_band_weights({0: 1.0}), duplicate_rate=0.5
    )
    clean = generate_corpus(network, assign_profiles(network, [clean_profile]), days=2, seed=7)
    noisy = generate_corpus(network, assign_profiles(network, [noisy_profile]), days=2, seed=7)
    assert noisy.n_records > clean.n_records
    # Deduplication keeps the earliest copy and recovers the clean corpus.
    for (day_a, recs_clean), (day_b, recs_noisy) in zip(clean.daily, noisy.daily):
        assert day_a == day_b
        deduped, _ = deduplicate(recs_noisy)
        key = lambda r: (r.time, r.course_id, r.stop_no)
        assert sorted(deduped, key=key) == sorted(recs_clean, key=key)
        # Same underlying traversals: content keys match exactly.
        assert {content_key(r) for r in recs_noisy} == {
            content_key(r) for r in recs_clean
        }


def test_dropout_removes_reports_but_keeps_delay_state():
    network = build_network(1, stops_per_line=6)
    lossy = PlantedProfile.flat(
        1, "single", centered_band_weights({0: 1.0}), dropout_rate=0.3
    )
    clean = generate_corpus(network, assign_profiles(network, [one_band_profile()]), days=1, seed=9)
    noisy = generate_corpus(network, assign_profiles(network, [lossy]), days=1, seed=9)
    assert noisy.n_records < clean.n_records
    clean_by_key = {content_key(r) for r in clean.all_records()}
    for r in noisy.all_records():
        assert content_key(r) in clean_by_key


def test_report_times_monotone_per_course():
    network = build_network(3, stops_per_line=4)
    profile = one_band_profile(-5)  # strong recovery forces time clamping
    corpus = generate_corpus(network, assign_profiles(network, [profile]), days=1, seed=1)
    by_course: dict[int, list] = {}
    for r in corpus.all_records():
        by_course.setdefault(r.course_id, []).append(r)
    for records in by_course.values():
        records.sort(key=lambda r: r.stop_no)
        times = [r.time for r in sorted(records, key=lambda r: r.time)]
        assert all(a < b for a, b in zip(times, times[1:]))


def test_event_volume_tracks_headway():
    # 15-hour window, headway 45: about 20 courses per edge per day.
    corpus = tiny_corpus()
    events = extract_all_courses(list(corpus.all_records()))
    assert 15 <= len(events) <= 25


def test_records_lie_inside_service_window():
    corpus = tiny_corpus()
    window = ServiceWindow()
    for record in corpus.all_records():
        assert window.contains(record.time)


def test_weekdays_only():
    network = build_network(1, stops_per_line=2)
    assignment = assign_profiles(network, [one_band_profile()])
    corpus = generate_corpus(network, assignment, days=7, seed=0)
    assert len(corpus.daily) == 7
    assert all(day.weekday() < 5 for day, _ in corpus.daily)
    # 2017-03-06 is a Monday; seven weekdays span to the next Tuesday.
    assert corpus.daily[0][0].isoformat() == "2017-03-06"
    assert corpus.daily[-1][0].isoformat() == "2017-03-14"


def test_generation_validates_inputs():
    network = build_network(2, stops_per_line=3)
    assignment = assign_profiles(network, [one_band_profile()])
    with pytest.raises(ValueError, match="days"):
        generate_corpus(network, assignment, days=0)
    with pytest.raises(ValueError, match="no profile"):
        generate_corpus(network, {}, days=1)
    short = PlantedProfile.flat(1, "short", centered_band_weights({0: 1.0}), n_hours=3)
    with pytest.raises(ValueError, match="hour rows"):
        generate_corpus(network, {e: short for e in network.edges}, days=1)


def test_mini_gtfs_loads_and_covers_all_edges(tmp_path):
    network = build_network(5, stops_per_line=4)
    feed = write_mini_gtfs(network, tmp_path / "gtfs")
    stops = load_stops(feed)
    assert set(stops) == set(network.stops)
    schedule = load_schedule_edges(feed)
    expected = {(e.stop_from, e.stop_to) for e in network.edges}
    assert schedule.edges == expected
    assert schedule.mandatory_edges == expected


def test_ground_truth_roundtrip(tmp_path):
    truth = {EdgeKey("10001", "10002"): 1, EdgeKey("10002", "10003"): 4}
    path = tmp_path / "truth.csv"
    write_ground_truth(truth, path)
    assert read_ground_truth(path) == truth
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="ground-truth"):
        read_ground_truth(bad)


def test_corpus_files_layout(tmp_path):
    network = build_network(2, stops_per_line=3)
    corpus = generate_corpus(
        network, assign_profiles(network, [one_band_profile()]), days=2, seed=0
    )
    paths = write_corpus(corpus, tmp_path / "corpus")
    assert [p.name for p in paths.avl_files] == ["2017-03-06.jsonl", "2017-03-07.jsonl"]
    assert paths.gtfs_dir.is_dir()
    assert read_ground_truth(paths.truth_path) == corpus.truth


def test_load_profiles_variants(tmp_path):
    flat = [0.0] * 23
    flat[11] = 60.0
    flat[12] = 40.0
    by_hour = [[0.0] * 23 for _ in range(15)]
    for row in by_hour:
        row[11] = 1.0
    doc = [
        {"profile_id": 1, "name": "flat", "band_weights": flat, "duplicate_rate": 0.2},
        {"profile_id": 2, "name": "hourly", "band_weights_by_hour": by_hour},
    ]
    path = tmp_path / "profiles.json"
    path.write_text(json.dumps(doc))
    profiles = load_profiles(path)
    assert [p.profile_id for p in profiles] == [1, 2]
    assert profiles[0].band_weights[0][11] == pytest.approx(0.6)
    assert profiles[0].duplicate_rate == 0.2
    assert profiles[1].n_hours == 15

    path.write_text(json.dumps([{"profile_id": 3, "name": "none"}]))
    with pytest.raises(ValueError, match="no band weights"):
        load_profiles(path)
    path.write_text("{}")
    with pytest.raises(ValueError, match="non-empty JSON list"):
        load_profiles(path)
