from __future__ import annotations

from datetime import datetime
from math import inf, nextafter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from delayprofiles.edges import DelayChangeEvent, EdgeKey, EdgeObservations
from delayprofiles.features import (
    DEFAULT_SCHEME,
    BinningScheme,
    DelayHistogramFeaturizer,
    EdgeFeatureMatrix,
    build_histogram,
    delay_bin_index,
    featurize_edges,
    mode_event_counts,
    normalize_counts,
    read_features,
    time_bin_index,
    write_features,
    write_rejects,
)
from delayprofiles.ingest import VehicleType

from conftest import random_counts
from oracles import recount_histogram


def make_event(delta_minutes, hour, vehicle_type=VehicleType.BUS, minute=15):
    return DelayChangeEvent(
        edge=EdgeKey("A", "B"),
        delay_delta_ms=int(round(delta_minutes * 60_000)),
        observed_at=datetime(2017, 3, 6, hour, minute, 0),
        course_id=1,
        vehicle_type=vehicle_type,
        line_no="9",
    )


def make_obs(deltas, hours):
    events = [make_event(d, h) for d, h in zip(deltas, hours)]
    return EdgeObservations(EdgeKey("A", "B"), events)


def test_default_grid_shape():
    assert DEFAULT_SCHEME.n_delay_bins == 23
    assert DEFAULT_SCHEME.n_time_bins == 15
    assert DEFAULT_SCHEME.n_bins == 345
    assert DEFAULT_SCHEME.center_bin == 11


def test_delay_edges_are_symmetric():
    edges = DEFAULT_SCHEME.delay_bin_edges
    assert edges[0] == -inf and edges[-1] == inf
    interior = edges[1:-1]
    assert interior == tuple(-x for x in reversed(interior))
    assert interior[0] == -30.5 and interior[-1] == 30.5


@pytest.mark.parametrize("boundary", DEFAULT_SCHEME.delay_bin_edges[1:-1])
def test_every_boundary_closes_the_lower_bin(boundary):
    # (lo, hi] bins: a value exactly on a boundary lands in the bin whose
    # upper edge it is, and the next float above crosses over.
    edges = DEFAULT_SCHEME.delay_bin_edges
    at = delay_bin_index(boundary)
    above = delay_bin_index(nextafter(boundary, inf))
    assert edges[at + 1] == boundary
    assert above == at + 1


@pytest.mark.parametrize(
    "delta,expected_label",
    [
        (-4000.0, "(-inf,-30.5]"),
        (-30.5, "(-inf,-30.5]"),
        (0.0, "(-0.5,0.5]"),
        (0.5, "(-0.5,0.5]"),
        (0.50001, "(0.5,1.5]"),
        (30.5, "(25.5,30.5]"),
        (31.0, "(30.5,inf)"),
        (4000.0, "(30.5,inf)"),
    ],
)
def test_delay_bin_spot_checks(delta, expected_label):
    i = delay_bin_index(delta)
    assert DEFAULT_SCHEME.delay_band_label(i) == expected_label


def test_non_finite_delta_rejected():
    with pytest.raises(ValueError, match="finite"):
        delay_bin_index(float("nan"))
    with pytest.raises(ValueError, match="finite"):
        delay_bin_index(inf)


def test_time_bins_cover_service_window():
    assert time_bin_index(datetime(2017, 3, 6, 6, 0, 0)) == 0
    assert time_bin_index(datetime(2017, 3, 6, 20, 59, 59)) == 14
    with pytest.raises(ValueError, match="outside binned hours"):
        time_bin_index(datetime(2017, 3, 6, 21, 0, 0))
    with pytest.raises(ValueError, match="outside binned hours"):
        time_bin_index(datetime(2017, 3, 6, 5, 59, 59))


def test_for_window_matches_manual_edges():
    scheme = BinningScheme.for_window(6, 20)
    assert scheme == DEFAULT_SCHEME
    narrow = BinningScheme.for_window(7, 9)
    assert narrow.n_time_bins == 3
    assert narrow.time_bin_edges == (7, 8, 9, 10)


@pytest.mark.parametrize(
    "kwargs,match",
    [
        ({"delay_bin_edges": (-inf, inf)}, "at least two delay bins"),
        ({"delay_bin_edges": (-1.0, 0.0, 1.0)}, "start at -inf"),
        ({"delay_bin_edges": (-inf, 1.0, 0.5, inf)}, "strictly increasing"),
        ({"time_bin_edges": (6,)}, "at least one time bin"),
        ({"time_bin_edges": (6, 6)}, "strictly increasing"),
    ],
)
def test_scheme_validation(kwargs, match):
    with pytest.raises(ValueError, match=match):
        BinningScheme(**kwargs)


def test_histogram_matches_bruteforce_recount():
    rng = np.random.default_rng(3)
    deltas = rng.uniform(-40, 40, size=400).tolist()
    hours = rng.integers(6, 21, size=400).tolist()
    counts = build_histogram(make_obs(deltas, hours))
    expected = recount_histogram(
        deltas, hours, DEFAULT_SCHEME.delay_bin_edges, 6, 20
    )
    assert counts.sum() == 400
    np.testing.assert_array_equal(counts, expected)


def test_histogram_error_names_edge():
    obs = make_obs([1.0], [23])
    with pytest.raises(ValueError, match="edge A->B"):
        build_histogram(obs)


def test_normalization_unit_mass_and_uniform_columns():
    rng = np.random.default_rng(11)
    values = normalize_counts(random_counts(rng))
    assert values is not None
    assert values.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(values.sum(axis=0), 1.0 / 15.0, atol=1e-12)


def test_normalization_ignores_per_column_scale():
    # Multiplying any hour column by an integer factor changes nothing:
    # stage one divides it right back out. Bit-for-bit equal.
    rng = np.random.default_rng(12)
    counts = random_counts(rng)
    scaled = counts.copy()
    scaled[:, 4] *= 7
    scaled[:, 11] *= 3
    a = normalize_counts(counts)
    b = normalize_counts(scaled)
    assert np.array_equal(a, b)


def test_empty_hour_column_rejects_grid():
    rng = np.random.default_rng(13)
    counts = random_counts(rng)
    counts[:, 8] = 0
    assert normalize_counts(counts) is None


@given(st.integers(0, 2**32 - 1))
def test_normalization_invariants_hold(seed):
    rng = np.random.default_rng(seed)
    values = normalize_counts(random_counts(rng))
    assert abs(values.sum() - 1.0) <= 1e-9
    assert np.all(np.abs(values.sum(axis=0) - 1.0 / 15.0) <= 1e-9)
    assert np.all(values >= 0.0)


def test_featurize_reports_rejections_with_hours():
    good = make_obs([0.0] * 15, list(range(6, 21)))
    hours = [h for h in range(6, 21) if h not in (9, 17)]
    bad = EdgeObservations(
        EdgeKey("X", "Y"), [make_event(0.0, h) for h in hours]
    )
    bad = EdgeObservations(EdgeKey("X", "Y"), bad.events)
    accepted, rejected = featurize_edges([good, bad])
    assert [f.edge for f in accepted] == [EdgeKey("A", "B")]
    assert rejected == [(EdgeKey("X", "Y"), "empty_hour_columns:9;17")]
    assert accepted[0].support == 15


def test_mode_event_counts_split():
    events = [make_event(0.0, 8, VehicleType.BUS) for _ in range(3)]
    events += [make_event(0.0, 9, VehicleType.TRAM) for _ in range(2)]
    obs = EdgeObservations(EdgeKey("A", "B"), events)
    assert mode_event_counts([obs]) == {EdgeKey("A", "B"): (3, 2)}


def test_featurizer_estimator_stacks_rows():
    obs = make_obs([0.0] * 15, list(range(6, 21)))
    est = DelayHistogramFeaturizer()
    X = est.fit(None).transform([obs])
    assert X.shape == (1, 345)
    assert est.edge_keys_ == [EdgeKey("A", "B")]
    assert est.supports_.tolist() == [15]
    assert est.rejected_ == []
    # Flattening is delay-bin major: row i covers values[i, :].
    values = featurize_edges([obs])[0][0].values
    np.testing.assert_array_equal(X[0], values.reshape(-1))
    assert est.get_params() == {"scheme": DEFAULT_SCHEME}


def test_featurizer_empty_input():
    est = DelayHistogramFeaturizer()
    X = est.fit(None).transform([])
    assert X.shape == (0, 345)


def test_features_roundtrip_exactly(tmp_path):
    rng = np.random.default_rng(21)
    features = [
        EdgeFeatureMatrix(EdgeKey("A", "B"), normalize_counts(random_counts(rng)), 321),
        EdgeFeatureMatrix(EdgeKey("B", "C"), normalize_counts(random_counts(rng)), 250),
    ]
    modes = {EdgeKey("A", "B"): (300, 21), EdgeKey("B", "C"): (0, 250)}
    path = tmp_path / "features.csv"
    write_features(features, path, modes)
    back, back_modes = read_features(path)
    assert back_modes == modes
    for orig, loaded in zip(features, back):
        assert loaded.edge == orig.edge
        assert loaded.support == orig.support
        # repr() roundtrips float64 exactly
        assert np.array_equal(loaded.values, orig.values)


def test_read_features_checks_column_count(tmp_path):
    path = tmp_path / "features.csv"
    path.write_text("stop_from,stop_to,support,bus_events,tram_events,v000\nA,B,1,1,0,1.0\n")
    with pytest.raises(ValueError, match="value columns"):
        read_features(path)


def test_write_rejects_format(tmp_path):
    path = tmp_path / "rejects.csv"
    write_rejects([(EdgeKey("A", "B"), "empty_hour_columns:9")], path)
    assert path.read_text() == (
        "stop_from,stop_to,reason\nA,B,empty_hour_columns:9\n"
    )
