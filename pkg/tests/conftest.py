from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from delayprofiles import synth
from delayprofiles.features import DEFAULT_SCHEME, normalize_counts

settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

# One line per acceptance criterion, echoed after the run so the verdicts
# survive pytest's output capture.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_counts(rng: np.random.Generator, empty_cols: int = 0) -> np.ndarray:
    """Random count grid; every hour column populated unless asked otherwise."""
    shape = (DEFAULT_SCHEME.n_delay_bins, DEFAULT_SCHEME.n_time_bins)
    counts = rng.integers(0, 40, size=shape)
    for col in range(shape[1]):
        if counts[:, col].sum() == 0:
            counts[rng.integers(0, shape[0]), col] = 1
    if empty_cols:
        for col in rng.choice(shape[1], size=empty_cols, replace=False):
            counts[:, col] = 0
    return counts


def random_feature_grid(rng: np.random.Generator) -> np.ndarray:
    values = normalize_counts(random_counts(rng))
    assert values is not None
    return values


@pytest.fixture(scope="session")
def warm_solver():
    """Trigger the jitted pairwise kernel once so timings exclude compilation."""
    from delayprofiles.emd import bin_coordinates, ground_distance_matrix, pairwise_distances

    rng = np.random.default_rng(0)
    stack = np.stack([random_feature_grid(rng).ravel() for _ in range(2)])
    ground = ground_distance_matrix(bin_coordinates())
    pairwise_distances(stack, ground)
    return ground


@pytest.fixture(scope="session")
def tiny_corpus_dir(tmp_path_factory):
    """A 20-edge, 3-day synthetic corpus written to disk once per session."""
    out = tmp_path_factory.mktemp("corpus")
    network = synth.build_network(20)
    profiles = synth.default_archetypes()
    assignment = synth.assign_profiles(network, profiles)
    corpus = synth.generate_corpus(network, assignment, days=3, seed=5)
    paths = synth.write_corpus(corpus, out)
    return out, paths
