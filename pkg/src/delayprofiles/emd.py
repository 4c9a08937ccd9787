"""Ground distances between histogram bins and exact EMD between edges.

The ground-distance matrix places every (delay band, hour) bin at a 2-D
coordinate: the hour midpoint on the time axis and the delay-band midpoint,
divided by a scale factor, on the delay axis. The two unbounded delay bands
get a finite surrogate midpoint. The Earth Mover's Distance between two
edge feature matrices is then the optimal-transport cost between their
flattened bin masses under the Euclidean distance between bin coordinates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import _solver
from .features import DEFAULT_SCHEME, BinningScheme, EdgeFeatureMatrix
from .validation import (
    MASS_TOLERANCE,
    check_distribution,
    check_feature_stack,
    check_square_distances,
    condensed_size,
)

DEFAULT_DELAY_SCALE = 4.0
DEFAULT_SURROGATE_OFFSET = 2.5
INFINITE_BIN_RULES = ("offset", "boundary")

_FORMAT_NAME = "emd-distances"
_TEXT_EXTENSIONS = (".txt", ".dist", ".tsv")


@dataclass(frozen=True)
class BinCoordinate:
    """Planar position of one histogram bin used for ground distances."""

    time_mid: float
    delay_mid_scaled: float


def _delay_midpoint(lo: float, hi: float, rule: str, offset: float) -> float:
    if math.isinf(lo):
        return hi - offset if rule == "offset" else hi
    if math.isinf(hi):
        return lo + offset if rule == "offset" else lo
    return (lo + hi) / 2.0


def bin_coordinates(
    scheme: BinningScheme = DEFAULT_SCHEME,
    surrogate_offset: float = DEFAULT_SURROGATE_OFFSET,
    delay_scale: float = DEFAULT_DELAY_SCALE,
    infinite_bin_rule: str = "offset",
) -> list[BinCoordinate]:
    """Compute one coordinate per bin, ordered like flattened features.

    Index k maps to delay band k // n_time_bins and hour column
    k % n_time_bins. Finite bands use their true midpoint; the open-ended
    bands use either the boundary extended by ``surrogate_offset`` (rule
    "offset", e.g. +-33.0 for boundaries +-30.5 with the default 2.5) or
    the bare boundary value (rule "boundary"). Delay midpoints are divided
    by ``delay_scale``; hour columns sit at hour + 0.5.
    """
    if delay_scale <= 0:
        raise ValueError(f"delay_scale must be positive, got {delay_scale!r}")
    if infinite_bin_rule not in INFINITE_BIN_RULES:
        raise ValueError(
            f"infinite_bin_rule must be one of {INFINITE_BIN_RULES}, "
            f"got {infinite_bin_rule!r}"
        )
    if surrogate_offset < 0:
        raise ValueError(
            f"surrogate_offset must be non-negative, got {surrogate_offset!r}"
        )
    edges = scheme.delay_bin_edges
    coords = []
    for d in range(scheme.n_delay_bins):
        mid = _delay_midpoint(
            edges[d], edges[d + 1], infinite_bin_rule, surrogate_offset
        )
        scaled = mid / delay_scale
        for hour in scheme.time_bin_edges[:-1]:
            coords.append(BinCoordinate(hour + 0.5, scaled))
    return coords


def ground_distance_matrix(
    coords: Sequence[BinCoordinate] | np.ndarray,
) -> np.ndarray:
    """Euclidean distance between every pair of bin coordinates."""
    if isinstance(coords, np.ndarray):
        pts = np.asarray(coords, dtype=np.float64)
    else:
        pts = np.asarray(
            [
                (c.time_mid, c.delay_mid_scaled)
                if isinstance(c, BinCoordinate)
                else tuple(c)
                for c in coords
            ],
            dtype=np.float64,
        )
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected (n, 2) coordinates, got shape {pts.shape}")
    dt = pts[:, 0, None] - pts[None, :, 0]
    dd = pts[:, 1, None] - pts[None, :, 1]
    return np.hypot(dt, dd)


def _as_flat_distribution(x, name: str, n_bins: int) -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64).ravel()
    if arr.shape[0] != n_bins:
        raise ValueError(
            f"{name} has {arr.shape[0]} bins, ground matrix expects {n_bins}"
        )
    check_distribution(arr, name=name)
    return arr


def emd(a, b, ground: np.ndarray) -> float:
    """Exact Earth Mover's Distance between two bin-mass distributions.

    Both inputs must carry unit mass within tolerance; the ground matrix
    must be a symmetric zero-diagonal distance matrix over the same bins.
    Symmetric by construction: the argument pair is canonically oriented
    before solving, so emd(a, b) and emd(b, a) return the same bits.
    """
    ground = np.ascontiguousarray(ground, dtype=np.float64)
    check_square_distances(ground)
    a = _as_flat_distribution(a, "a", ground.shape[0])
    b = _as_flat_distribution(b, "b", ground.shape[0])
    cost, status = _solver._emd_full(a, b, ground)
    if status != _solver.STATUS_OK:
        raise RuntimeError("EMD solver exceeded its pivot budget")
    return float(cost)


def _as_stack(features) -> np.ndarray:
    if isinstance(features, np.ndarray):
        arr = np.ascontiguousarray(features, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"feature stack must be 2-D, got {arr.ndim}-D")
        return arr
    rows = []
    for f in features:
        rows.append(f.values.ravel() if isinstance(f, EdgeFeatureMatrix) else np.ravel(f))
    if not rows:
        raise ValueError("no features given")
    return np.ascontiguousarray(np.vstack(rows), dtype=np.float64)


def pairwise_distances(features, ground: np.ndarray, n_threads: int | None = None) -> np.ndarray:
    """EMD between every pair of feature rows, in condensed layout.

    Entry order is (0,1), (0,2), ..., (1,2), ... over row indices. Pairs
    are solved independently and each writes its own slot, so the result
    is bit-identical for any ``n_threads``.
    """
    stack = _as_stack(features)
    ground = np.ascontiguousarray(ground, dtype=np.float64)
    check_square_distances(ground)
    if stack.shape[1] != ground.shape[0]:
        raise ValueError(
            f"features have {stack.shape[1]} bins, "
            f"ground matrix expects {ground.shape[0]}"
        )
    check_feature_stack(stack)
    n = stack.shape[0]
    if n < 2:
        raise ValueError("need at least 2 features for pairwise distances")
    ii, jj = np.triu_indices(n, k=1)
    ii = ii.astype(np.int64)
    jj = jj.astype(np.int64)
    out = np.empty(condensed_size(n), dtype=np.float64)
    stat = np.zeros(out.shape[0], dtype=np.int64)

    import numba

    if n_threads is None:
        _solver._pairwise_kernel(stack, ground, ii, jj, out, stat)
    else:
        if n_threads < 1:
            raise ValueError(f"n_threads must be >= 1, got {n_threads}")
        previous = numba.get_num_threads()
        numba.set_num_threads(min(n_threads, numba.config.NUMBA_NUM_THREADS))
        try:
            _solver._pairwise_kernel(stack, ground, ii, jj, out, stat)
        finally:
            numba.set_num_threads(previous)

    bad = np.nonzero(stat)[0]
    if bad.size:
        p = int(bad[0])
        raise RuntimeError(
            f"EMD solver exceeded its pivot budget for pair "
            f"({int(ii[p])}, {int(jj[p])})"
        )
    return out


class EmdPairwiseDistances(TransformerMixin, BaseEstimator):
    """Transformer mapping a feature stack to condensed EMD distances.

    Parameters mirror :func:`bin_coordinates`. ``fit`` builds the ground
    matrix; ``transform`` solves all pairs and returns the condensed
    distance vector.

    Attributes set by fitting/transforming:
      coordinates_ : list of BinCoordinate
      ground_ : (n_bins, n_bins) float array
      distances_ : condensed (n*(n-1)/2,) float array
    """

    def __init__(
        self,
        scheme: BinningScheme = DEFAULT_SCHEME,
        delay_scale: float = DEFAULT_DELAY_SCALE,
        surrogate_offset: float = DEFAULT_SURROGATE_OFFSET,
        infinite_bin_rule: str = "offset",
        n_threads: int | None = None,
    ):
        self.scheme = scheme
        self.delay_scale = delay_scale
        self.surrogate_offset = surrogate_offset
        self.infinite_bin_rule = infinite_bin_rule
        self.n_threads = n_threads

    def fit(self, X=None, y=None):
        self.coordinates_ = bin_coordinates(
            self.scheme,
            surrogate_offset=self.surrogate_offset,
            delay_scale=self.delay_scale,
            infinite_bin_rule=self.infinite_bin_rule,
        )
        self.ground_ = ground_distance_matrix(self.coordinates_)
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "ground_"):
            raise RuntimeError("EmdPairwiseDistances must be fitted before transform")
        self.distances_ = pairwise_distances(X, self.ground_, self.n_threads)
        return self.distances_


def _format_params(metadata: dict | None) -> dict:
    params = dict(metadata or {})
    params.setdefault("time_unit", "hours")
    params.setdefault("delay_unit", "minutes")
    return params


def write_distances(
    path,
    condensed: np.ndarray,
    edge_keys: Sequence[str],
    metadata: dict | None = None,
    binary: bool | None = None,
) -> None:
    """Persist a condensed distance matrix with its edge ordering.

    One JSON header line records n, the edge keys in row order, and the
    layout; values follow either as repr'd decimal text (one per line,
    diffable) or as raw little-endian float64. When ``binary`` is None the
    extension decides: .txt/.dist/.tsv mean text. Both layouts are
    byte-deterministic for identical inputs.
    """
    condensed = np.ascontiguousarray(condensed, dtype=np.float64)
    n = len(edge_keys)
    if condensed.shape != (condensed_size(n),):
        raise ValueError(
            f"{n} edges imply {condensed_size(n)} condensed entries, "
            f"got shape {condensed.shape}"
        )
    path = str(path)
    if binary is None:
        binary = not path.endswith(_TEXT_EXTENSIONS)
    header = {
        "format": _FORMAT_NAME,
        "version": 1,
        "n": n,
        "edges": list(edge_keys),
        "layout": "condensed-upper-row-major",
        "values": "float64-le" if binary else "text",
        "params": _format_params(metadata),
    }
    line = json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n"
    if binary:
        with open(path, "wb") as fh:
            fh.write(line.encode("utf-8"))
            fh.write(condensed.astype("<f8").tobytes())
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(line)
            for v in condensed:
                fh.write(repr(float(v)))
                fh.write("\n")


def read_distances(path) -> tuple[np.ndarray, list[str], dict]:
    """Load a distance file written by :func:`write_distances`.

    Returns (condensed values, edge keys, params).
    """
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValueError(f"{path}: not a distance matrix file") from exc
        if header.get("format") != _FORMAT_NAME:
            raise ValueError(f"{path}: unrecognized format {header.get('format')!r}")
        edges = [str(e) for e in header["edges"]]
        expected = condensed_size(len(edges))
        if header["values"] == "float64-le":
            payload = fh.read()
            values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
        else:
            text = fh.read().decode("utf-8")
            values = np.array(
                [float(tok) for tok in text.split()], dtype=np.float64
            )
    if values.shape[0] != expected:
        raise ValueError(
            f"{path}: expected {expected} values for {len(edges)} edges, "
            f"found {values.shape[0]}"
        )
    return values, edges, dict(header.get("params", {}))
