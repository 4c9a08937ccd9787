"""Ward-linkage agglomerative clustering over precomputed distances.

The linkage works directly on a condensed distance matrix via the
Lance-Williams recurrence, so it never needs the original feature vectors.
Squared distances are maintained internally; reported merge heights are
their square roots. Cluster ids follow the usual convention: leaves are
0..n-1 and the merge at step k creates id n+k. Exact ties are broken by
the lexicographically smallest (left, right) id pair, which makes the
whole merge sequence deterministic.

Ward's variance interpretation assumes Euclidean inputs; applied to EMD
values it is a heuristic, and merge heights are therefore not guaranteed
monotone. Inversions are detected and reported, never reordered.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from .edges import EdgeKey
from .features import DEFAULT_SCHEME, BinningScheme, EdgeFeatureMatrix
from .validation import as_condensed

_DENDROGRAM_FORMAT = "dendrogram"


@dataclass(frozen=True)
class Merge:
    """One agglomeration step: clusters `left` and `right` joined at `height`."""

    left: int
    right: int
    height: float
    new_size: int


@dataclass(frozen=True)
class Dendrogram:
    n_leaves: int
    merges: tuple[Merge, ...]
    leaf_keys: tuple[str, ...]

    def __post_init__(self):
        if len(self.merges) != self.n_leaves - 1:
            raise ValueError(
                f"{self.n_leaves} leaves need {self.n_leaves - 1} merges, "
                f"got {len(self.merges)}"
            )
        if len(self.leaf_keys) != self.n_leaves:
            raise ValueError("leaf_keys length does not match n_leaves")

    def inversions(self) -> list[int]:
        """Indices of merges whose height drops below the previous one."""
        out = []
        for i in range(1, len(self.merges)):
            if self.merges[i].height < self.merges[i - 1].height:
                out.append(i)
        return out


def _pair_from_condensed(p: int, n: int) -> tuple[int, int]:
    # invert the canonical (i<j) linear index by walking row lengths
    i = 0
    row = n - 1
    while p >= row:
        p -= row
        i += 1
        row -= 1
    return i, i + 1 + p


def ward_linkage(dist, leaf_keys: Sequence[str] | None = None) -> Dendrogram:
    """Cluster a condensed (or square) distance matrix with Ward linkage.

    After merging clusters s and t into u, the distance to every other
    cluster v follows d(u,v)^2 = ((n_v+n_s) d(v,s)^2 + (n_v+n_t) d(v,t)^2
    - n_v d(s,t)^2) / (n_v+n_s+n_t). The closest pair merges first; exact
    ties resolve to the smallest (left, right) id pair.
    """
    d, n = as_condensed(np.asarray(dist, dtype=np.float64))
    if n < 2:
        raise ValueError("need at least 2 leaves to cluster")
    finite = np.isfinite(d)
    if not finite.all():
        p = int(np.nonzero(~finite)[0][0])
        i, j = _pair_from_condensed(p, n)
        raise ValueError(f"non-finite distance between leaves {i} and {j}")
    if leaf_keys is None:
        leaf_keys = [str(i) for i in range(n)]
    elif len(leaf_keys) != n:
        raise ValueError(
            f"got {len(leaf_keys)} leaf keys for {n} leaves"
        )

    # squared distances; diagonal poisoned so the minimum is always a pair
    S = np.zeros((n, n), dtype=np.float64)
    iu = np.triu_indices(n, k=1)
    sq = d * d
    S[iu] = sq
    S[(iu[1], iu[0])] = sq
    np.fill_diagonal(S, np.inf)

    ids = np.arange(n, dtype=np.int64)
    sizes = np.ones(n, dtype=np.int64)
    na = n
    merges: list[Merge] = []

    for step in range(n - 1):
        A = S[:na, :na]
        M = A.min()
        ps, qs = np.nonzero(A == M)
        best: tuple[int, int, int, int] | None = None
        for x, y in zip(ps.tolist(), qs.tolist()):
            if x >= y:
                continue
            ida = int(ids[x])
            idb = int(ids[y])
            lo, hi = (ida, idb) if ida < idb else (idb, ida)
            if best is None or (lo, hi) < (best[0], best[1]):
                best = (lo, hi, x, y)
        assert best is not None
        lo, hi, p, q = best

        ns = int(sizes[p])
        nt = int(sizes[q])
        merges.append(Merge(lo, hi, math.sqrt(float(M)), ns + nt))

        nv = sizes[:na].astype(np.float64)
        dvs = S[p, :na]
        dvt = S[q, :na]
        new = ((nv + ns) * dvs + (nv + nt) * dvt - nv * float(M)) / (nv + ns + nt)
        new[p] = np.inf
        S[p, :na] = new
        S[:na, p] = new
        ids[p] = n + step
        sizes[p] = ns + nt

        last = na - 1
        if q != last:
            S[q, :na] = S[last, :na]
            S[:na, q] = S[:na, last]
            S[q, q] = np.inf
            ids[q] = ids[last]
            sizes[q] = sizes[last]
        na -= 1

    return Dendrogram(n, tuple(merges), tuple(str(k) for k in leaf_keys))


def cut(dendrogram: Dendrogram, k: int) -> np.ndarray:
    """Labels from undoing the last k-1 merges.

    Returns one 1-based label per leaf, in leaf order; clusters are
    numbered by their first (lowest-index) member leaf.
    """
    n = dendrogram.n_leaves
    if not 1 <= k <= n:
        raise ValueError(f"k must be in 1..{n}, got {k}")
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    for step in range(n - k):
        m = dendrogram.merges[step]
        try:
            merged = members.pop(m.left) + members.pop(m.right)
        except KeyError as exc:
            raise ValueError(
                f"merge {step} references unknown cluster id {exc.args[0]}"
            ) from None
        members[n + step] = merged
    roots = sorted(members, key=lambda cid: min(members[cid]))
    labels = np.empty(n, dtype=np.int64)
    for label, cid in enumerate(roots, start=1):
        labels[members[cid]] = label
    return labels


@dataclass(frozen=True)
class ClusterProfile:
    """Aggregate delay behaviour of one cluster.

    Probabilities are unweighted means over member edges; the pooled_*
    variants weight members by their event support instead, reported
    alongside rather than replacing the primary statistics.
    """

    cluster: int
    members: tuple[str, ...]
    mean_matrix: np.ndarray
    p_no_change: float
    p_increase: float
    p_decrease: float
    band_likelihoods: dict[str, float]
    mode_breakdown: dict[str, int]
    pooled_p_no_change: float
    pooled_p_increase: float
    pooled_p_decrease: float

    @property
    def size(self) -> int:
        return len(self.members)


def _three_way(matrix: np.ndarray, center: int) -> tuple[float, float, float]:
    rows = matrix.sum(axis=1)
    return (
        float(rows[center]),
        float(rows[center + 1 :].sum()),
        float(rows[:center].sum()),
    )


def cluster_profile(
    assignment: Mapping[str, int],
    features: Sequence[EdgeFeatureMatrix],
    event_counts: Mapping[str, tuple[int, int]] | None = None,
    scheme: BinningScheme = DEFAULT_SCHEME,
) -> list[ClusterProfile]:
    """Summarize each cluster of the assignment from its member features."""
    by_key = {str(f.edge): f for f in features}
    missing = [k for k in assignment if k not in by_key]
    if missing:
        raise ValueError(
            "assignment references edges without features: "
            + ", ".join(sorted(missing)[:5])
            + ("..." if len(missing) > 5 else "")
        )
    groups: dict[int, list[str]] = {}
    for key, label in assignment.items():
        groups.setdefault(int(label), []).append(key)

    center = scheme.center_bin
    profiles = []
    for label in sorted(groups):
        keys = sorted(groups[label])
        stack = np.stack([by_key[k].values for k in keys])
        mean_matrix = stack.mean(axis=0)
        p_no, p_up, p_down = _three_way(mean_matrix, center)
        supports = np.array([by_key[k].support for k in keys], dtype=np.float64)
        pooled = (stack * supports[:, None, None]).sum(axis=0) / supports.sum()
        q_no, q_up, q_down = _three_way(pooled, center)
        rows = mean_matrix.sum(axis=1)
        bands = {
            scheme.delay_band_label(i): float(rows[i])
            for i in range(scheme.n_delay_bins)
        }
        bus = tram = 0
        if event_counts:
            for k in keys:
                nb, nt = event_counts.get(k, (0, 0))
                bus += int(nb)
                tram += int(nt)
        profiles.append(
            ClusterProfile(
                cluster=label,
                members=tuple(keys),
                mean_matrix=mean_matrix,
                p_no_change=p_no,
                p_increase=p_up,
                p_decrease=p_down,
                band_likelihoods=bands,
                mode_breakdown={"bus": bus, "tram": tram},
                pooled_p_no_change=q_no,
                pooled_p_increase=q_up,
                pooled_p_decrease=q_down,
            )
        )
    return profiles


class WardClustering(ClusterMixin, BaseEstimator):
    """Estimator facade over ward_linkage + cut.

    fit(X) accepts either a condensed distance vector or a square distance
    matrix. Attributes: dendrogram_, labels_ (1-based, leaf order).
    """

    def __init__(self, n_clusters: int = 4):
        self.n_clusters = n_clusters

    def fit(self, X, y=None):
        self.dendrogram_ = ward_linkage(X)
        self.labels_ = cut(self.dendrogram_, self.n_clusters)
        return self


def write_dendrogram(path, dendrogram: Dendrogram) -> None:
    """Single-object JSON dump: merges, leaf order, flagged inversions."""
    doc = {
        "format": _DENDROGRAM_FORMAT,
        "version": 1,
        "n_leaves": dendrogram.n_leaves,
        "leaf_keys": list(dendrogram.leaf_keys),
        "merges": [
            [m.left, m.right, m.height, m.new_size] for m in dendrogram.merges
        ],
        "inversions": dendrogram.inversions(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def read_dendrogram(path) -> Dendrogram:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != _DENDROGRAM_FORMAT:
        raise ValueError(f"{path}: unrecognized format {doc.get('format')!r}")
    merges = tuple(
        Merge(int(l), int(r), float(h), int(s)) for l, r, h, s in doc["merges"]
    )
    return Dendrogram(int(doc["n_leaves"]), merges, tuple(doc["leaf_keys"]))


def write_assignments(path, keys: Sequence[EdgeKey | str], labels) -> None:
    """CSV of stop_from, stop_to, cluster in the given leaf order."""
    labels = np.asarray(labels)
    if len(keys) != labels.shape[0]:
        raise ValueError(f"{len(keys)} keys but {labels.shape[0]} labels")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("stop_from,stop_to,cluster\n")
        for key, label in zip(keys, labels):
            if isinstance(key, EdgeKey):
                a, b = key.stop_from, key.stop_to
            else:
                a, _, b = str(key).partition("->")
            fh.write(f"{a},{b},{int(label)}\n")


def read_assignments(path) -> list[tuple[str, str, int]]:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "stop_from,stop_to,cluster":
            raise ValueError(f"{path}: unexpected header {header!r}")
        out = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            a, b, label = line.split(",")
            out.append((a, b, int(label)))
    return out
