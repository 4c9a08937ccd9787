"""Input validation helpers shared across estimators and pipeline stages."""

from __future__ import annotations

import numpy as np

MASS_TOLERANCE = 1e-9


def check_distribution(a, *, name: str = "distribution", tol: float = MASS_TOLERANCE) -> np.ndarray:
    """Validate a 1-D histogram: finite, non-negative, total mass 1 within `tol`."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    if np.any(a < 0):
        idx = int(np.argmin(a))
        raise ValueError(f"{name} has negative mass {a[idx]!r} at bin {idx}")
    total = float(a.sum())
    if abs(total - 1.0) > tol:
        raise ValueError(f"{name} mass {total!r} differs from 1 by more than {tol}")
    return a


def check_feature_stack(F, *, n_bins: int | None = None) -> np.ndarray:
    """Validate a stack of flattened feature matrices, shape (n_edges, n_bins)."""
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 2:
        raise ValueError(f"feature stack must be 2-D, got shape {F.shape}")
    if n_bins is not None and F.shape[1] != n_bins:
        raise ValueError(f"feature stack has {F.shape[1]} bins, expected {n_bins}")
    for i in range(F.shape[0]):
        check_distribution(F[i], name=f"feature matrix {i}")
    return F


def check_square_distances(D) -> np.ndarray:
    """Validate a square symmetric distance matrix with a zero diagonal."""
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValueError(f"distance matrix must be square, got shape {D.shape}")
    if not np.allclose(np.diag(D), 0.0, atol=1e-12):
        raise ValueError("distance matrix diagonal is not zero")
    if not np.array_equal(D, D.T):
        raise ValueError("distance matrix is not symmetric")
    return D


def condensed_size(n: int) -> int:
    return n * (n - 1) // 2


def condensed_index(i: int, j: int, n: int) -> int:
    """Linear index of pair (i, j), i < j, in the canonical condensed layout."""
    if i == j:
        raise ValueError("condensed layout has no diagonal entries")
    if i > j:
        i, j = j, i
    return n * i - i * (i + 1) // 2 + (j - i - 1)


def condensed_to_square(d, n: int | None = None) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 1:
        raise ValueError(f"condensed matrix must be 1-D, got shape {d.shape}")
    if n is None:
        n = n_from_condensed(len(d))
    if condensed_size(n) != len(d):
        raise ValueError(f"condensed length {len(d)} does not match n={n}")
    D = np.zeros((n, n), dtype=np.float64)
    iu = np.triu_indices(n, k=1)
    D[iu] = d
    D[(iu[1], iu[0])] = d
    return D


def square_to_condensed(D) -> np.ndarray:
    D = check_square_distances(D)
    return D[np.triu_indices(D.shape[0], k=1)].copy()


def n_from_condensed(length: int) -> int:
    n = int(round((1 + (1 + 8 * length) ** 0.5) / 2))
    if condensed_size(n) != length:
        raise ValueError(f"{length} is not a valid condensed matrix length")
    return n


def as_condensed(X) -> tuple[np.ndarray, int]:
    """Accept either a condensed vector or a square matrix; return (condensed, n)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        return X, n_from_condensed(len(X))
    if X.ndim == 2:
        return square_to_condensed(X), X.shape[0]
    raise ValueError(f"expected condensed vector or square matrix, got shape {X.shape}")
