"""Gaussian-kernel affinity graphs and their Laplacians."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numeric import DegenerateDataError, DomainError, as_matrix, is_symmetric, make_rng

MAX_GRAPH_SAMPLES = 20_000


@dataclass(frozen=True)
class GraphPair:
    P: np.ndarray
    L: np.ndarray
    delta: float

    @property
    def n(self) -> int:
        return self.P.shape[0]

    def restrict(self, indices) -> np.ndarray:
        return restrict(self.L, indices)


def median_bandwidth(X, sample_pairs: int = 10_000, rng=0) -> float:
    """Median Euclidean distance between randomly drawn pairs of columns of ``X``."""
    X = as_matrix(X, "X")
    n = X.shape[1]
    if n < 2:
        raise DomainError("median_bandwidth needs at least two samples")
    if sample_pairs < 1:
        raise DomainError("sample_pairs must be >= 1")
    rng = make_rng(rng)
    i = rng.integers(0, n, size=sample_pairs)
    # offset in [1, n) guarantees j != i
    j = (i + rng.integers(1, n, size=sample_pairs)) % n
    dist = np.linalg.norm(X[:, i] - X[:, j], axis=0)
    med = float(np.median(dist))
    if med == 0.0:
        if np.all(dist == 0.0):
            raise DegenerateDataError("all sampled pairwise distances are zero")
        med = float(np.min(dist[dist > 0]))
    return med


def pairwise_sq_dists(X: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->j", X, X)
    G = X.T @ X
    D2 = sq[:, None] + sq[None, :] - 2.0 * G
    np.maximum(D2, 0.0, out=D2)
    # exact symmetry, independent of BLAS rounding
    D2 = 0.5 * (D2 + D2.T)
    np.fill_diagonal(D2, 0.0)
    return D2


def build_affinity(X, delta: float) -> np.ndarray:
    """``P_ij = exp(-||x_i - x_j||^2 / delta^2)`` over the columns of ``X``."""
    X = as_matrix(X, "X")
    if not delta > 0:
        raise DomainError(f"bandwidth must be positive, got {delta}")
    if X.shape[1] > MAX_GRAPH_SAMPLES:
        raise DomainError(
            f"{X.shape[1]} samples exceeds the dense graph limit of {MAX_GRAPH_SAMPLES}; subsample first"
        )
    return np.exp(-pairwise_sq_dists(X) / (delta * delta))


def build_laplacian(P) -> np.ndarray:
    P = as_matrix(P, "P")
    if P.shape[0] != P.shape[1] or not is_symmetric(P, rtol=1e-12):
        raise DomainError("affinity matrix must be square and symmetric")
    if np.any(P < 0):
        raise DomainError("affinity matrix must be nonnegative")
    L = -P.copy()
    L[np.diag_indices_from(L)] += P.sum(axis=1)
    return L


def build_graph(X, delta: float | None = None, sample_pairs: int = 10_000, rng=0) -> GraphPair:
    if delta is None:
        delta = median_bandwidth(X, sample_pairs, rng)
    P = build_affinity(X, delta)
    return GraphPair(P=P, L=build_laplacian(P), delta=float(delta))


def restrict(L_full, indices) -> np.ndarray:
    """Principal submatrix of ``L_full`` on ``indices``, in the given order."""
    L_full = np.asarray(L_full)
    idx = np.asarray(indices, dtype=np.int64).ravel()
    n = L_full.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise DomainError(f"index out of range for a {n}x{n} matrix")
    if np.unique(idx).size != idx.size:
        raise DomainError("restrict indices must be distinct")
    return L_full[np.ix_(idx, idx)]


def export_csv(M: np.ndarray, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for row in M:
            writer.writerow([repr(float(v)) for v in row])
