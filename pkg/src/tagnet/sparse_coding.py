"""Classical graph-regularized sparse coding.

Solves ``min_A 1/2||X - DA||_F^2 + lam * sum_i ||a_i||_1 + alpha/2 Tr(A L A^T)``
by proximal-gradient fixed-point iteration, and learns the dictionary ``D``
with K-SVD (OMP inner coder).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .numeric import (
    DegenerateDataError,
    DomainError,
    as_matrix,
    frobenius_norm_sq,
    make_rng,
    spectral_bound,
)

log = logging.getLogger(__name__)

StepMode = Literal["paper_N", "safe_N_plus_graph"]

DEFAULT_OMP_SPARSITY = 5
DEFAULT_KSVD_ITERS = 30


def _check_theta(u: np.ndarray, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64).ravel()
    if theta.size != u.shape[0]:
        raise DomainError(f"threshold length {theta.size} != row count {u.shape[0]}")
    if np.any(~(theta > 0)):
        raise DomainError("shrink thresholds must be positive")
    return theta[:, None]


def shrink(u, theta) -> np.ndarray:
    """Soft-thresholding ``sign(u) * max(|u| - theta, 0)`` with one threshold per row."""
    u = as_matrix(u, "u")
    t = _check_theta(u, theta)
    return np.sign(u) * np.maximum(np.abs(u) - t, 0.0)


def unit_shrink(v: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - 1.0, 0.0)


def shrink_decomposed(u, theta) -> np.ndarray:
    """Shrinkage as scale-by-1/theta, unit threshold, scale-by-theta."""
    u = as_matrix(u, "u")
    t = _check_theta(u, theta)
    return t * unit_shrink(u / t)


@dataclass
class Dictionary:
    D: np.ndarray

    def __post_init__(self):
        self.D = as_matrix(self.D, "D")
        norms = np.linalg.norm(self.D, axis=0)
        if np.any(np.abs(norms - 1.0) > 1e-10):
            raise DomainError("dictionary atoms must have unit l2 norm")

    @property
    def p(self) -> int:
        return self.D.shape[1]

    @property
    def m(self) -> int:
        return self.D.shape[0]


@dataclass
class SolverConfig:
    lam: float
    alpha: float = 0.0
    max_iters: int = 1000
    tol: float = 1e-8
    step_mode: StepMode = "safe_N_plus_graph"

    def __post_init__(self):
        if self.lam < 0 or self.alpha < 0:
            raise DomainError("lam and alpha must be nonnegative")
        if not self.tol > 0 or self.max_iters < 1:
            raise DomainError("tol must be > 0 and max_iters >= 1")
        if self.step_mode not in ("paper_N", "safe_N_plus_graph"):
            raise DomainError(f"unknown step mode {self.step_mode!r}")


@dataclass
class SolveReport:
    iterations: int
    converged: bool
    max_change: float
    step_bound: float
    objective: list[float] = field(default_factory=list)


def _check_shapes(X, D, A=None, L=None):
    m, n = X.shape
    if D.shape[0] != m:
        raise DomainError(f"X has {m} rows but D has {D.shape[0]}")
    if A is not None and A.shape != (D.shape[1], n):
        raise DomainError(f"A must be {(D.shape[1], n)}, got {A.shape}")
    if L is not None and L.shape != (n, n):
        raise DomainError(f"L must be {(n, n)}, got {L.shape}")


def gsc_objective(X, D, A, lam: float, alpha: float, L) -> float:
    X, D, A, L = (as_matrix(M) for M in (X, D, A, L))
    _check_shapes(X, D, A, L)
    fit = 0.5 * frobenius_norm_sq(X - D @ A)
    sparsity = lam * float(np.abs(A).sum())
    smooth = 0.5 * alpha * float(np.sum((A @ L) * A))
    return fit + sparsity + smooth


def step_bound(D: np.ndarray, L: np.ndarray, alpha: float, mode: StepMode) -> float:
    N = spectral_bound(D.T @ D)
    if mode == "safe_N_plus_graph" and alpha > 0:
        N += alpha * spectral_bound(L)
    return N


def fixed_point_map(A, X, D, L, lam: float, alpha: float, N: float) -> np.ndarray:
    """One application of ``A -> h_{lam/N}[(I - D^T D/N) A - A (alpha/N) L + D^T X / N]``."""
    G = D.T @ (D @ A - X)
    if alpha:
        G = G + alpha * (A @ L)
    V = A - G / N
    return np.sign(V) * np.maximum(np.abs(V) - lam / N, 0.0)


def gsc_solve(X, D: Dictionary | np.ndarray, cfg: SolverConfig, L=None, track_objective: bool = False):
    """Iterate the shrinkage fixed-point map from ``A = 0``.

    Returns ``(A, report)``. Running out of iterations is not an error; the
    report's ``converged`` flag is cleared and the last iterate is returned.
    """
    X = as_matrix(X, "X")
    D = D.D if isinstance(D, Dictionary) else as_matrix(D, "D")
    n = X.shape[1]
    L = np.zeros((n, n)) if L is None else as_matrix(L, "L")
    _check_shapes(X, D, L=L)
    N = step_bound(D, L, cfg.alpha, cfg.step_mode)
    if N == 0.0:
        N = 1.0
    A = np.zeros((D.shape[1], n))
    report = SolveReport(iterations=0, converged=False, max_change=np.inf, step_bound=N)
    if track_objective:
        report.objective.append(gsc_objective(X, D, A, cfg.lam, cfg.alpha, L))
    for it in range(1, cfg.max_iters + 1):
        A_next = fixed_point_map(A, X, D, L, cfg.lam, cfg.alpha, N)
        change = float(np.max(np.abs(A_next - A), initial=0.0))
        A = A_next
        report.iterations = it
        report.max_change = change
        if track_objective:
            report.objective.append(gsc_objective(X, D, A, cfg.lam, cfg.alpha, L))
        if change < cfg.tol:
            report.converged = True
            break
    if not report.converged:
        log.warning("gsc_solve stopped after %d iterations (max change %.3g)", report.iterations, report.max_change)
    return A, report


def omp(x, D: Dictionary | np.ndarray, sparsity: int) -> np.ndarray:
    """Orthogonal matching pursuit with at most ``sparsity`` atoms."""
    D = D.D if isinstance(D, Dictionary) else as_matrix(D, "D")
    x = np.asarray(x, dtype=np.float64).ravel()
    p = D.shape[1]
    if not 1 <= sparsity <= p:
        raise DomainError(f"sparsity must be in [1, {p}]")
    code = np.zeros(p)
    residual = x.copy()
    stop = 1e-12 * max(np.linalg.norm(x), 1e-300)
    support: list[int] = []
    coef = np.zeros(0)
    for _ in range(sparsity):
        if np.linalg.norm(residual) <= stop:
            break
        corr = np.abs(D.T @ residual)
        corr[support] = -1.0
        k = int(np.argmax(corr))
        if corr[k] <= stop:
            break
        support.append(k)
        coef, *_ = np.linalg.lstsq(D[:, support], x, rcond=None)
        residual = x - D[:, support] @ coef
    if support:
        code[support] = coef
    return code


def omp_batch(X: np.ndarray, D: np.ndarray, sparsity: int) -> np.ndarray:
    return np.column_stack([omp(X[:, i], D, sparsity) for i in range(X.shape[1])]) if X.shape[1] else np.zeros((D.shape[1], 0))


def canonicalize_signs(D: np.ndarray, A: np.ndarray | None = None):
    """Flip atoms so each one's first nonzero entry is nonnegative (codes flipped to match)."""
    D = D.copy()
    A = None if A is None else A.copy()
    for k in range(D.shape[1]):
        nz = np.flatnonzero(D[:, k])
        if nz.size and D[nz[0], k] < 0:
            D[:, k] = -D[:, k]
            if A is not None:
                A[k] = -A[k]
    return D, A


def _unit_columns(M: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(M, axis=0)
    return M / np.where(norms > 0, norms, 1.0)


def ksvd(X, p: int, iters: int = DEFAULT_KSVD_ITERS, sparsity: int = DEFAULT_OMP_SPARSITY, rng=0):
    """K-SVD dictionary learning.

    Returns ``(Dictionary, errors)`` where ``errors[t]`` is
    ``1/2||X - D A||_F^2`` after the sparse-coding step of iteration ``t``.
    """
    X = as_matrix(X, "X")
    m, n = X.shape
    if p > n:
        raise DomainError(f"p={p} atoms needs at least p samples, got {n}")
    if iters < 1:
        raise DomainError("iters must be >= 1")
    sparsity = min(sparsity, p)
    nonzero = np.linalg.norm(X, axis=0) > 0
    distinct = np.unique(_unit_columns(X[:, nonzero]).round(12), axis=1).shape[1]
    if distinct < p and not (distinct >= 1 and p == 1):
        raise DegenerateDataError(f"only {distinct} distinct sample directions for {p} atoms")
    rng = make_rng(rng)

    candidates = np.flatnonzero(nonzero)
    D = _unit_columns(X[:, rng.choice(candidates, size=p, replace=False)])
    A_prev = None
    errors: list[float] = []
    for _ in range(iters):
        A = omp_batch(X, D, sparsity)
        if A_prev is not None:
            # keep the updated codes wherever greedy recoding did worse, so error never rises
            r_new = np.sum((X - D @ A) ** 2, axis=0)
            r_old = np.sum((X - D @ A_prev) ** 2, axis=0)
            worse = r_old < r_new
            A[:, worse] = A_prev[:, worse]
        E = X - D @ A
        errors.append(0.5 * frobenius_norm_sq(E))

        unused = []
        for k in range(p):
            users = np.flatnonzero(A[k])
            if users.size == 0:
                unused.append(k)
                continue
            E_k = E[:, users] + np.outer(D[:, k], A[k, users])
            U, s, Vt = np.linalg.svd(E_k, full_matrices=False)
            D[:, k] = U[:, 0]
            A[k, users] = s[0] * Vt[0]
            E[:, users] = E_k - np.outer(D[:, k], A[k, users])

        if unused:
            # worst-reconstructed samples become the new atoms; their codes are empty so error is unchanged
            worst = np.argsort(-np.sum(E**2, axis=0), kind="stable")
            taken = 0
            for idx in worst:
                if taken == len(unused):
                    break
                nv = np.linalg.norm(X[:, idx])
                if nv == 0:
                    continue
                D[:, unused[taken]] = X[:, idx] / nv
                taken += 1
        A_prev = A

    D, _ = canonicalize_signs(D)
    return Dictionary(D), errors
