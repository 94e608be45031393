"""Dense numeric helpers shared by every other module.

Matrices are plain ``float64`` numpy arrays; randomness goes through
``numpy.random.Generator`` backed by PCG64, whose streams are fixed across
platforms for a given seed.
"""

from __future__ import annotations

import numpy as np

DEFAULT_POWER_ITERS = 100
DEFAULT_SAFETY = 1.05


class DomainError(ValueError):
    """An argument violates an operation's precondition."""


class DegenerateDataError(ValueError):
    """The data cannot support the requested computation (e.g. all points equal)."""


def make_rng(seed: int | np.random.Generator | None = 0) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def derive_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent child stream keyed by ``(seed, *stream)``."""
    return np.random.Generator(np.random.PCG64([int(seed) & 0xFFFFFFFFFFFFFFFF, *stream]))


def as_matrix(M, name: str = "matrix") -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise DomainError(f"{name} must be 2-D, got shape {M.shape}")
    return M


def check_finite(M: np.ndarray, name: str = "matrix") -> np.ndarray:
    if not np.all(np.isfinite(M)):
        raise DomainError(f"{name} contains NaN or Inf")
    return M


def is_symmetric(M: np.ndarray, rtol: float = 1e-10) -> bool:
    scale = max(float(np.max(np.abs(M))), 1.0) if M.size else 1.0
    return bool(np.max(np.abs(M - M.T), initial=0.0) <= rtol * scale)


def frobenius_norm_sq(M) -> float:
    M = np.asarray(M, dtype=np.float64)
    return float(np.sum(M * M))


def spectral_bound(
    M,
    iters: int = DEFAULT_POWER_ITERS,
    safety: float = DEFAULT_SAFETY,
    rng: np.random.Generator | int | None = 0,
) -> float:
    """Largest-eigenvalue estimate of a symmetric PSD matrix, times ``safety``.

    Power iteration from a random start drawn from ``rng``; the returned
    estimate is the Rayleigh quotient of the last iterate, which approaches
    the top eigenvalue from below.
    """
    M = as_matrix(M, "M")
    if M.shape[0] != M.shape[1]:
        raise DomainError(f"spectral_bound needs a square matrix, got {M.shape}")
    if not is_symmetric(M):
        raise DomainError("spectral_bound needs a symmetric matrix")
    if iters < 1:
        raise DomainError("iters must be >= 1")
    if safety < 1:
        raise DomainError("safety must be >= 1")
    n = M.shape[0]
    if n == 0:
        return 0.0
    v = make_rng(rng).standard_normal(n)
    v /= np.linalg.norm(v)
    estimate = float(v @ M @ v)
    for _ in range(iters):
        w = M @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            # start vector lies in the null space; nothing larger is visible
            return 0.0
        v = w / norm
        estimate = float(v @ M @ v)
    return safety * max(estimate, 0.0)
