"""Clustering-oriented loss heads: entropy minimization (EML) and max-margin (MML).

Scores are ``f_j(a_i) = omega_j^T a_i``. EML assigns
``p_ij = softmax_j(-f_j(a_i))`` and penalizes the assignment entropy; MML is
a multiclass hinge between the best and runner-up score plus
``lam_omega/2 ||omega||^2``. Ties always resolve to the smallest index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .numeric import DomainError, as_matrix, make_rng

LossKind = Literal["EML", "MML"]

DEFAULT_LAM_OMEGA = 0.01
INIT_SCALE = 0.01


@dataclass
class LossHead:
    omega: np.ndarray
    kind: LossKind = "MML"
    lam_omega: float = DEFAULT_LAM_OMEGA

    def __post_init__(self):
        self.omega = as_matrix(self.omega, "omega")
        if self.kind not in ("EML", "MML"):
            raise DomainError(f"unknown loss kind {self.kind!r}")
        if self.omega.shape[1] < 2:
            raise DomainError("a loss head needs at least two clusters")
        if self.lam_omega < 0:
            raise DomainError("lam_omega must be nonnegative")

    @property
    def n_clusters(self) -> int:
        return self.omega.shape[1]

    def copy(self) -> "LossHead":
        return LossHead(self.omega.copy(), self.kind, self.lam_omega)


def _scores(A: np.ndarray, head: LossHead) -> np.ndarray:
    A = as_matrix(A, "A")
    if A.shape[0] != head.omega.shape[0]:
        raise DomainError(f"features have {A.shape[0]} rows, head expects {head.omega.shape[0]}")
    return head.omega.T @ A


def eml_probabilities(A, head: LossHead) -> np.ndarray:
    t = -_scores(A, head)
    t -= t.max(axis=0, keepdims=True)
    e = np.exp(t)
    return e / e.sum(axis=0, keepdims=True)


def eml_loss(A, head: LossHead):
    """Returns ``(loss, grad_A, grad_omega)`` for ``-sum_i sum_j p_ij log p_ij``."""
    A = as_matrix(A, "A")
    s = _scores(A, head)
    t = -s
    t = t - t.max(axis=0, keepdims=True)
    e = np.exp(t)
    Z = e.sum(axis=0, keepdims=True)
    P = e / Z
    # H = logsumexp(t) - sum_j p_j t_j; underflowed p_j contribute 0 * finite
    t_bar = np.sum(P * t, axis=0, keepdims=True)
    H = np.log(Z) - t_bar
    loss = float(H.sum())
    # dH/ds_k = p_k (t_k - t_bar) with t = -s + const
    G = P * (t - t_bar)
    return loss, head.omega @ G, A @ G.T


def _top_two(F: np.ndarray):
    n = F.shape[1]
    cols = np.arange(n)
    y = np.argmax(F, axis=0)
    masked = F.copy()
    masked[y, cols] = -np.inf
    r = np.argmax(masked, axis=0)
    return y, r, cols


def mml_loss(A, head: LossHead):
    """Returns ``(loss, grad_A, grad_omega)`` for the multiclass hinge with fixed ``y``, ``r``."""
    A = as_matrix(A, "A")
    F = _scores(A, head)
    y, r, cols = _top_two(F)
    margin = 1.0 + F[r, cols] - F[y, cols]
    active = margin > 0
    loss = 0.5 * head.lam_omega * float(np.sum(head.omega**2)) + float(np.sum(margin[active]))
    G = np.zeros_like(F)
    G[r[active], cols[active]] += 1.0
    G[y[active], cols[active]] -= 1.0
    return loss, head.omega @ G, A @ G.T + head.lam_omega * head.omega


def head_loss(A, head: LossHead):
    return eml_loss(A, head) if head.kind == "EML" else mml_loss(A, head)


def predict(A, head: LossHead) -> np.ndarray:
    F = _scores(A, head)
    if head.kind == "EML":
        return np.argmin(F, axis=0)
    return np.argmax(F, axis=0)


def _seed_directions(A: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy k-means++ draw of ``k`` sample directions (unit columns).

    Each step samples a few candidates proportionally to the squared
    distance from the chosen seeds and keeps the one that lowers the total
    potential most.
    """
    norms = np.linalg.norm(A, axis=0)
    U = A / np.where(norms > 0, norms, 1.0)
    n = U.shape[1]
    trials = 2 + int(np.log(k))

    def dist_to(j):
        return np.sum((U - U[:, [j]]) ** 2, axis=0)

    picks = [int(rng.integers(n))]
    d2 = dist_to(picks[0])
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            picks.append(int(rng.integers(n)))
            continue
        candidates = rng.choice(n, size=trials, p=d2 / total)
        options = [np.minimum(d2, dist_to(c)) for c in candidates]
        best = int(np.argmin([o.sum() for o in options]))
        picks.append(int(candidates[best]))
        d2 = options[best]
    return U[:, picks]


def random_head(A, n_clusters: int, kind: LossKind, rng=0, lam_omega: float = DEFAULT_LAM_OMEGA, scale: float = INIT_SCALE) -> LossHead:
    """Small random head whose cluster directions are drawn from the data.

    MML scores prefer large ``omega_j^T a``, EML small, so the EML directions
    are negated.
    """
    A = as_matrix(A, "A")
    if n_clusters < 2:
        raise DomainError("need at least two clusters")
    rng = make_rng(rng)
    omega = scale * _seed_directions(A, n_clusters, rng)
    if kind == "EML":
        omega = -omega
    return LossHead(omega, kind, lam_omega)


def init_head(
    A,
    n_clusters: int,
    kind: LossKind,
    epochs: int = 50,
    rng=0,
    learning_rate: float = 0.01,
    batch_size: int = 128,
    lam_omega: float = DEFAULT_LAM_OMEGA,
    history: list | None = None,
    restarts: int = 1,
) -> LossHead:
    """Fit a head on fixed features ``A`` by minibatch SGD on its own loss.

    With ``restarts > 1`` the fit is repeated from independent draws and
    the head with the lowest final loss on ``A`` is kept.
    """
    A = as_matrix(A, "A")
    rng = make_rng(rng)
    if restarts > 1:
        fits = [
            _fit_head(A, n_clusters, kind, epochs, rng, learning_rate, batch_size, lam_omega, None)
            for _ in range(restarts)
        ]
        losses = [head_loss(A, h)[0] for h in fits]
        best = int(np.argmin(losses))
        if history is not None:
            history.append(losses[best])
        return fits[best]
    return _fit_head(A, n_clusters, kind, epochs, rng, learning_rate, batch_size, lam_omega, history)


def _fit_head(A, n_clusters, kind, epochs, rng, learning_rate, batch_size, lam_omega, history) -> LossHead:
    head = random_head(A, n_clusters, kind, rng, lam_omega)
    n = A.shape[1]
    if history is not None:
        history.append(head_loss(A, head)[0])
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            _, _, g = head_loss(A[:, idx], head)
            head.omega -= learning_rate * g
        if history is not None:
            history.append(head_loss(A, head)[0])
    return head
