"""The unrolled graph-regularized network (TAGnet).

Stage 1 computes ``Z_1 = h_theta(W X)``; every later stage computes

    U_k = W X + S Z_{k-1} - (alpha/N) Z_{k-1} L_batch,    Z_k = h_theta(U_k)

with one shared ``S`` and ``theta``. The output is ``A = Z_K``. Setting
``alpha = 0`` removes the graph branch and leaves a LISTA network.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numeric import DomainError, as_matrix, spectral_bound
from .sparse_coding import Dictionary, unit_shrink

THETA_FLOOR = 1e-6


@dataclass
class TagNetParams:
    W: np.ndarray
    S: np.ndarray
    log_theta: np.ndarray
    K: int = 2
    alpha: float = 5.0
    N: float = 1.0

    def __post_init__(self):
        self.W = as_matrix(self.W, "W")
        self.S = as_matrix(self.S, "S")
        self.log_theta = np.asarray(self.log_theta, dtype=np.float64).ravel()
        p = self.W.shape[0]
        if self.S.shape != (p, p) or self.log_theta.size != p:
            raise DomainError("W, S, theta shapes disagree")
        if self.K < 1:
            raise DomainError("K must be >= 1")
        if self.alpha < 0 or not self.N > 0:
            raise DomainError("alpha must be >= 0 and N > 0")
        self.clamp()

    @classmethod
    def from_theta(cls, W, S, theta, **kw) -> "TagNetParams":
        return cls(W, S, np.log(np.maximum(np.asarray(theta, dtype=np.float64), THETA_FLOOR)), **kw)

    @property
    def theta(self) -> np.ndarray:
        return np.exp(self.log_theta)

    @property
    def p(self) -> int:
        return self.W.shape[0]

    @property
    def m(self) -> int:
        return self.W.shape[1]

    def clamp(self) -> None:
        np.maximum(self.log_theta, np.log(THETA_FLOOR), out=self.log_theta)

    def copy(self) -> "TagNetParams":
        return TagNetParams(self.W.copy(), self.S.copy(), self.log_theta.copy(), self.K, self.alpha, self.N)


@dataclass
class StageActivations:
    X: np.ndarray
    L: np.ndarray
    U: list[np.ndarray] = field(default_factory=list)
    Z: list[np.ndarray] = field(default_factory=list)

    @property
    def A(self) -> np.ndarray:
        return self.Z[-1]


@dataclass
class ParamGrads:
    W: np.ndarray
    S: np.ndarray
    theta: np.ndarray
    X: np.ndarray | None = None

    def log_theta(self, params: TagNetParams) -> np.ndarray:
        return self.theta * params.theta


def init_from_dictionary(D: Dictionary | np.ndarray, lam: float, alpha: float = 5.0, K: int = 2, N: float | None = None) -> TagNetParams:
    """``W = D^T/N``, ``S = I - D^T D/N``, ``theta = lam/N`` with ``N`` bounding ``eig(D^T D)``."""
    D = D.D if isinstance(D, Dictionary) else as_matrix(D, "D")
    if not lam > 0:
        raise DomainError("lam must be positive so that theta > 0")
    G = D.T @ D
    if N is None:
        N = spectral_bound(G)
    p = D.shape[1]
    return TagNetParams.from_theta(D.T / N, np.eye(p) - G / N, np.full(p, lam / N), K=K, alpha=alpha, N=N)


def _check_batch(params: TagNetParams, X: np.ndarray, L: np.ndarray):
    if X.shape[0] != params.m:
        raise DomainError(f"batch has {X.shape[0]} features, network expects {params.m}")
    b = X.shape[1]
    if L.shape != (b, b):
        raise DomainError(f"L_batch must be {(b, b)}, got {L.shape}")


def forward(params: TagNetParams, X_batch, L_batch) -> StageActivations:
    X = as_matrix(X_batch, "X_batch")
    L = as_matrix(L_batch, "L_batch")
    _check_batch(params, X, L)
    theta = params.theta[:, None]
    inv_theta = 1.0 / theta
    c = params.alpha / params.N
    WX = params.W @ X
    acts = StageActivations(X=X, L=L)
    U = WX
    for k in range(params.K):
        if k:
            Z_prev = acts.Z[-1]
            U = WX + params.S @ Z_prev
            if c:
                U = U - c * (Z_prev @ L)
        acts.U.append(U)
        # two diagonal scaling layers around a unit-threshold neuron
        acts.Z.append(theta * unit_shrink(inv_theta * U))
    return acts


def stage_taps(acts: StageActivations) -> list[np.ndarray]:
    return list(acts.Z)


def backward(params: TagNetParams, acts: StageActivations, grad_A, grad_taps=None, want_X: bool = False) -> ParamGrads:
    """Reverse-mode gradients of a scalar loss through every stage.

    ``grad_A`` is dLoss/dA. ``grad_taps`` optionally supplies extra
    dLoss/dZ_k per stage (``None`` entries skipped) for auxiliary heads.
    Tied ``S`` and ``theta`` accumulate contributions from all stages.
    """
    p, b = params.p, acts.X.shape[1]
    grad_A = as_matrix(grad_A, "grad_A")
    if grad_A.shape != (p, b):
        raise DomainError(f"grad_A must be {(p, b)}, got {grad_A.shape}")
    K = len(acts.Z)
    G = [np.zeros((p, b)) for _ in range(K)]
    G[-1] = G[-1] + grad_A
    if grad_taps is not None:
        if len(grad_taps) > K:
            raise DomainError(f"{len(grad_taps)} tap gradients for {K} stages")
        for k, g in enumerate(grad_taps):
            if g is not None:
                if g.shape != (p, b):
                    raise DomainError(f"tap gradient {k} must be {(p, b)}")
                G[k] = G[k] + g
    theta = params.theta[:, None]
    c = params.alpha / params.N
    gW = np.zeros_like(params.W)
    gS = np.zeros_like(params.S)
    gtheta = np.zeros(p)
    gU_sum = np.zeros((p, b))
    for k in range(K - 1, -1, -1):
        U = acts.U[k]
        active = np.abs(U) > theta
        M = np.where(active, G[k], 0.0)
        # Z = U - theta*sign(U) on the active set
        gtheta -= np.sum(M * np.sign(U), axis=1)
        gU_sum += M
        if k:
            Z_prev = acts.Z[k - 1]
            gS += M @ Z_prev.T
            back = params.S.T @ M
            if c:
                back = back - c * (M @ acts.L.T)
            G[k - 1] = G[k - 1] + back
    gW = gU_sum @ acts.X.T
    grads = ParamGrads(W=gW, S=gS, theta=gtheta)
    if want_X:
        grads.X = params.W.T @ gU_sum
    return grads
