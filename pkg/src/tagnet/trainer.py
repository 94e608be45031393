"""End-to-end SGD training of the network and its clustering heads.

Each minibatch restricts the fixed Laplacian to the batch's samples, runs
the network forward, evaluates the overall head on the output and the
auxiliary heads on the stage taps, and takes one plain SGD step on every
trainable tensor. The Laplacian itself is never written.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .graph import GraphPair
from .losses import LossHead, head_loss, init_head, predict
from .metrics import clustering_accuracy, nmi
from .network import TagNetParams, backward, forward
from .numeric import DomainError, make_rng
from .sparse_coding import Dictionary, SolverConfig, gsc_solve

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"TAGN"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.0
    batch_size: int = 128
    epochs: int = 10
    seed: int = 0
    aux_weights: list[float] = field(default_factory=list)
    eval_every: int = 100
    # "mean" divides the summed batch loss by the batch size before differentiating
    reduction: str = "mean"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.momentum != 0.0:
            raise ConfigError("only momentum-free SGD is supported")
        if self.batch_size < 1 or self.epochs < 0 or self.eval_every < 1:
            raise ConfigError("batch_size and eval_every must be >= 1, epochs >= 0")
        if any(w < 0 for w in self.aux_weights):
            raise ConfigError("aux_weights must be nonnegative")
        if self.reduction not in ("mean", "sum"):
            raise ConfigError(f"unknown reduction {self.reduction!r}")
        self.aux_weights = [float(w) for w in self.aux_weights]


@dataclass
class HistoryRecord:
    iteration: int
    total_loss: float
    head_losses: list[float]
    accuracy: float | None
    nmi: float | None


@dataclass
class TrainHistory:
    records: list[HistoryRecord] = field(default_factory=list)

    def append(self, rec: HistoryRecord) -> None:
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise ValueError("history iterations must increase")
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def to_csv(self) -> str:
        n_aux = max((len(r.head_losses) - 1 for r in self.records), default=0)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iteration", "total_loss", *[f"aux{k + 1}_loss" for k in range(n_aux)], "accuracy", "nmi"])
        for r in self.records:
            aux = [repr(float(v)) for v in r.head_losses[1:]]
            aux += [""] * (n_aux - len(aux))
            writer.writerow([
                r.iteration,
                repr(float(r.total_loss)),
                *aux,
                "" if r.accuracy is None else repr(float(r.accuracy)),
                "" if r.nmi is None else repr(float(r.nmi)),
            ])
        return buf.getvalue()


class SGD:
    """Plain SGD; the velocity buffer exists only to prove it stays unused."""

    def __init__(self, learning_rate: float, momentum: float = 0.0):
        if momentum != 0.0:
            raise ConfigError("momentum must be 0")
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.velocity = None

    def update(self, param: np.ndarray, grad: np.ndarray) -> None:
        param -= self.learning_rate * grad


def _aux_list(aux_heads, K: int) -> list[LossHead | None]:
    if aux_heads is None:
        return [None] * K
    if isinstance(aux_heads, dict):
        if any(k < 0 or k >= K for k in aux_heads):
            raise ConfigError(f"auxiliary head targets a stage outside 0..{K - 1}")
        return [aux_heads.get(k) for k in range(K)]
    aux = list(aux_heads)
    if len(aux) > K:
        raise ConfigError(f"{len(aux)} auxiliary heads for a {K}-stage network")
    return aux + [None] * (K - len(aux))


def batch_objective(params: TagNetParams, head: LossHead, aux: list, weights: list[float], X, L, scale: float = 1.0):
    """Loss and gradients for one batch: overall head plus weighted taps.

    Returns ``(total, per_head, param_grads, head_grads, aux_grads)``.
    """
    acts = forward(params, X, L)
    loss, gA, g_omega = head_loss(acts.A, head)
    per_head = [loss]
    total = loss
    tap_grads = [None] * params.K
    aux_grads = [None] * params.K
    for k, h in enumerate(aux):
        if h is None:
            per_head.append(float("nan"))
            continue
        w = weights[k] if k < len(weights) else 1.0
        lk, gZ, gw = head_loss(acts.Z[k], h)
        per_head.append(lk)
        if w == 0.0:
            continue
        total += w * lk
        tap_grads[k] = w * gZ
        aux_grads[k] = w * gw
    grads = backward(params, acts, gA, tap_grads)
    if scale != 1.0:
        total *= scale
        grads.W *= scale
        grads.S *= scale
        grads.theta *= scale
        g_omega = g_omega * scale
        aux_grads = [None if g is None else g * scale for g in aux_grads]
    return total, per_head, grads, g_omega, aux_grads, acts


class Trainer:
    def __init__(
        self,
        dataset: Dataset,
        graph: GraphPair,
        params: TagNetParams,
        head: LossHead,
        aux_heads=None,
        cfg: TrainConfig | None = None,
        copy: bool = True,
    ):
        self.cfg = cfg or TrainConfig()
        self.dataset = dataset
        self.graph = graph
        if graph.L.shape != (dataset.n, dataset.n):
            raise DomainError("graph does not match the dataset size")
        self.params = params.copy() if copy else params
        self.head = head.copy() if copy else head
        aux = _aux_list(aux_heads, params.K)
        self.aux = [None if h is None else (h.copy() if copy else h) for h in aux]
        self.weights = list(self.cfg.aux_weights) + [1.0] * (params.K - len(self.cfg.aux_weights))
        self.optimizer = SGD(self.cfg.learning_rate, self.cfg.momentum)
        self.rng = make_rng(self.cfg.seed)
        self.iteration = 0
        self.epoch = 0
        self.cursor = 0
        self.perm: np.ndarray | None = None
        self.history = TrainHistory()

    @property
    def total_iterations(self) -> int:
        per_epoch = -(-self.dataset.n // self.cfg.batch_size)
        return per_epoch * self.cfg.epochs

    def next_batch(self) -> np.ndarray:
        if self.perm is None or self.cursor >= self.dataset.n:
            self.perm = self.rng.permutation(self.dataset.n)
            self.cursor = 0
        idx = self.perm[self.cursor:self.cursor + self.cfg.batch_size]
        self.cursor += idx.size
        if self.cursor >= self.dataset.n:
            self.epoch += 1
        return idx

    def step(self) -> float:
        idx = self.next_batch()
        X = self.dataset.X[:, idx]
        L = self.graph.restrict(idx)
        scale = 1.0 / idx.size if self.cfg.reduction == "mean" else 1.0
        total, _, g, g_omega, aux_grads, _ = batch_objective(self.params, self.head, self.aux, self.weights, X, L, scale)
        opt = self.optimizer
        opt.update(self.params.W, g.W)
        opt.update(self.params.S, g.S)
        opt.update(self.params.log_theta, g.log_theta(self.params))
        self.params.clamp()
        opt.update(self.head.omega, g_omega)
        for h, gw in zip(self.aux, aux_grads):
            if h is not None and gw is not None:
                opt.update(h.omega, gw)
        self.iteration += 1
        if not np.isfinite(total):
            raise FloatingPointError(f"training loss became non-finite at iteration {self.iteration}")
        return total

    def evaluate(self) -> HistoryRecord:
        ds = self.dataset
        acts = forward(self.params, ds.X, self.graph.L)
        scale = 1.0 / ds.n if self.cfg.reduction == "mean" else 1.0
        losses = [head_loss(acts.A, self.head)[0] * scale]
        total = losses[0]
        for k, h in enumerate(self.aux):
            if h is None:
                continue
            lk = head_loss(acts.Z[k], h)[0] * scale
            losses.append(lk)
            total += self.weights[k] * lk
        acc = score = None
        if ds.labels is not None:
            labels = predict(acts.A, self.head)
            acc = clustering_accuracy(labels, ds.labels)
            score = nmi(labels, ds.labels)
        return HistoryRecord(self.iteration, total, losses, acc, score)

    def run(self, max_iterations: int | None = None) -> TrainHistory:
        """Train until the configured epochs are done, or for ``max_iterations`` more steps."""
        end = self.total_iterations
        if max_iterations is not None:
            end = min(end, self.iteration + max_iterations)
        if self.iteration == 0 and end > 0:
            self.history.append(self.evaluate())
        while self.iteration < end:
            self.step()
            if self.iteration % self.cfg.eval_every == 0 or self.iteration == self.total_iterations:
                self.history.append(self.evaluate())
        return self.history

    def labels(self, stage: int | None = None) -> np.ndarray:
        acts = forward(self.params, self.dataset.X, self.graph.L)
        if stage is None:
            return predict(acts.A, self.head)
        return predict(acts.Z[stage], self.aux[stage])

    def checkpoint(self) -> "Checkpoint":
        return Checkpoint(
            params=self.params.copy(),
            head=self.head.copy(),
            aux_heads=[None if h is None else h.copy() for h in self.aux],
            config=TrainConfig(**asdict(self.cfg)),
            rng_state=self.rng.bit_generator.state,
            iteration=self.iteration,
            epoch=self.epoch,
            cursor=self.cursor,
            perm=None if self.perm is None else self.perm.copy(),
        )

    @classmethod
    def from_checkpoint(cls, cp: "Checkpoint", dataset: Dataset, graph: GraphPair) -> "Trainer":
        tr = cls(dataset, graph, cp.params, cp.head, cp.aux_heads, cp.config)
        tr.rng.bit_generator.state = cp.rng_state
        tr.iteration, tr.epoch, tr.cursor = cp.iteration, cp.epoch, cp.cursor
        tr.perm = None if cp.perm is None else cp.perm.copy()
        return tr


def train(dataset: Dataset, graph: GraphPair, params: TagNetParams, head: LossHead, aux_heads=None, cfg: TrainConfig | None = None):
    """Train copies of ``params`` and heads; returns ``(params, head, aux_heads, history)``."""
    tr = Trainer(dataset, graph, params, head, aux_heads, cfg)
    L_before = graph.L.copy() if __debug__ else None
    tr.run()
    if L_before is not None and not np.array_equal(L_before, graph.L):
        raise AssertionError("graph Laplacian was modified during training")
    return tr.params, tr.head, tr.aux, tr.history


@dataclass
class BaselineConfig:
    lam: float = 0.3
    alpha: float = 5.0
    n_clusters: int = 2
    kind: str = "MML"
    head_epochs: int = 50
    learning_rate: float = 0.01
    batch_size: int = 128
    seed: int = 0
    max_iters: int = 500
    tol: float = 1e-6


def run_baseline_sc(dataset: Dataset, graph: GraphPair, D: Dictionary, cfg: BaselineConfig):
    """Graph-regularized sparse codes with a head trained on the fixed codes.

    Returns ``(labels, metrics)``; metrics hold accuracy and NMI when the
    dataset is labelled.
    """
    solver = SolverConfig(lam=cfg.lam, alpha=cfg.alpha, max_iters=cfg.max_iters, tol=cfg.tol)
    A, report = gsc_solve(dataset.X, D, solver, graph.L)
    head = init_head(
        A, cfg.n_clusters, cfg.kind, cfg.head_epochs, make_rng(cfg.seed),
        learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
    )
    labels = predict(A, head)
    metrics = {
        "solver_iterations": report.iterations,
        "converged": report.converged,
        "head_loss": head_loss(A, head)[0] / dataset.n,
    }
    if dataset.labels is not None:
        metrics["accuracy"] = clustering_accuracy(labels, dataset.labels)
        metrics["nmi"] = nmi(labels, dataset.labels)
    return labels, metrics


# -- checkpoints -------------------------------------------------------------


class CheckpointError(ValueError):
    pass


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    params: TagNetParams
    head: LossHead
    aux_heads: list[LossHead | None] = field(default_factory=list)
    config: TrainConfig = field(default_factory=TrainConfig)
    rng_state: dict = field(default_factory=dict)
    iteration: int = 0
    epoch: int = 0
    cursor: int = 0
    perm: np.ndarray | None = None
    # free-form JSON metadata carried along (graph bandwidth, run seed, ...)
    extra: dict = field(default_factory=dict)


def _tensor_bytes(name: str, M: np.ndarray) -> bytes:
    M = np.atleast_2d(np.asarray(M, dtype="<f8"))
    key = name.encode("utf-8")
    return struct.pack("<I", len(key)) + key + struct.pack("<II", *M.shape) + np.ascontiguousarray(M).tobytes()


def save_checkpoint(path, cp: Checkpoint) -> None:
    """Layout: ``TAGN``, u32 version, JSON metadata block, named float64 tensors, JSON rng state.

    All integers are little-endian u32; every block is length-prefixed.
    """
    p = cp.params
    tensors = {"W": p.W, "S": p.S, "log_theta": p.log_theta[None, :], "head.omega": cp.head.omega}
    aux_meta = []
    for k, h in enumerate(cp.aux_heads):
        if h is not None:
            tensors[f"aux{k}.omega"] = h.omega
            aux_meta.append({"stage": k, "kind": h.kind, "lam_omega": h.lam_omega})
    if cp.perm is not None:
        tensors["perm"] = np.asarray(cp.perm, dtype=np.float64)[None, :]
    meta = {
        "K": p.K, "alpha": p.alpha, "N": p.N,
        "head": {"kind": cp.head.kind, "lam_omega": cp.head.lam_omega},
        "aux": aux_meta,
        "config": asdict(cp.config),
        "iteration": cp.iteration, "epoch": cp.epoch, "cursor": cp.cursor,
        "extra": cp.extra,
    }
    meta_b = json.dumps(meta, sort_keys=True).encode("utf-8")
    rng_b = json.dumps(cp.rng_state, sort_keys=True).encode("utf-8")
    out = bytearray(CHECKPOINT_MAGIC)
    out += struct.pack("<I", CHECKPOINT_VERSION)
    out += struct.pack("<I", len(meta_b)) + meta_b
    out += struct.pack("<I", len(tensors))
    for name, M in tensors.items():
        out += _tensor_bytes(name, M)
    out += struct.pack("<I", len(rng_b)) + rng_b
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(bytes(out))
    tmp.replace(path)


class _Reader:
    def __init__(self, raw: bytes):
        self.raw, self.pos = raw, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointTruncatedError(f"checkpoint truncated at byte {self.pos} (wanted {n} more)")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> Checkpoint:
    r = _Reader(Path(path).read_bytes())
    if len(r.raw) < 4 or r.raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointMagicError(f"{path}: not a TAGN checkpoint")
    r.take(4)
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    meta = json.loads(r.take(r.u32()).decode("utf-8"))
    tensors = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        rows, cols = r.u32(), r.u32()
        tensors[name] = np.frombuffer(r.take(8 * rows * cols), dtype="<f8").reshape(rows, cols).astype(np.float64)
    rng_state = json.loads(r.take(r.u32()).decode("utf-8"))
    if r.pos != len(r.raw):
        raise CheckpointError(f"{path}: {len(r.raw) - r.pos} trailing bytes")

    params = TagNetParams(tensors["W"], tensors["S"], tensors["log_theta"].ravel(), K=meta["K"], alpha=meta["alpha"], N=meta["N"])
    head = LossHead(tensors["head.omega"], meta["head"]["kind"], meta["head"]["lam_omega"])
    aux: list[LossHead | None] = [None] * params.K
    for a in meta["aux"]:
        aux[a["stage"]] = LossHead(tensors[f"aux{a['stage']}.omega"], a["kind"], a["lam_omega"])
    perm = tensors["perm"].ravel().astype(np.int64) if "perm" in tensors else None
    return Checkpoint(
        params=params, head=head, aux_heads=aux, config=TrainConfig(**meta["config"]),
        rng_state=rng_state, iteration=meta["iteration"], epoch=meta["epoch"], cursor=meta["cursor"], perm=perm,
        extra=meta.get("extra", {}),
    )
