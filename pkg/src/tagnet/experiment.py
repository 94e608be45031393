"""Experiment recipes: config parsing, the per-run pipeline and result tables.

A config file is INI-style text read with :mod:`configparser`. Sections are
``[data]``, ``[model]``, ``[train]``, ``[experiment]`` and, optionally,
``[sweep]``. Every key has a default, so an empty file describes a valid
(synthetic) experiment.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import Dataset, add_noise, load_csv, load_idx, normalize, synth_blobs, synth_hierarchical
from .graph import GraphPair, build_graph, median_bandwidth
from .losses import init_head, predict
from .metrics import clustering_accuracy, nmi
from .network import forward, init_from_dictionary
from .numeric import derive_rng
from .sparse_coding import ksvd
from .trainer import BaselineConfig, ConfigError, TrainConfig, Trainer, run_baseline_sc, save_checkpoint

log = logging.getLogger(__name__)

DEFAULT_LAMBDAS = (0.1, 0.3, 0.5, 1.0)
COIL20_ENV = "TAGNET_COIL20_CSV"
THREADS_ENV = "UNROLL_CLUSTER_THREADS"
SWEEP_AXES = ("alpha", "clusters", "noise")

# seed streams, so that dictionary, head and SGD randomness never share a generator
_STREAM_GRAPH, _STREAM_DICT, _STREAM_HEAD, _STREAM_TRAIN, _STREAM_AUX = range(5)


@dataclass
class DataSpec:
    kind: str = "blobs"  # blobs | hierarchical | csv | idx | coil20
    path: str = ""
    labels_path: str = ""
    has_labels: bool = True
    m: int = 20
    n: int = 600
    clusters: int = 3
    separation: float = 4.0
    counts: tuple[int, int, int] = (5, 6, 30)
    noise: float = 0.0
    seed: int = 0
    limit: int = 0


@dataclass
class ExperimentConfig:
    data: DataSpec = field(default_factory=DataSpec)
    p: int = 128
    lambdas: tuple[float, ...] = DEFAULT_LAMBDAS
    alpha: float = 5.0
    K: int = 2
    delta: float | None = None
    ksvd_iters: int = 10
    ksvd_sparsity: int = 5
    kind: str = "MML"
    n_clusters: int | None = None
    head_epochs: int = 2
    lam_omega: float = 0.01
    aux: dict[int, int] = field(default_factory=dict)
    aux_attributes: dict[int, str] = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    runs: int = 5
    seed: int = 0
    sweep_axis: str = ""
    sweep_values: tuple[float, ...] = ()

    def validate(self) -> "ExperimentConfig":
        if self.kind not in ("EML", "MML"):
            raise ConfigError(f"unknown loss kind {self.kind!r}")
        if self.p < 1 or self.K < 1 or self.runs < 1:
            raise ConfigError("p, K and runs must be positive")
        if not self.lambdas or any(lam <= 0 for lam in self.lambdas):
            raise ConfigError("lambda candidates must be positive")
        if self.alpha < 0:
            raise ConfigError("alpha must be nonnegative")
        if self.delta is not None and self.delta <= 0:
            raise ConfigError("delta must be positive")
        for stage, count in self.aux.items():
            if not 0 <= stage < self.K:
                raise ConfigError(f"auxiliary head on stage {stage + 1}, but the network has {self.K} stages")
            if count < 2:
                raise ConfigError("auxiliary heads need at least 2 clusters")
        if self.sweep_axis and self.sweep_axis not in SWEEP_AXES:
            raise ConfigError(f"unknown sweep axis {self.sweep_axis!r}; expected one of {', '.join(SWEEP_AXES)}")
        return self

    def model_label(self) -> str:
        net = "LISTA" if self.alpha == 0 else ("DTAGnet" if self.aux else "TAGnet")
        return f"{net}-{self.kind}"


# -- config files ------------------------------------------------------------------


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _stage_map(text: str, cast) -> dict[int, object]:
    """``"1:5, 2:6"`` -> ``{0: 5, 1: 6}``; stages are 1-based in files."""
    out = {}
    for item in text.replace(",", " ").split():
        stage, _, value = item.partition(":")
        if not value:
            raise ConfigError(f"malformed stage entry {item!r}; expected stage:value")
        out[int(stage) - 1] = cast(value)
    return out


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from exc
    known = {"data", "model", "train", "experiment", "sweep"}
    unknown = set(cp.sections()) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(sorted(unknown))}")

    def sec(name):
        return cp[name] if cp.has_section(name) else {}

    try:
        d = sec("data")
        data = DataSpec(
            kind=d.get("kind", "blobs"),
            path=d.get("path", ""),
            labels_path=d.get("labels_path", ""),
            has_labels=str(d.get("has_labels", "true")).lower() in ("1", "true", "yes"),
            m=int(d.get("m", 20)),
            n=int(d.get("n", 600)),
            clusters=int(d.get("clusters", 3)),
            separation=float(d.get("separation", 4.0)),
            counts=tuple(int(v) for v in _floats(d.get("counts", "5 6 30"))),
            noise=float(d.get("noise", 0.0)),
            seed=int(d.get("seed", 0)),
            limit=int(d.get("limit", 0)),
        )
        m = sec("model")
        lam = m.get("lambda", "")
        cfg = ExperimentConfig(
            data=data,
            p=int(m.get("p", 128)),
            lambdas=_floats(lam) if lam else DEFAULT_LAMBDAS,
            alpha=float(m.get("alpha", 5.0)),
            K=int(m.get("stages", 2)),
            delta=float(m["delta"]) if m.get("delta", "") not in ("", "median") else None,
            ksvd_iters=int(m.get("ksvd_iters", 10)),
            ksvd_sparsity=int(m.get("ksvd_sparsity", 5)),
            kind=m.get("loss", "MML").upper(),
            n_clusters=int(m["clusters"]) if m.get("clusters", "") else None,
            head_epochs=int(m.get("head_epochs", 2)),
            lam_omega=float(m.get("lam_omega", 0.01)),
            aux={k: int(v) for k, v in _stage_map(m.get("aux", ""), int).items()},
            aux_attributes=_stage_map(m.get("aux_attributes", ""), str),
        )
        t = sec("train")
        cfg.train = TrainConfig(
            learning_rate=float(t.get("learning_rate", 0.01)),
            momentum=float(t.get("momentum", 0.0)),
            batch_size=int(t.get("batch_size", 128)),
            epochs=int(t.get("epochs", 30)),
            aux_weights=list(_floats(t.get("aux_weights", ""))),
            eval_every=int(t.get("eval_every", 100)),
            reduction=t.get("reduction", "mean"),
        )
        e = sec("experiment")
        cfg.runs = int(e.get("runs", 5))
        cfg.seed = int(e.get("seed", 0))
        s = sec("sweep")
        cfg.sweep_axis = s.get("axis", "")
        cfg.sweep_values = _floats(s.get("values", ""))
    except (ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad config value: {exc}") from exc
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"))


def render_config(cfg: ExperimentConfig) -> str:
    """The fully resolved config, in the same format ``parse_config`` reads."""

    def stages(mapping):
        return ", ".join(f"{k + 1}:{v}" for k, v in sorted(mapping.items()))

    d = cfg.data
    t = cfg.train
    cp = configparser.ConfigParser()
    cp["data"] = {
        "kind": d.kind, "path": d.path, "labels_path": d.labels_path, "has_labels": str(d.has_labels).lower(),
        "m": str(d.m), "n": str(d.n), "clusters": str(d.clusters), "separation": repr(d.separation),
        "counts": " ".join(map(str, d.counts)), "noise": repr(d.noise), "seed": str(d.seed), "limit": str(d.limit),
    }
    cp["model"] = {
        "p": str(cfg.p), "lambda": " ".join(map(repr, cfg.lambdas)), "alpha": repr(cfg.alpha),
        "stages": str(cfg.K), "delta": "median" if cfg.delta is None else repr(cfg.delta),
        "ksvd_iters": str(cfg.ksvd_iters), "ksvd_sparsity": str(cfg.ksvd_sparsity), "loss": cfg.kind,
        "clusters": "" if cfg.n_clusters is None else str(cfg.n_clusters), "head_epochs": str(cfg.head_epochs),
        "lam_omega": repr(cfg.lam_omega), "aux": stages(cfg.aux), "aux_attributes": stages(cfg.aux_attributes),
    }
    cp["train"] = {
        "learning_rate": repr(t.learning_rate), "momentum": repr(t.momentum), "batch_size": str(t.batch_size),
        "epochs": str(t.epochs), "aux_weights": " ".join(map(repr, t.aux_weights)),
        "eval_every": str(t.eval_every), "reduction": t.reduction,
    }
    cp["experiment"] = {"runs": str(cfg.runs), "seed": str(cfg.seed)}
    if cfg.sweep_axis:
        cp["sweep"] = {"axis": cfg.sweep_axis, "values": " ".join(map(repr, cfg.sweep_values))}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


# -- data --------------------------------------------------------------------------


def input_paths(spec: DataSpec) -> list[Path]:
    if spec.kind == "coil20":
        path = spec.path or os.environ.get(COIL20_ENV, "")
        if not path:
            raise ConfigError(f"COIL20 needs [data] path or the {COIL20_ENV} environment variable")
        return [Path(path)]
    if spec.kind in ("csv", "idx"):
        if not spec.path:
            raise ConfigError(f"[data] kind = {spec.kind} needs a path")
        paths = [Path(spec.path)]
        if spec.kind == "idx" and spec.labels_path:
            paths.append(Path(spec.labels_path))
        return paths
    if spec.kind in ("blobs", "hierarchical"):
        return []
    raise ConfigError(f"unknown dataset kind {spec.kind!r}")


def check_inputs(spec: DataSpec) -> list[Path]:
    paths = input_paths(spec)
    for p in paths:
        if not p.is_file():
            raise FileNotFoundError(f"dataset file not found: {p}")
    return paths


def load_dataset(spec: DataSpec) -> Dataset:
    """Load or generate the raw dataset, add configured noise, then unit-normalize samples."""
    paths = check_inputs(spec)
    if spec.kind == "blobs":
        ds = synth_blobs(spec.m, spec.n, spec.clusters, spec.separation, seed=spec.seed)
    elif spec.kind == "hierarchical":
        ds = synth_hierarchical(spec.m, spec.n, spec.counts, seed=spec.seed, separation=spec.separation)
    elif spec.kind == "idx":
        ds = load_idx(paths[0], paths[1] if len(paths) > 1 else None)
    else:
        ds = load_csv(paths[0], has_labels=spec.has_labels, name=spec.kind)
    if spec.limit and spec.limit < ds.n:
        ds = ds.subset(np.arange(spec.limit))
    if spec.noise:
        ds = add_noise(ds, spec.noise, seed=spec.seed + 1)
    return normalize(ds)


def inputs_digest(spec: DataSpec) -> str:
    """sha256 over the input files, or over the generator parameters for synthetic data."""
    h = hashlib.sha256()
    paths = input_paths(spec)
    if not paths:
        h.update(json.dumps(asdict(spec), sort_keys=True).encode())
    for p in paths:
        with open(p, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    return h.hexdigest()


# -- one run -----------------------------------------------------------------------


@dataclass
class RunResult:
    run: int
    seed: int
    label: str
    lam: float
    delta: float
    nj_accuracy: float | None
    nj_nmi: float | None
    accuracy: float | None
    nmi: float | None
    final_loss: float
    aux_accuracy: dict[int, float] = field(default_factory=dict)
    history_csv: str = ""
    trainer: Trainer | None = field(default=None, repr=False)


def _metrics(labels, truth):
    if truth is None:
        return None, None
    return clustering_accuracy(labels, truth), nmi(labels, truth)


def run_graph(ds: Dataset, cfg: ExperimentConfig, seed: int) -> GraphPair:
    delta = cfg.delta if cfg.delta is not None else median_bandwidth(ds.X, rng=derive_rng(seed, _STREAM_GRAPH))
    return build_graph(ds.X, delta)


def _n_clusters(ds: Dataset, cfg: ExperimentConfig) -> int:
    k = cfg.n_clusters or ds.n_classes
    if not k or k < 2:
        raise ConfigError("number of clusters unknown: set [model] clusters for unlabelled data")
    return k


def train_one(ds: Dataset, graph: GraphPair, D, cfg: ExperimentConfig, lam: float, seed: int, run: int) -> RunResult:
    """Initialize from ``D``, record the not-jointly-trained metrics, then train."""
    k = _n_clusters(ds, cfg)
    params = init_from_dictionary(D, lam, cfg.alpha, cfg.K)
    acts = forward(params, ds.X, graph.L)
    head_kw = dict(epochs=cfg.head_epochs, lam_omega=cfg.lam_omega)
    head = init_head(acts.A, k, cfg.kind, rng=derive_rng(seed, _STREAM_HEAD), **head_kw)
    aux = {
        stage: init_head(acts.Z[stage], count, cfg.kind, rng=derive_rng(seed, _STREAM_AUX, stage), **head_kw)
        for stage, count in cfg.aux.items()
    }
    nj_acc, nj_nmi = _metrics(predict(acts.A, head), ds.labels)
    tcfg = replace(cfg.train, seed=int(derive_rng(seed, _STREAM_TRAIN).integers(2**31)))
    trainer = Trainer(ds, graph, params, head, aux, tcfg)
    history = trainer.run()
    final = trainer.evaluate() if not history.records else history.records[-1]
    labels = trainer.labels()
    acc, score = _metrics(labels, ds.labels)
    aux_acc = {}
    for stage in cfg.aux:
        attr = cfg.aux_attributes.get(stage)
        if attr is not None:
            if attr not in ds.attribute_labels:
                raise ConfigError(f"dataset has no attribute {attr!r} for the stage-{stage + 1} head")
            aux_acc[stage] = clustering_accuracy(trainer.labels(stage), ds.attribute_labels[attr])
    return RunResult(
        run, seed, cfg.model_label(), lam, graph.delta, nj_acc, nj_nmi, acc, score,
        final.total_loss, aux_acc, history.to_csv(), trainer,
    )


def run_once(ds: Dataset, cfg: ExperimentConfig, run: int) -> RunResult:
    """One seeded run: graph, K-SVD dictionary, λ selection by lowest final training loss."""
    seed = cfg.seed + run
    graph = run_graph(ds, cfg, seed)
    D, _ = ksvd(ds.X, cfg.p, cfg.ksvd_iters, cfg.ksvd_sparsity, rng=derive_rng(seed, _STREAM_DICT))
    best = None
    for lam in cfg.lambdas:
        res = train_one(ds, graph, D, cfg, lam, seed, run)
        log.info("run %d lambda %g: final loss %.6g accuracy %s", run, lam, res.final_loss, res.accuracy)
        if best is None or res.final_loss < best.final_loss:
            best = res
    return best


def run_sc_baseline(ds: Dataset, cfg: ExperimentConfig, run: int) -> tuple[float | None, float | None]:
    """The sparse-coding baseline: exact graph-regularized codes plus a head."""
    seed = cfg.seed + run
    graph = run_graph(ds, cfg, seed)
    D, _ = ksvd(ds.X, cfg.p, cfg.ksvd_iters, cfg.ksvd_sparsity, rng=derive_rng(seed, _STREAM_DICT))
    best = None
    for lam in cfg.lambdas:
        bcfg = BaselineConfig(
            lam=lam, alpha=cfg.alpha, n_clusters=_n_clusters(ds, cfg), kind=cfg.kind,
            seed=int(derive_rng(seed, _STREAM_HEAD).integers(2**31)),
        )
        labels, metrics = run_baseline_sc(ds, graph, D, bcfg)
        # the same unsupervised rule as the network: lowest head loss on the codes wins
        if best is None or metrics["head_loss"] < best[0]:
            best = (metrics["head_loss"], metrics.get("accuracy"), metrics.get("nmi"))
    return best[1], best[2]


# -- output ------------------------------------------------------------------------


def write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for v in row])
    return buf.getvalue()


def mean_std(values) -> tuple[float | None, float | None]:
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    return float(np.mean(vals)), float(np.std(vals))


def write_manifest(out: Path, verb: str, cfg: ExperimentConfig, seeds: list[int], extra: dict | None = None) -> None:
    lines = [
        f"verb: {verb}",
        f"seeds: {' '.join(map(str, seeds))}",
        f"inputs_sha256: {inputs_digest(cfg.data)}",
    ]
    for key, value in (extra or {}).items():
        lines.append(f"{key}: {value}")
    lines += ["", render_config(cfg)]
    write_atomic(out / "manifest.txt", "\n".join(lines))


def write_checkpoint(out: Path, res: RunResult) -> None:
    cp = res.trainer.checkpoint()
    cp.extra = {"delta": res.delta, "seed": res.seed, "lambda": res.lam, "label": res.label}
    save_checkpoint(out / f"run{res.run}.tagn", cp)
