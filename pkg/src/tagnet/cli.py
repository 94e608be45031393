"""``tagnet`` command line: train, sweep, baseline, dtagnet, eval and dict verbs."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import experiment as ex
from .graph import build_graph
from .losses import predict
from .metrics import clustering_accuracy, nmi
from .network import forward
from .numeric import derive_rng
from .sparse_coding import ksvd
from .trainer import CheckpointError, ConfigError, load_checkpoint

log = logging.getLogger("tagnet")


def _safe_run_once(args):
    ds, cfg, run = args
    try:
        return ex.run_once(ds, cfg, run)
    except Exception as exc:  # one failed run must not take the others down
        log.error("run %d failed: %s", run, exc)
        return exc


def run_many(ds, cfg, parallel: int) -> list:
    """All ``cfg.runs`` runs, ordered by run index; failures come back as exceptions."""
    jobs = [(ds, cfg, r) for r in range(cfg.runs)]
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(_safe_run_once, jobs))
    return [_safe_run_once(j) for j in jobs]


def _fmt(v):
    return "n/a" if v is None else f"{v:.4f}"


# -- verbs -------------------------------------------------------------------------


def cmd_train(cfg, out: Path, parallel: int) -> int:
    ds = ex.load_dataset(cfg.data)
    results = run_many(ds, cfg, parallel)
    ok = [r for r in results if not isinstance(r, Exception)]
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for r in ok:
        rows.append([r.run, r.seed, r.label, r.lam, r.delta, r.nj_accuracy, r.nj_nmi, r.accuracy, r.nmi, r.final_loss])
        ex.write_atomic(out / f"history_run{r.run}.csv", r.history_csv)
        ex.write_checkpoint(out, r)
    header = ["run", "seed", "model", "lambda", "delta", "nj_accuracy", "nj_nmi", "accuracy", "nmi", "final_loss"]
    ex.write_atomic(out / "runs.csv", ex.csv_text(header, rows))
    summary = []
    for name, col in (("nj_accuracy", 5), ("nj_nmi", 6), ("accuracy", 7), ("nmi", 8)):
        mean, std = ex.mean_std(row[col] for row in rows)
        summary.append([cfg.model_label(), name, mean, std, len(rows)])
    ex.write_atomic(out / "summary.csv", ex.csv_text(["model", "metric", "mean", "std", "runs"], summary))
    ex.write_manifest(out, "train", cfg, [cfg.seed + r for r in range(cfg.runs)])
    for row in summary:
        print(f"{row[0]} {row[1]}: {_fmt(row[2])} +/- {_fmt(row[3])} over {row[4]} runs")
    return _status(results)


def _sweep_config(cfg, axis: str, value: float):
    if axis == "alpha":
        if value < 0:
            raise ConfigError("alpha sweep values must be nonnegative")
        return replace(cfg, alpha=float(value))
    if axis == "noise":
        if value < 0:
            raise ConfigError("noise levels must be nonnegative")
        return replace(cfg, data=replace(cfg.data, noise=float(value)))
    k = int(value)
    if k != value or k < 2:
        raise ConfigError(f"cluster counts must be integers >= 2, got {value}")
    return replace(cfg, n_clusters=k)


def cmd_sweep(cfg, out: Path, parallel: int, axis: str, values) -> int:
    if axis not in ex.SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {', '.join(ex.SWEEP_AXES)}")
    if not values:
        raise ConfigError("sweep needs values (--values or [sweep] values)")
    configs = [(v, _sweep_config(cfg, axis, v)) for v in values]
    base = ex.load_dataset(cfg.data)
    if axis == "clusters" and base.n_classes is not None:
        bad = [v for v in values if v > base.n_classes]
        if bad:
            raise ConfigError(f"cluster counts {bad} exceed the {base.n_classes} true classes")
    rows, results = [], []
    for value, vcfg in configs:
        ds = ex.load_dataset(vcfg.data) if axis == "noise" else base
        res = run_many(ds, vcfg, parallel)
        results += res
        for run, r in enumerate(res):
            if not isinstance(r, Exception):
                rows.append([value, run, r.accuracy, r.nmi])
        accs = [r.accuracy for r in res if not isinstance(r, Exception)]
        print(f"{axis}={value:g}: mean accuracy {_fmt(ex.mean_std(accs)[0])}")
    out.mkdir(parents=True, exist_ok=True)
    ex.write_atomic(out / f"sweep_{axis}.csv", ex.csv_text(["value", "run", "accuracy", "nmi"], rows))
    ex.write_manifest(out, "sweep", cfg, [cfg.seed + r for r in range(cfg.runs)], {"axis": axis, "values": list(values)})
    return _status(results)


def cmd_baseline(cfg, out: Path, parallel: int) -> int:
    ds = ex.load_dataset(cfg.data)
    results = run_many(ds, cfg, parallel)
    rows = []
    failed = []
    for run, r in enumerate(results):
        if isinstance(r, Exception):
            failed.append(r)
            continue
        try:
            sc_acc, sc_nmi = ex.run_sc_baseline(ds, cfg, run)
        except Exception as exc:
            log.error("baseline run %d failed: %s", run, exc)
            failed.append(exc)
            continue
        rows.append([f"SC-{cfg.kind}", run, r.seed, sc_acc, sc_nmi])
        rows.append([f"NJ-{r.label}", run, r.seed, r.nj_accuracy, r.nj_nmi])
        rows.append([r.label, run, r.seed, r.accuracy, r.nmi])
    out.mkdir(parents=True, exist_ok=True)
    ex.write_atomic(out / "baseline.csv", ex.csv_text(["method", "run", "seed", "accuracy", "nmi"], rows))
    ex.write_manifest(out, "baseline", cfg, [cfg.seed + r for r in range(cfg.runs)])
    for method in dict.fromkeys(row[0] for row in rows):
        acc = ex.mean_std(row[3] for row in rows if row[0] == method)[0]
        score = ex.mean_std(row[4] for row in rows if row[0] == method)[0]
        print(f"{method}: accuracy {_fmt(acc)} nmi {_fmt(score)}")
    return 1 if failed else 0


DTAGNET_VARIANTS = (("none", ()), ("stage1", (0,)), ("stage2", (1,)), ("both", (0, 1)))


def dtagnet_plan(cfg, ds, aux_counts=None) -> list[tuple[str, dict, dict]]:
    """(variant name, stage -> clusters, stage -> attribute) for every variant to train."""
    if aux_counts:
        return [(f"stage1-{c}", {0: int(c)}, {}) for c in aux_counts]
    if cfg.K < 2:
        raise ConfigError("the four-variant comparison needs a network with at least 2 stages")
    counts = dict(cfg.aux)
    attrs = dict(cfg.aux_attributes)
    if not counts and {"pose", "expression"} <= set(ds.attribute_labels):
        counts = {0: int(ds.attribute_labels["pose"].max()) + 1, 1: int(ds.attribute_labels["expression"].max()) + 1}
        attrs = {0: "pose", 1: "expression"}
    missing = [s for s in (0, 1) if s not in counts]
    if missing:
        raise ConfigError(f"dtagnet needs aux cluster counts for stages {[s + 1 for s in missing]}")
    plan = []
    for name, stages in DTAGNET_VARIANTS:
        plan.append((name, {s: counts[s] for s in stages}, {s: attrs[s] for s in stages if s in attrs}))
    return plan


def cmd_dtagnet(cfg, out: Path, parallel: int, aux_counts=None) -> int:
    ds = ex.load_dataset(cfg.data)
    plan = dtagnet_plan(cfg, ds, aux_counts)
    rows, results = [], []
    for name, counts, attrs in plan:
        vcfg = replace(cfg, aux=counts, aux_attributes=attrs).validate()
        res = run_many(ds, vcfg, parallel)
        results += res
        for run, r in enumerate(res):
            if isinstance(r, Exception):
                continue
            rows.append([cfg.kind, name, run, r.accuracy, r.nmi, r.aux_accuracy.get(0), r.aux_accuracy.get(1)])
        accs = [r.accuracy for r in res if not isinstance(r, Exception)]
        print(f"{cfg.kind} {name}: overall accuracy {_fmt(ex.mean_std(accs)[0])}")
    out.mkdir(parents=True, exist_ok=True)
    header = ["loss", "variant", "run", "accuracy", "nmi", "aux1_accuracy", "aux2_accuracy"]
    ex.write_atomic(out / "dtagnet.csv", ex.csv_text(header, rows))
    extra = {"aux_counts": list(aux_counts)} if aux_counts else None
    ex.write_manifest(out, "dtagnet", cfg, [cfg.seed + r for r in range(cfg.runs)], extra)
    return _status(results)


def cmd_eval(cfg, out: Path, checkpoint: Path) -> int:
    if not checkpoint.is_file():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
    cp = load_checkpoint(checkpoint)
    ds = ex.load_dataset(cfg.data)
    delta = cp.extra.get("delta")
    graph = build_graph(ds.X, delta) if delta else ex.run_graph(ds, cfg, cp.extra.get("seed", cfg.seed))
    acts = forward(cp.params, ds.X, graph.L)
    labels = predict(acts.A, cp.head)
    acc = score = None
    if ds.labels is not None:
        acc, score = clustering_accuracy(labels, ds.labels), nmi(labels, ds.labels)
    out.mkdir(parents=True, exist_ok=True)
    ex.write_atomic(out / "eval.csv", ex.csv_text(["checkpoint", "accuracy", "nmi"], [[str(checkpoint), acc, score]]))
    ex.write_atomic(out / "labels.csv", ex.csv_text(["sample", "cluster"], [[i, int(c)] for i, c in enumerate(labels)]))
    ex.write_manifest(out, "eval", cfg, [cp.extra.get("seed", cfg.seed)], {"checkpoint": checkpoint})
    print(f"accuracy {_fmt(acc)} nmi {_fmt(score)}")
    return 0


def cmd_dict(cfg, out: Path) -> int:
    ds = ex.load_dataset(cfg.data)
    D, errors = ksvd(ds.X, cfg.p, cfg.ksvd_iters, cfg.ksvd_sparsity, rng=derive_rng(cfg.seed, ex._STREAM_DICT))
    out.mkdir(parents=True, exist_ok=True)
    ex.write_atomic(out / "dictionary.csv", ex.csv_text([f"atom{j}" for j in range(D.p)], D.D.tolist()))
    ex.write_atomic(out / "ksvd_errors.csv", ex.csv_text(["iteration", "error"], [[i, e] for i, e in enumerate(errors)]))
    ex.write_manifest(out, "dict", cfg, [cfg.seed])
    print(f"K-SVD: {D.p} atoms, final error {errors[-1]:.6g}")
    return 0


def _status(results) -> int:
    return 1 if any(isinstance(r, Exception) for r in results) else 0


# -- argument handling -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config (INI); defaults describe a synthetic run")
    common.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    common.add_argument("--seed", type=int, help="base seed; run r uses seed + r")
    common.add_argument("--runs", type=int, help="number of independent runs")
    common.add_argument("--parallel", type=int, default=1, help="worker processes for independent runs")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="tagnet", description="Unrolled graph-regularized sparse coding for clustering.")
    sub = ap.add_subparsers(dest="verb", required=True)
    sub.add_parser("train", parents=[common], help="train the network for each run")
    sw = sub.add_parser("sweep", parents=[common], help="train across values of alpha, cluster count or noise")
    sw.add_argument("--axis", choices=ex.SWEEP_AXES)
    sw.add_argument("--values", help="comma-separated sweep values")
    sub.add_parser("baseline", parents=[common], help="sparse-coding baseline vs untrained and trained network")
    dt = sub.add_parser("dtagnet", parents=[common], help="auxiliary-head variants")
    dt.add_argument("--aux-counts", help="comma-separated stage-1 cluster counts, run without attribute labels")
    ev = sub.add_parser("eval", parents=[common], help="metrics of a saved checkpoint")
    ev.add_argument("--checkpoint", type=Path, required=True)
    sub.add_parser("dict", parents=[common], help="learn a K-SVD dictionary only")
    return ap


def resolve_config(args) -> ex.ExperimentConfig:
    cfg = ex.load_config(args.config) if args.config else ex.parse_config("")
    if args.seed is not None:
        cfg.seed = args.seed
    if args.runs is not None:
        cfg.runs = args.runs
    if getattr(args, "axis", None):
        cfg.sweep_axis = args.axis
    if getattr(args, "values", None):
        cfg.sweep_values = tuple(float(v) for v in args.values.split(","))
    return cfg.validate()


def _threads() -> int | None:
    raw = os.environ.get(ex.THREADS_ENV, "")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{ex.THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{ex.THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def dispatch(args) -> int:
    cfg = resolve_config(args)
    ex.check_inputs(cfg.data)  # fail before anything is written
    if args.parallel < 1:
        raise ConfigError("--parallel must be >= 1")
    if cfg.alpha == 0:
        log.info("alpha = 0: this is the LISTA ablation (no graph branch)")
    if args.verb == "train":
        return cmd_train(cfg, args.out, args.parallel)
    if args.verb == "sweep":
        return cmd_sweep(cfg, args.out, args.parallel, cfg.sweep_axis, cfg.sweep_values)
    if args.verb == "baseline":
        return cmd_baseline(cfg, args.out, args.parallel)
    if args.verb == "dtagnet":
        counts = [int(c) for c in args.aux_counts.split(",")] if args.aux_counts else None
        return cmd_dtagnet(cfg, args.out, args.parallel, counts)
    if args.verb == "eval":
        return cmd_eval(cfg, args.out, args.checkpoint)
    return cmd_dict(cfg, args.out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        threads = _threads()
        with threadpool_limits(limits=threads):
            return dispatch(args)
    except (ConfigError, FileNotFoundError, CheckpointError, ValueError) as exc:
        print(f"tagnet: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
