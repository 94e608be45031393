"""Datasets: IDX and CSV loaders, synthetic generators, noise injection.

Samples are stored as the columns of ``X`` (features x samples).
"""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .numeric import DomainError, make_rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataFormatError(ValueError):
    pass


class BadMagicError(DataFormatError):
    pass


class TruncatedFileError(DataFormatError):
    pass


class CountMismatchError(DataFormatError):
    pass


class CSVParseError(DataFormatError):
    def __init__(self, message: str, row: int):
        super().__init__(f"row {row}: {message}")
        self.row = row


@dataclass
class Dataset:
    X: np.ndarray
    labels: np.ndarray | None = None
    attribute_labels: dict[str, np.ndarray] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        n = self.X.shape[1]
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
            if self.labels.size != n:
                raise DomainError(f"{self.labels.size} labels for {n} samples")
        for key, lab in list(self.attribute_labels.items()):
            lab = np.asarray(lab, dtype=np.int64).ravel()
            if lab.size != n:
                raise DomainError(f"attribute {key!r} has {lab.size} labels for {n} samples")
            self.attribute_labels[key] = lab

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def n_classes(self) -> int | None:
        return None if self.labels is None else int(np.unique(self.labels).size)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.X[:, idx],
            None if self.labels is None else self.labels[idx],
            {k: v[idx] for k, v in self.attribute_labels.items()},
            self.name,
        )


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else path.open("rb")


def _read_idx(path, expected_magic: int, ndim: int) -> np.ndarray:
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4 + 4 * ndim:
        raise TruncatedFileError(f"{path}: header is truncated")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise BadMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    payload = raw[4 + 4 * ndim:]
    need = int(np.prod(dims))
    if len(payload) < need:
        raise TruncatedFileError(f"{path}: {len(payload)} payload bytes, header declares {need}")
    if len(payload) > need:
        raise DataFormatError(f"{path}: {len(payload) - need} trailing bytes after payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path=None, name: str = "") -> Dataset:
    """Read IDX (MNIST-format) images, optionally with labels; pixels scaled to [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    n = images.shape[0]
    X = images.reshape(n, -1).T.astype(np.float64) / 255.0
    labels = None
    if labels_path is not None:
        labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
        if labels.shape[0] != n:
            raise CountMismatchError(f"{n} images but {labels.shape[0]} labels")
    return Dataset(X, labels, name=name or Path(images_path).name)


def write_idx(images: np.ndarray, images_path, labels=None, labels_path=None) -> None:
    """Write uint8 images ``(n, rows, cols)`` and optional labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    with Path(images_path).open("wb") as fh:
        fh.write(struct.pack(">4I", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())
    if labels is not None:
        labels = np.asarray(labels, dtype=np.uint8)
        with Path(labels_path).open("wb") as fh:
            fh.write(struct.pack(">2I", IDX_LABELS_MAGIC, labels.size))
            fh.write(labels.tobytes())


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(path, has_labels: bool = False, name: str = "") -> Dataset:
    """One sample per row; an optional trailing integer label column.

    A first row containing any non-numeric cell is treated as a header.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [(i + 1, r) for i, r in enumerate(csv.reader(fh)) if r and any(c.strip() for c in r)]
    if rows and not all(_is_number(c) for c in rows[0][1]):
        rows = rows[1:]
    if not rows:
        raise CSVParseError("no data rows", 1)
    width = len(rows[0][1])
    values = []
    for lineno, row in rows:
        if len(row) != width:
            raise CSVParseError(f"expected {width} fields, found {len(row)}", lineno)
        try:
            values.append([float(c) for c in row])
        except ValueError as exc:
            raise CSVParseError(f"non-numeric cell ({exc})", lineno) from None
    M = np.array(values)
    labels = None
    if has_labels:
        if width < 2:
            raise CSVParseError("label column requested but rows have a single field", rows[0][0])
        labels = M[:, -1]
        if np.any(labels != np.round(labels)):
            raise CSVParseError("label column is not integral", rows[0][0])
        M = M[:, :-1]
    return Dataset(M.T, labels, name=name or path.stem)


def save_csv(ds: Dataset, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for i in range(ds.n):
            row = [repr(float(v)) for v in ds.X[:, i]]
            if ds.labels is not None:
                row.append(str(int(ds.labels[i])))
            writer.writerow(row)


def _balanced_labels(n: int, K: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(np.arange(n) % K)


def synth_blobs(m: int, n: int, K: int, separation: float, seed: int = 0) -> Dataset:
    """``K`` unit-variance Gaussian clusters centred at ``separation`` times random unit vectors."""
    if K > n:
        raise DomainError("more clusters than samples")
    rng = make_rng(seed)
    dirs = rng.standard_normal((m, K))
    dirs /= np.linalg.norm(dirs, axis=0)
    labels = _balanced_labels(n, K, rng)
    X = separation * dirs[:, labels] + rng.standard_normal((m, n))
    return Dataset(X, labels, name=f"blobs-m{m}-n{n}-K{K}-sep{separation:g}")


def synth_hierarchical(
    m: int,
    n: int,
    counts: tuple[int, int, int] = (5, 6, 30),
    seed: int = 0,
    separation: float = 3.0,
    noise: float = 1.0,
) -> Dataset:
    """Samples whose means add a pose, an expression and an identity offset.

    Each attribute lives in its own block of orthonormal directions, so the
    three offsets are mutually orthogonal. Pose and expression are drawn
    uniformly per sample; identity labels are balanced.
    """
    k_pose, k_expr, k_id = counts
    total = k_pose + k_expr + k_id
    if m < total:
        raise DomainError(f"m={m} too small for {total} orthogonal attribute directions")
    rng = make_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((m, total)))
    pose_dirs, expr_dirs, id_dirs = np.split(Q, [k_pose, k_pose + k_expr], axis=1)
    identity = _balanced_labels(n, k_id, rng)
    pose = rng.integers(0, k_pose, n)
    expr = rng.integers(0, k_expr, n)
    X = separation * (pose_dirs[:, pose] + expr_dirs[:, expr] + id_dirs[:, identity])
    X = X + noise * rng.standard_normal((m, n))
    return Dataset(X, identity, {"pose": pose, "expression": expr}, name=f"hier-{k_pose}-{k_expr}-{k_id}")


def add_noise(ds: Dataset, s: float, seed: int = 0) -> Dataset:
    if s < 0:
        raise DomainError("noise level must be nonnegative")
    if s == 0:
        return replace(ds, X=ds.X.copy())
    X = ds.X + s * make_rng(seed).standard_normal(ds.X.shape)
    return replace(ds, X=X)


def normalize(ds: Dataset) -> Dataset:
    norms = np.linalg.norm(ds.X, axis=0)
    return replace(ds, X=ds.X / np.where(norms > 0, norms, 1.0))
