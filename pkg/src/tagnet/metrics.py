"""Clustering accuracy under the best label map, and normalized mutual information."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .numeric import DomainError, as_matrix


def hungarian(cost):
    """Minimum-cost assignment; rectangular input is zero-padded to square.

    Returns ``(assignment, total)`` where ``assignment[i]`` is the column
    given to row ``i`` of the padded square problem.
    """
    cost = as_matrix(cost, "cost")
    r, c = cost.shape
    n = max(r, c)
    square = np.zeros((n, n))
    square[:r, :c] = cost
    rows, cols = linear_sum_assignment(square)
    assignment = np.empty(n, dtype=np.int64)
    assignment[rows] = cols
    return assignment, float(square[rows, cols].sum())


def _labels(x) -> np.ndarray:
    return np.asarray(x).ravel()


def contingency(pred, truth) -> np.ndarray:
    pred, truth = _labels(pred), _labels(truth)
    if pred.size != truth.size:
        raise DomainError(f"label vectors differ in length ({pred.size} vs {truth.size})")
    _, pi = np.unique(pred, return_inverse=True)
    _, ti = np.unique(truth, return_inverse=True)
    table = np.zeros((pi.max(initial=-1) + 1, ti.max(initial=-1) + 1))
    np.add.at(table, (pi, ti), 1.0)
    return table


def clustering_accuracy(pred, truth) -> float:
    table = contingency(pred, truth)
    if table.size == 0:
        return 1.0
    assignment, total = hungarian(-table)
    return float(-total / table.sum())


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def nmi(pred, truth) -> float:
    """``I(pred; truth) / sqrt(H(pred) H(truth))`` in nats.

    Two constant labelings score 1; a constant labeling against a
    non-constant one scores 0.
    """
    table = contingency(pred, truth)
    n = table.sum()
    if n == 0:
        return 1.0
    h_pred = _entropy(table.sum(axis=1))
    h_truth = _entropy(table.sum(axis=0))
    if h_pred == 0.0 and h_truth == 0.0:
        return 1.0
    if h_pred == 0.0 or h_truth == 0.0:
        return 0.0
    joint = table / n
    outer = np.outer(joint.sum(axis=1), joint.sum(axis=0))
    nz = joint > 0
    mi = float(np.sum(joint[nz] * np.log(joint[nz] / outer[nz])))
    return min(max(mi / np.sqrt(h_pred * h_truth), 0.0), 1.0)
