import numpy as np
import pytest

from oracles import exhaustive_median_distance, laplacian_double_sum
from tagnet.graph import (
    build_affinity,
    build_graph,
    build_laplacian,
    export_csv,
    median_bandwidth,
    restrict,
)
from tagnet.numeric import DegenerateDataError, DomainError


def test_median_bandwidth_single_pair():
    X = np.array([[0.0, 2.0], [0.0, 0.0]])
    assert median_bandwidth(X, 100, rng=0) == 2.0


def test_median_bandwidth_degenerate():
    with pytest.raises(DegenerateDataError):
        median_bandwidth(np.ones((3, 5)), 50, rng=0)


def test_median_bandwidth_matches_exhaustive():
    X = np.random.default_rng(0).standard_normal((10, 100))
    exact = exhaustive_median_distance(X)
    assert median_bandwidth(X, 20_000, rng=1) == pytest.approx(exact, rel=0.10)


def test_affinity_values():
    X = np.array([[0.0, 0.0, 1.5], [0.0, 0.0, 0.0]])
    P = build_affinity(X, delta=1.5)
    assert P[0, 1] == pytest.approx(1.0, abs=1e-15)
    assert P[0, 2] == pytest.approx(np.exp(-1.0), abs=1e-12)
    assert np.all(np.diag(P) == 1.0)


def test_affinity_wide_bandwidth_all_ones():
    X = np.random.default_rng(1).uniform(-1, 1, (4, 7))
    assert np.allclose(build_affinity(X, 1e9), 1.0, atol=1e-6)


def test_affinity_exactly_symmetric_in_unit_interval():
    X = np.random.default_rng(2).standard_normal((6, 40))
    P = build_affinity(X, 2.0)
    assert np.array_equal(P, P.T)
    assert np.all((P > 0) & (P <= 1))


def test_affinity_rejects_nonpositive_bandwidth():
    with pytest.raises(DomainError):
        build_affinity(np.zeros((2, 2)), 0.0)


def test_laplacian_examples():
    assert np.array_equal(build_laplacian(np.ones((2, 2))), [[1.0, -1.0], [-1.0, 1.0]])
    assert np.array_equal(build_laplacian(np.eye(3)), np.zeros((3, 3)))


def test_laplacian_rejects_asymmetric():
    with pytest.raises(DomainError):
        build_laplacian(np.array([[1.0, 0.5], [0.2, 1.0]]))


@pytest.mark.parametrize("seed", range(5))
def test_laplacian_quadratic_form_matches_double_sum(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((5, 8))
    P = rng.uniform(0, 1, (8, 8))
    P = 0.5 * (P + P.T)
    L = build_laplacian(P)
    assert np.trace(A @ L @ A.T) == pytest.approx(laplacian_double_sum(A, P), rel=1e-9)


def test_laplacian_psd_and_zero_row_sums():
    rng = np.random.default_rng(7)
    g = build_graph(rng.standard_normal((5, 60)), rng=0)
    assert np.max(np.abs(g.L.sum(axis=1))) < 1e-12
    for _ in range(100):
        x = rng.standard_normal(60)
        assert x @ g.L @ x >= -1e-10


def test_restrict():
    rng = np.random.default_rng(3)
    P = rng.uniform(size=(6, 6))
    L = build_laplacian(0.5 * (P + P.T))
    assert np.array_equal(restrict(L, range(6)), L)
    assert np.array_equal(restrict(L, [4]), [[L[4, 4]]])
    sub = restrict(L, [5, 1, 3])
    assert np.array_equal(sub, sub.T)
    assert sub[0, 1] == L[5, 1]


@pytest.mark.parametrize("idx", [[0, 0], [6], [-1]])
def test_restrict_rejects_bad_indices(idx):
    with pytest.raises(DomainError):
        restrict(np.eye(6), idx)


def test_export_csv_round_trip(tmp_path):
    M = np.random.default_rng(0).standard_normal((3, 3))
    export_csv(M, tmp_path / "P.csv")
    back = np.loadtxt(tmp_path / "P.csv", delimiter=",")
    assert np.array_equal(back, M)
