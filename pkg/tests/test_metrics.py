import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_force_accuracy, brute_force_assignment, nmi_from_table
from tagnet.metrics import clustering_accuracy, contingency, hungarian, nmi
from tagnet.numeric import DomainError


def test_hungarian_identity_cost():
    cost = 1.0 - np.eye(4)
    assignment, total = hungarian(cost)
    assert assignment.tolist() == [0, 1, 2, 3]
    assert total == 0.0


def test_hungarian_single_entry():
    assignment, total = hungarian([[7.0]])
    assert assignment.tolist() == [0] and total == 7.0


@pytest.mark.parametrize("seed", range(10))
def test_hungarian_matches_permutation_search(seed):
    cost = np.random.default_rng(seed).integers(0, 20, (6, 6)).astype(float)
    _, total = hungarian(cost)
    assert total == brute_force_assignment(cost.tolist())
    assert total <= np.trace(cost)


def test_hungarian_pads_rectangular():
    assignment, total = hungarian([[1.0, 5.0, 0.5]])
    assert total == 0.5 and assignment[0] == 2


@pytest.mark.parametrize("pred, truth, expected", [
    ([0, 1, 2, 0], [0, 1, 2, 0], 1.0),
    ([0, 0, 1, 1], [1, 1, 0, 0], 1.0),
    ([0, 1, 0, 1], [0, 0, 1, 1], 0.5),
])
def test_accuracy_examples(pred, truth, expected):
    assert clustering_accuracy(pred, truth) == expected


def test_length_mismatch():
    with pytest.raises(DomainError):
        clustering_accuracy([0, 1], [0])
    with pytest.raises(DomainError):
        nmi([0, 1], [0, 1, 1])


@settings(max_examples=300, deadline=None)
@given(st.data())
def test_accuracy_matches_brute_force(data):
    n = data.draw(st.integers(1, 10))
    k = data.draw(st.integers(1, 4))
    pred = data.draw(st.lists(st.integers(0, k - 1), min_size=n, max_size=n))
    truth = data.draw(st.lists(st.integers(0, k - 1), min_size=n, max_size=n))
    assert clustering_accuracy(pred, truth) == pytest.approx(brute_force_accuracy(pred, truth), abs=1e-12)


def test_nmi_examples():
    assert nmi([0, 0, 1, 1, 2], [0, 0, 1, 1, 2]) == pytest.approx(1.0, abs=1e-12)
    assert nmi([0, 0, 0, 0], [0, 1, 0, 1]) == 0.0
    assert nmi([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(0.0, abs=1e-15)
    assert nmi([3, 3, 3], [1, 1, 1]) == 1.0


def test_nmi_against_contingency_fixture():
    pred = [0, 0, 0, 1, 1, 1, 2, 2]
    truth = [0, 0, 1, 1, 1, 2, 2, 2]
    table = [[2, 1, 0], [0, 2, 1], [0, 0, 2]]
    assert contingency(pred, truth).tolist() == table
    assert nmi(pred, truth) == pytest.approx(nmi_from_table(table), abs=1e-12)


labelings = st.lists(st.integers(0, 4), min_size=2, max_size=30)


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_relabeling_invariance_and_symmetry(data):
    n = data.draw(st.integers(2, 30))
    a = np.array(data.draw(st.lists(st.integers(0, 4), min_size=n, max_size=n)))
    b = np.array(data.draw(st.lists(st.integers(0, 4), min_size=n, max_size=n)))
    perm = np.array(data.draw(st.permutations(range(5))))
    assert clustering_accuracy(perm[a], b) == pytest.approx(clustering_accuracy(a, b), abs=1e-12)
    assert nmi(perm[a], b) == pytest.approx(nmi(a, b), abs=1e-12)
    assert nmi(a, b) == pytest.approx(nmi(b, a), abs=1e-12)
    assert 0.0 <= nmi(a, b) <= 1.0


@pytest.mark.parametrize("seed", range(20))
def test_accuracy_pigeonhole_bound_on_balanced_classes(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 6))
    truth = np.repeat(np.arange(k), 7)
    pred = rng.integers(0, k, truth.size)
    assert clustering_accuracy(pred, truth) >= 1.0 / k
