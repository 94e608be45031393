import numpy as np
import pytest

from oracles import assert_grad_close, central_difference
from tagnet.losses import (
    LossHead,
    eml_loss,
    eml_probabilities,
    head_loss,
    init_head,
    mml_loss,
    predict,
)
from tagnet.metrics import clustering_accuracy
from tagnet.numeric import DomainError


def test_eml_uniform_entropy():
    loss, _, _ = eml_loss(np.ones((4, 1)), LossHead(np.zeros((4, 2)), "EML"))
    assert loss == pytest.approx(np.log(2), abs=1e-15)


def test_eml_probabilities_normalized():
    rng = np.random.default_rng(0)
    head = LossHead(30 * rng.standard_normal((5, 4)), "EML")
    P = eml_probabilities(rng.standard_normal((5, 50)), head)
    assert np.max(np.abs(P.sum(axis=0) - 1.0)) < 1e-12


def test_eml_survives_extreme_scores():
    head = LossHead(np.array([[1e4, -1e4, 0.0]]), "EML")
    loss, gA, gw = eml_loss(np.array([[1.0, -1.0]]), head)
    assert np.isfinite(loss) and np.all(np.isfinite(gA)) and np.all(np.isfinite(gw))
    assert loss == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_eml_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((6, 10))
    head = LossHead(rng.standard_normal((6, 3)), "EML")
    _, gA, gw = eml_loss(A, head)
    f = lambda: eml_loss(A, head)[0]
    assert_grad_close(gA, central_difference(f, A), rtol=1e-5)
    assert_grad_close(gw, central_difference(f, head.omega), rtol=1e-5)


def test_mml_examples():
    # omega picks out the two coordinates as the two scores
    head = LossHead(np.eye(2), "MML", lam_omega=0.0)
    assert mml_loss(np.array([[2.0], [0.5]]), head)[0] == 0.0
    assert mml_loss(np.array([[1.2], [1.0]]), head)[0] == pytest.approx(0.8, abs=1e-15)
    zero = LossHead(np.zeros((3, 2)), "MML", lam_omega=0.5)
    loss, _, _ = mml_loss(np.ones((3, 4)), zero)
    assert loss == 4.0


def mml_is_smooth_at(A, head, gap=1e-6):
    F = head.omega.T @ A
    s = np.sort(F, axis=0)[::-1]
    top_gap = s[0] - s[1]
    runner_gap = s[1] - s[2] if F.shape[0] > 2 else np.full(F.shape[1], np.inf)
    margin = 1 + s[1] - s[0]
    return top_gap.min() > gap and runner_gap.min() > gap and np.abs(margin).min() > gap


@pytest.mark.parametrize("seed", range(20))
def test_mml_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    while True:
        A = rng.standard_normal((6, 10))
        head = LossHead(0.7 * rng.standard_normal((6, 3)), "MML", lam_omega=0.05)
        if mml_is_smooth_at(A, head, 1e-3):
            break
    _, gA, gw = mml_loss(A, head)
    f = lambda: mml_loss(A, head)[0]
    assert_grad_close(gA, central_difference(f, A), rtol=1e-5)
    assert_grad_close(gw, central_difference(f, head.omega), rtol=1e-5)


def test_predict_rules():
    A = np.array([[1.0]])
    scores = np.array([[0.1, 0.9, 0.3]])
    assert predict(A, LossHead(scores, "MML"))[0] == 1
    assert predict(A, LossHead(scores, "EML"))[0] == 0
    assert predict(A, LossHead(np.ones((1, 3)), "MML"))[0] == 0
    assert predict(A, LossHead(np.ones((1, 3)), "EML"))[0] == 0


@pytest.mark.parametrize("seed", range(5))
def test_eml_shift_invariance_and_bounds(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((5, 20))
    omega = rng.standard_normal((5, 4))
    c = rng.standard_normal((5, 1))
    base = eml_loss(A, LossHead(omega, "EML"))[0]
    shifted = eml_loss(A, LossHead(omega + c, "EML"))[0]
    assert abs(base - shifted) < 1e-9
    assert 0.0 <= base <= 20 * np.log(4) + 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_mml_predict_scale_invariant(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((5, 30))
    omega = rng.standard_normal((5, 4))
    assert np.array_equal(predict(A, LossHead(omega, "MML")), predict(A, LossHead(2 * omega, "MML")))


def test_eml_predict_is_most_probable_cluster():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((5, 40))
    head = LossHead(rng.standard_normal((5, 4)), "EML")
    assert np.array_equal(predict(A, head), np.argmax(eml_probabilities(A, head), axis=0))


def test_head_validation():
    with pytest.raises(DomainError):
        LossHead(np.zeros((3, 1)))
    with pytest.raises(DomainError):
        LossHead(np.zeros((3, 2)), "KL")


def orthogonal_clusters(rng, n_per=40, p=6, noise=0.05):
    labels = np.repeat(np.arange(3), n_per)
    A = noise * np.abs(rng.standard_normal((p, labels.size)))
    A[labels, np.arange(labels.size)] += 1.0
    return A, labels


def test_init_head_zero_epochs_reproducible():
    A, _ = orthogonal_clusters(np.random.default_rng(0))
    a = init_head(A, 3, "EML", epochs=0, rng=5)
    b = init_head(A, 3, "EML", epochs=0, rng=5)
    assert np.array_equal(a.omega, b.omega)
    assert np.max(np.abs(a.omega)) <= 0.01 + 1e-15


@pytest.mark.parametrize("kind", ["EML", "MML"])
def test_init_head_does_not_increase_loss(kind):
    A, _ = orthogonal_clusters(np.random.default_rng(1))
    history = []
    init_head(A, 3, kind, epochs=30, rng=0, history=history)
    assert history[-1] <= history[0]


@pytest.mark.parametrize("seed", range(5))
def test_eml_head_separates_orthogonal_clusters(seed):
    A, labels = orthogonal_clusters(np.random.default_rng(seed))
    head = init_head(A, 3, "EML", epochs=100, rng=seed, learning_rate=0.1)
    assert clustering_accuracy(predict(A, head), labels) >= 0.9


def test_head_loss_dispatch():
    A = np.ones((3, 2))
    eml = LossHead(np.zeros((3, 2)), "EML")
    assert head_loss(A, eml)[0] == eml_loss(A, eml)[0]
