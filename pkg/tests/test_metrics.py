import numpy as np
import pytest
from sklearn.metrics import f1_score

import oracles
from esihgnn.errors import DomainError, UsageError
from esihgnn.metrics import MetricSpec, confusion_matrix, micro_f1, score, weighted_f1


def test_perfect_prediction():
    y = [0, 1, 2, 2, 1]
    for kind in ("weighted_f1", "micro_f1"):
        assert score(y, y, 3, MetricSpec(kind)) == 1.0


def test_symmetric_binary_confusion():
    counts = np.array([[1, 1], [1, 1]])
    assert weighted_f1(counts) == 0.5
    assert micro_f1(counts) == 0.5


def test_confusion_matrix_counts():
    counts = confusion_matrix([0, 0, 1, 2], [0, 1, 1, 0], 3)
    assert counts.tolist() == [[1, 1, 0], [0, 1, 0], [1, 0, 0]]


def test_micro_without_exclusion_is_accuracy(rng):
    t, p = rng.integers(0, 4, 50), rng.integers(0, 4, 50)
    assert abs(score(t, p, 4, MetricSpec("micro_f1")) - np.mean(t == p)) < 1e-12


def test_exclusion_semantics():
    # true 0 predicted 1 is a false positive for class 1; prediction of excluded 0 is ignored
    t, p = [0, 1, 1, 2], [1, 1, 0, 2]
    spec = MetricSpec("micro_f1", {0})
    TP, FP, FN = 2, 1, 1
    assert score(t, p, 3, spec) == pytest.approx(2 * TP / (2 * TP + FP + FN), abs=1e-12)


def test_empty_evaluable_set():
    with pytest.raises(DomainError):
        score([0, 0], [1, 0], 2, MetricSpec("micro_f1", {0}))
    with pytest.raises(DomainError):
        score([], [], 2, MetricSpec("weighted_f1"))


def test_spec_validation():
    with pytest.raises(UsageError):
        MetricSpec("macro_f1")
    with pytest.raises(UsageError):
        MetricSpec("micro_f1", {5}).validate(3)


@pytest.mark.parametrize("seed", range(10))
def test_random_fixtures_against_sklearn(seed):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(2, 6))
    counts = rng.integers(0, 6, size=(K, K))
    excluded = {int(rng.integers(K))} if seed % 2 else set()
    t, p = oracles.expand_confusion(counts)
    labels = [c for c in range(K) if c not in excluded]
    want_w = f1_score(t, p, labels=labels, average="weighted", zero_division=0)
    want_m = f1_score(t, p, labels=labels, average="micro", zero_division=0)
    assert abs(weighted_f1(counts, excluded) - want_w) < 1e-9
    assert abs(micro_f1(counts, excluded) - want_m) < 1e-9
