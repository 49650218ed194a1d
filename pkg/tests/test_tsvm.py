import numpy as np
import pytest
from sklearn.svm import LinearSVC

from ctow.exceptions import SingleClass
from ctow.tsvm import (
    TransductiveSVC,
    balanced_pseudo_labels,
    fit_binary_tsvm,
    improving_swaps,
    margin_density,
    primal_objective,
)

from conftest import two_blobs


def blob_problem(n_lab=4, n_unl=96, seed=0, gap=3.0):
    X, y = two_blobs(n_lab + n_unl, seed, gap)
    y_train = y.copy()
    y_train[n_lab:] = -1
    return X, y, y_train


def test_blobs_four_labeled():
    X, _, y_train = blob_problem()
    model = TransductiveSVC().fit(X, y_train)
    X_test, y_test = two_blobs(400, seed=99)
    assert np.mean(model.predict(X_test) == y_test) >= 0.95


def test_supervised_solve_matches_liblinear():
    # liblinear's hinge-loss dual also treats the bias as a regularized constant feature
    X, y = two_blobs(40, seed=3, gap=1.0, d=3)
    model = TransductiveSVC(c_labeled=1.0).fit(X, y)
    Z = (X - X.mean(axis=0)) / X.std(axis=0)
    ref = LinearSVC(C=1.0, loss="hinge", tol=1e-10, max_iter=200000, intercept_scaling=1.0).fit(Z, y)
    np.testing.assert_allclose(model.decision_function(X)[:, 1], ref.decision_function(Z), atol=2e-3)


def test_no_unlabeled_rows_is_plain_svm():
    X, y = two_blobs(30, seed=4, gap=1.0)
    a = TransductiveSVC(c_unlabeled=5.0).fit(X, y)
    b = TransductiveSVC(c_unlabeled=0.0).fit(X, y)
    np.testing.assert_array_equal(a.decision_function(X), b.decision_function(X))
    assert all(len(t) == 0 for t in a.trace_)
    assert 0.0 <= a.margin_density_ <= 1.0


def test_swap_batches_strictly_decrease_objective():
    X, _, y_train = blob_problem(n_lab=6, n_unl=120, seed=1, gap=1.0)
    model = TransductiveSVC(c_unlabeled=1.0).fit(X, y_train)
    records = [r for trace in model.trace_ for r in trace]
    assert records, "fixture should trigger label switching"
    for r in records:
        assert r["after"] < r["before"]
        assert r["n_swaps"] >= 1


def test_pseudo_label_balance_kept():
    rng = np.random.default_rng(2)
    Xa = np.hstack([rng.normal(size=(60, 2)), np.ones((60, 1))])
    y_lab = np.array([1, 1, 1, -1, -1, -1, -1, -1, -1, -1.0])
    w, pseudo = fit_binary_tsvm(Xa[:10], y_lab, Xa[10:], 1.0, 1.0, 20)
    # labeled positive share is 0.3 of 50 unlabeled rows -> 15 positives
    assert np.sum(pseudo > 0) == 15


def test_balanced_initial_labels():
    f = np.array([0.3, -1.0, 2.0, 0.1, -0.5])
    # round(0.4 * 5) = 2 positives: the two largest decision values
    np.testing.assert_array_equal(balanced_pseudo_labels(f, 0.4), [1, -1, 1, -1, -1])


def test_improving_swaps_lower_hinge_sum():
    rng = np.random.default_rng(0)
    f = rng.normal(size=40)
    labels = np.where(rng.random(40) < 0.5, 1.0, -1.0)
    pos, neg = improving_swaps(f, labels)
    new = labels.copy()
    new[pos], new[neg] = -1, 1
    before = np.maximum(0, 1 - labels * f).sum()
    after = np.maximum(0, 1 - new * f).sum()
    assert len(pos) == len(neg) > 0
    assert after < before
    assert np.sum(new > 0) == np.sum(labels > 0)


def test_primal_objective_by_hand():
    w = np.array([1.0, 2.0])
    f = np.array([2.0, 0.5, -1.0])
    y = np.array([1.0, 1.0, 1.0])
    assert primal_objective(w, f, y, np.array([1.0, 2.0, 3.0])) == pytest.approx(2.5 + 0 + 1.0 + 6.0)


@pytest.mark.parametrize("decision, y, expected", [
    (np.array([[1.0, -1.0], [-1.0, 1.5], [-3.0, 2.0]]), np.array([0, 1, 1]), 0.0),
    (np.array([[0.0, 0.0], [-1.0, 0.0], [0.5, -2.0]]), np.array([0, 1, 1]), 1.0),
])
def test_margin_density_endpoints(decision, y, expected):
    assert margin_density(decision, y) == expected


def test_margin_density_three_of_ten():
    decision = np.column_stack([np.r_[np.full(3, 0.5), np.full(7, 2.0)], np.zeros(10)])
    assert margin_density(decision, np.zeros(10, dtype=int)) == pytest.approx(0.3)


def test_margin_density_zero_on_wide_margin():
    X, y = two_blobs(40, seed=0, gap=8.0)
    assert TransductiveSVC().fit(X, y).margin_density_ == 0.0


def fixed_model(coef, intercept, temperature=1.0):
    return TransductiveSVC.from_dict({
        "kind": "tsvm",
        "params": TransductiveSVC(temperature=temperature).get_params(),
        "classes": list(range(len(intercept))),
        "n_features": len(coef[0]),
        "coef": coef,
        "intercept": intercept,
        "margin_density": 0.0,
    })


def test_zero_decision_gives_uniform():
    m = fixed_model([[0.0], [0.0], [0.0]], [0.0, 0.0, 0.0])
    np.testing.assert_allclose(m.predict_proba(np.ones((2, 1))), 1 / 3, atol=1e-15)


def test_large_margin_saturates():
    m = fixed_model([[1.0], [-1.0]], [0.0, 0.0])
    p = m.predict_proba(np.array([[400.0]]))
    np.testing.assert_allclose(p, [[1.0, 0.0]], atol=1e-12)


def test_probability_rows_sum_to_one():
    X, _, y_train = blob_problem()
    p = TransductiveSVC().fit(X, y_train).predict_proba(np.random.default_rng(1).normal(size=(50, 2)) * 10)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)


def test_multiclass_one_vs_rest():
    rng = np.random.default_rng(0)
    centers = np.array([[0, 5], [5, -3], [-5, -3.0]])
    y = np.repeat(np.arange(3), 30)
    X = centers[y] + rng.normal(size=(90, 2))
    y_train = np.where(np.arange(90) % 10 == 0, y, -1)
    model = TransductiveSVC().fit(X, y_train)
    assert model.coef_.shape == (3, 2)
    assert np.mean(model.predict(X) == y) >= 0.95


def test_deterministic():
    X, _, y_train = blob_problem(seed=5, gap=1.0)
    a = TransductiveSVC().fit(X, y_train)
    b = TransductiveSVC().fit(X, y_train)
    assert a.to_dict() == b.to_dict()


def test_single_labeled_class_rejected():
    X, _, y_train = blob_problem()
    y_train[:4] = 0
    with pytest.raises(SingleClass):
        TransductiveSVC().fit(X, y_train)


def test_serialization_round_trip():
    X, _, y_train = blob_problem()
    a = TransductiveSVC().fit(X, y_train)
    b = TransductiveSVC.from_dict(a.to_dict())
    np.testing.assert_array_equal(a.predict_proba(X), b.predict_proba(X))
