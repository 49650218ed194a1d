"""Co-training of boosted trees and a transductive SVM with optimal weights.

Each round the ensemble weights are re-solved on the learners' predictions
for the unlabeled pool.  Every tree learner then draws its own subset of the
pool, takes pseudo labels from the weighted vote of the *other* learners where
that vote is confident, and is retrained on its labeled bootstrap plus those
pseudo labels.  The SVM is trained once, up front, and only votes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import UNLABELED
from .exceptions import BadIndex, CorruptBundle, DimensionMismatch
from .gbdt import GBDTClassifier
from .tsvm import TransductiveSVC
from .weights import (
    SolverConfig,
    WeightVector,
    ensemble_proba,
    objective,
    prior_weight,
    solve_weights,
)

MAX_BOOTSTRAP_TRIES = 100


@dataclass(frozen=True)
class PseudoBatch:
    """Confident pseudo labels for one learner.

    ``ids`` index rows of the unlabeled pool.
    """

    learner: int
    ids: np.ndarray
    labels: np.ndarray
    confidence: np.ndarray

    def __len__(self):
        return len(self.ids)

    def same_as(self, other):
        return (
            other is not None
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.labels, other.labels)
        )


def bootstrap_with_all_classes(y, n_classes, rng):
    """Draw ``len(y)`` indices with replacement covering every class.

    Redraws up to 100 times; after that one row of each class is forced into
    the leading positions.
    """
    n = len(y)
    for _ in range(MAX_BOOTSTRAP_TRIES):
        idx = rng.integers(0, n, size=n)
        if len(np.unique(y[idx])) == n_classes:
            return idx
    for c in range(n_classes):
        idx[c] = rng.choice(np.flatnonzero(y == c))
    return idx


def leave_one_out_proba(ps, w, k, subset, normalize=False):
    """Weighted vote of every learner except ``k`` on rows ``subset``.

    Rows sum to ``1 - w[k]`` unless ``normalize`` rescales them to 1.
    """
    w = np.asarray(w, dtype=float)
    if not 0 <= k < len(ps) or len(ps) != len(w):
        raise BadIndex(f"learner index {k} outside [0, {len(ps)})")
    subset = np.asarray(subset, dtype=np.int64)
    u = ps[0].shape[0]
    if subset.size and (subset.min() < 0 or subset.max() >= u):
        raise BadIndex("subset refers to rows outside the unlabeled pool")
    others = [s for s in range(len(ps)) if s != k]
    pbar = ensemble_proba([ps[s][subset] for s in others], w[others])
    if normalize and w[k] < 1.0:
        pbar = pbar / (1.0 - w[k])
    return pbar


def select_pseudo(pbar, beta, ids=None, learner=0):
    """Keep rows whose top vote reaches ``beta``; label = argmax (lowest index on ties)."""
    pbar = np.asarray(pbar, dtype=float)
    ids = np.arange(len(pbar)) if ids is None else np.asarray(ids, dtype=np.int64)
    if pbar.shape[0] == 0:
        empty = np.empty(0)
        return PseudoBatch(learner, empty.astype(np.int64), empty.astype(np.int64), empty)
    conf = pbar.max(axis=1)
    label = pbar.argmax(axis=1)
    keep = conf >= beta
    return PseudoBatch(learner, ids[keep], label[keep].astype(np.int64), conf[keep])


class CTOWClassifier(ClassifierMixin, BaseEstimator):
    """Semi-supervised ensemble of boosted trees and a transductive SVM.

    ``fit(X, y)`` treats rows with ``y == -1`` as unlabeled.

    Parameters
    ----------
    k_learners : int
        Ensemble size.  With ``use_tsvm`` the last learner is the SVM and the
        rest are boosted trees; otherwise all are boosted trees.
    beta : float
        Minimum vote for a pseudo label.
    alpha : float
        Margin-density threshold of the SVM's prior weight.
    mu : float
        L2 penalty on the ensemble weights.
    t_inner : int
        Projected-gradient iterations per weight solve.
    step0 : float
        Initial step of the backtracking line search.
    bootstrap_fraction : float
        Share of the unlabeled pool each tree learner sees per round.
    max_rounds : int
        Cap on co-training rounds.
    use_prior : bool
        Pin the SVM weight to the margin-density prior.
    use_tsvm : bool
        Include the SVM learner at all.
    normalize_loo : bool
        Rescale leave-one-out votes to sum to one before thresholding.
    gbdt_* , tsvm_* :
        Forwarded to :class:`GBDTClassifier` and :class:`TransductiveSVC`.
    random_state : int

    Attributes
    ----------
    learners_ : list
        Fitted learners, SVM last when present.
    weights_ : WeightVector
    history_ : list of dict
        One record per round: weights, objective, pseudo-batch sizes,
        margin density.
    rounds_run_ : int
    """

    def __init__(self, k_learners=4, beta=0.75, alpha=0.2, mu=0.5, t_inner=10, step0=1.0,
                 bootstrap_fraction=0.8, max_rounds=20, use_prior=True, use_tsvm=True,
                 normalize_loo=False, gbdt_rounds=50, gbdt_max_depth=3,
                 gbdt_learning_rate=0.3, gbdt_l2_reg=1.0, gbdt_min_child_weight=0.1,
                 tsvm_c_labeled=1.0, tsvm_c_unlabeled=1.0, tsvm_temperature=1.0,
                 tsvm_max_outer=20, random_state=0):
        self.k_learners = k_learners
        self.beta = beta
        self.alpha = alpha
        self.mu = mu
        self.t_inner = t_inner
        self.step0 = step0
        self.bootstrap_fraction = bootstrap_fraction
        self.max_rounds = max_rounds
        self.use_prior = use_prior
        self.use_tsvm = use_tsvm
        self.normalize_loo = normalize_loo
        self.gbdt_rounds = gbdt_rounds
        self.gbdt_max_depth = gbdt_max_depth
        self.gbdt_learning_rate = gbdt_learning_rate
        self.gbdt_l2_reg = gbdt_l2_reg
        self.gbdt_min_child_weight = gbdt_min_child_weight
        self.tsvm_c_labeled = tsvm_c_labeled
        self.tsvm_c_unlabeled = tsvm_c_unlabeled
        self.tsvm_temperature = tsvm_temperature
        self.tsvm_max_outer = tsvm_max_outer
        self.random_state = random_state

    # -- construction helpers -------------------------------------------------

    def _validate_params(self):
        if self.k_learners < 2:
            raise ValueError("k_learners must be >= 2")
        if not 0 < self.beta <= 1:
            raise ValueError("beta must lie in (0, 1]")
        if not 0 < self.bootstrap_fraction <= 1:
            raise ValueError("bootstrap_fraction must lie in (0, 1]")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")

    @property
    def n_trees(self):
        return self.k_learners - 1 if self.use_tsvm else self.k_learners

    def _new_gbdt(self, n_classes):
        return GBDTClassifier(
            n_rounds=self.gbdt_rounds, max_depth=self.gbdt_max_depth,
            learning_rate=self.gbdt_learning_rate, l2_reg=self.gbdt_l2_reg,
            min_child_weight=self.gbdt_min_child_weight, n_classes=n_classes,
        )

    def _new_tsvm(self, n_classes):
        return TransductiveSVC(
            c_labeled=self.tsvm_c_labeled, c_unlabeled=self.tsvm_c_unlabeled,
            temperature=self.tsvm_temperature, max_outer=self.tsvm_max_outer,
            n_classes=n_classes,
        )

    def _solver_config(self):
        return SolverConfig(mu=self.mu, iterations=self.t_inner, step0=self.step0)

    def _fixed_last(self):
        if self.use_tsvm and self.use_prior:
            return float(prior_weight(self.learners_[-1].margin_density_, self.alpha))
        return None

    # -- training -----------------------------------------------------------------

    def _initialize(self, X_lab, y_lab, X_unl):
        """Fit the starting learners; returns their probability matrices on ``X_unl``."""
        C = len(self.classes_)
        self.bootstrap_ids_ = []
        self.learners_ = []
        for k in range(self.n_trees):
            rng = np.random.default_rng([self.random_state, 0, k])
            idx = bootstrap_with_all_classes(y_lab, C, rng)
            self.bootstrap_ids_.append(idx)
            self.learners_.append(self._new_gbdt(C).fit(X_lab[idx], y_lab[idx]))
        if self.use_tsvm:
            X_all = np.vstack([X_lab, X_unl])
            y_all = np.concatenate([y_lab, np.full(len(X_unl), UNLABELED)])
            self.learners_.append(self._new_tsvm(C).fit(X_all, y_all))
        if len(X_unl) == 0:
            return [np.empty((0, C)) for _ in self.learners_]
        return [m.predict_proba(X_unl) for m in self.learners_]

    def _solve(self, ps):
        fixed = self._fixed_last()
        if ps[0].shape[0] == 0:
            K = len(ps)
            w = np.full(K, 1.0 / K) if fixed is None else np.append(np.full(K - 1, (1 - fixed) / (K - 1)), fixed)
            return WeightVector(w, fixed), None
        config = self._solver_config()
        wv = solve_weights(ps, fixed, config)
        return wv, objective(ps, wv.w, config.mu, config.epsilon_clip)

    def fit(self, X, y):
        self._validate_params()
        X, y = check_X_y(X, y, dtype=float)
        y = np.asarray(y).astype(np.int64)
        lab = y != UNLABELED
        self.classes_ = np.unique(y[lab])
        if len(self.classes_) < 2:
            raise ValueError("need labeled rows from at least 2 classes")
        self.n_features_in_ = X.shape[1]
        X_lab, y_lab = X[lab], np.searchsorted(self.classes_, y[lab])
        X_unl = X[~lab]
        u = len(X_unl)
        C = len(self.classes_)

        ps = self._initialize(X_lab, y_lab, X_unl)
        self.history_ = []
        self.rounds_run_ = 0
        # the augmentation each tree learner is currently trained on
        current = [select_pseudo(np.empty((0, C)), self.beta, learner=k) for k in range(self.n_trees)]
        previous = None
        n_sub = int(np.floor(self.bootstrap_fraction * u))
        fixed = self._fixed_last()
        xi_hat = self.learners_[-1].margin_density_ if self.use_tsvm else None

        while u and self.rounds_run_ < self.max_rounds:
            r = self.rounds_run_
            wv, obj = self._solve(ps)
            batches = []
            for k in range(self.n_trees):
                rng = np.random.default_rng([self.random_state, 1, r, k])
                subset = np.sort(rng.choice(u, size=n_sub, replace=False))
                pbar = leave_one_out_proba(ps, wv.w, k, subset, self.normalize_loo)
                batch = select_pseudo(pbar, self.beta, subset, learner=k)
                batches.append(batch)
                if batch.same_as(current[k]):
                    continue  # training data unchanged, so is the deterministic learner
                idx = self.bootstrap_ids_[k]
                Xk = np.vstack([X_lab[idx], X_unl[batch.ids]])
                yk = np.concatenate([y_lab[idx], batch.labels])
                self.learners_[k] = self._new_gbdt(C).fit(Xk, yk)
                ps[k] = self.learners_[k].predict_proba(X_unl)
                current[k] = batch
            self.rounds_run_ += 1
            self.history_.append({
                "round": self.rounds_run_,
                "weights": wv.w.tolist(),
                "fixed_last": fixed,
                "objective": obj,
                "margin_density": xi_hat,
                "pseudo_sizes": [len(b) for b in batches],
            })
            if previous is not None and all(b.same_as(p) for b, p in zip(batches, previous)):
                break
            previous = batches

        self.batches_ = current
        self.weights_, self.objective_ = self._solve(ps)
        return self

    # -- inference ----------------------------------------------------------------

    def _check_X(self, X):
        check_is_fitted(self, "weights_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatch(
                f"X has {X.shape[1]} features, model was trained on {self.n_features_in_}"
            )
        return X

    def learner_probas(self, X):
        X = self._check_X(X)
        return [m.predict_proba(X) for m in self.learners_]

    def predict_proba(self, X):
        return ensemble_proba(self.learner_probas(X), self.weights_.w)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    @property
    def tsvm_(self):
        check_is_fitted(self, "learners_")
        return self.learners_[-1] if self.use_tsvm else None

    def to_dict(self):
        check_is_fitted(self, "weights_")
        return {
            "kind": "ctow",
            "params": self.get_params(),
            "classes": self.classes_.tolist(),
            "n_features": int(self.n_features_in_),
            "weights": self.weights_.to_dict(),
            "rounds_run": self.rounds_run_,
            "history": self.history_,
            "learners": [m.to_dict() for m in self.learners_],
        }

    @classmethod
    def from_dict(cls, d):
        try:
            if d["kind"] != "ctow":
                raise CorruptBundle(f"expected a ctow model, got {d['kind']!r}")
            model = cls(**d["params"])
            model.classes_ = np.asarray(d["classes"])
            model.n_features_in_ = int(d["n_features"])
            model.weights_ = WeightVector.from_dict(d["weights"])
            model.rounds_run_ = int(d["rounds_run"])
            model.history_ = d["history"]
            model.learners_ = [
                TransductiveSVC.from_dict(m) if m["kind"] == "tsvm" else GBDTClassifier.from_dict(m)
                for m in d["learners"]
            ]
        except (KeyError, TypeError) as exc:
            raise CorruptBundle(f"malformed ctow model: {exc}") from exc
        if len(model.learners_) != len(model.weights_.w):
            raise CorruptBundle("learner count does not match weight count")
        return model


class LabeledOnly(ClassifierMixin, BaseEstimator):
    """Fit ``estimator`` on the labeled rows only (``y != -1``)."""

    def __init__(self, estimator=None):
        self.estimator = estimator

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        lab = np.asarray(y) != UNLABELED
        self.estimator_ = clone(self.estimator).fit(X[lab], y[lab])
        self.classes_ = self.estimator_.classes_
        return self

    def predict_proba(self, X):
        return self.estimator_.predict_proba(X)

    def predict(self, X):
        return self.estimator_.predict(X)


METHODS = ("ctow", "ctow-np", "ctow-nt", "gbdt-only", "tsvm-only")


def make_estimator(method, **params):
    """Estimator for one of :data:`METHODS`; ``params`` are CTOW parameters."""
    base = CTOWClassifier(**params)
    if method == "ctow":
        return base
    if method == "ctow-np":
        return base.set_params(use_prior=False)
    if method == "ctow-nt":
        return base.set_params(use_tsvm=False)
    if method == "gbdt-only":
        return LabeledOnly(base._new_gbdt(None))
    if method == "tsvm-only":
        return base._new_tsvm(None)
    raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def _split_arrays(ds, split):
    X = ds.features
    X_lab, y_lab = X[split.labeled_ids], ds.labels[split.labeled_ids]
    X_unl = X[split.unlabeled_ids]
    X_train = np.vstack([X_lab, X_unl])
    y_train = np.concatenate([y_lab, np.full(len(X_unl), UNLABELED)])
    return X_train, y_train


def initialize(ds, split, **params):
    """Fit the starting learners on a split; returns ``(learners, probas on U)``."""
    X_train, y_train = _split_arrays(ds, split)
    est = CTOWClassifier(**params)
    est._validate_params()
    lab = y_train != UNLABELED
    est.classes_ = np.unique(y_train[lab])
    ps = est._initialize(X_train[lab], np.searchsorted(est.classes_, y_train[lab]), X_train[~lab])
    return est.learners_, ps


def run_cotraining(ds, split, **params):
    """Fit :class:`CTOWClassifier` on the labeled and unlabeled rows of ``split``."""
    X_train, y_train = _split_arrays(ds, split)
    return CTOWClassifier(**params).fit(X_train, y_train)
