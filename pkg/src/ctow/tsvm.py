"""Linear one-vs-rest transductive SVM trained by label switching.

For every class the binary problem

    min  1/2 ||w||^2 + C_l sum_labeled xi_i + C_u sum_unlabeled xi_j

is solved over ``(w, b)`` and the +/-1 pseudo labels of the unlabeled rows.
Pseudo labels start from the supervised solution with the labeled positive
fraction enforced, then pairs of opposite pseudo labels are swapped whenever
the swap lowers the objective, while the unlabeled cost is ramped up from a
tiny value to ``C_u``.
"""

from __future__ import annotations

import numpy as np
from numba import njit
from scipy.special import softmax
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import UNLABELED
from .exceptions import CorruptBundle, DimensionMismatch, SingleClass

# slack above this counts as "inside the margin"
MARGIN_TOL = 1e-9
# smallest objective drop a swap must achieve
SWAP_TOL = 1e-12
C_U_START = 1e-4
# dual stopping tolerance; kept below MARGIN_TOL so support vectors are not
# miscounted as margin violators
SOLVER_TOL = 1e-10


@njit(cache=True)
def _dual_cd(Xa, y, upper, alpha, w, tol, max_epochs):
    """Dual coordinate descent for the L1-loss linear SVM (in place).

    ``Xa`` carries a trailing constant column so the bias is the last entry
    of ``w``.  Rows are visited in a fixed cyclic order.
    """
    n, d = Xa.shape
    qdiag = np.empty(n)
    for i in range(n):
        s = 0.0
        for k in range(d):
            s += Xa[i, k] * Xa[i, k]
        qdiag[i] = s
    for _ in range(max_epochs):
        pg_max = -np.inf
        pg_min = np.inf
        for i in range(n):
            if upper[i] <= 0.0:
                continue
            s = 0.0
            for k in range(d):
                s += w[k] * Xa[i, k]
            G = y[i] * s - 1.0
            a = alpha[i]
            if a <= 0.0:
                pg = min(G, 0.0)
            elif a >= upper[i]:
                pg = max(G, 0.0)
            else:
                pg = G
            pg_max = max(pg_max, pg)
            pg_min = min(pg_min, pg)
            if pg != 0.0:
                a_new = min(max(a - G / qdiag[i], 0.0), upper[i])
                step = (a_new - a) * y[i]
                if step != 0.0:
                    for k in range(d):
                        w[k] += step * Xa[i, k]
                alpha[i] = a_new
        if pg_max - pg_min < tol:
            break


class _BinarySolver:
    """Warm-startable binary SVM over a fixed design matrix."""

    def __init__(self, Xa, tol=SOLVER_TOL, max_epochs=2000):
        self.Xa = np.ascontiguousarray(Xa)
        self.tol = tol
        self.max_epochs = max_epochs

    def fit(self, y, cost, alpha=None):
        """Solve for signed labels ``y`` and per-row costs; returns (alpha, w)."""
        if alpha is None:
            alpha = np.zeros(len(y))
        alpha = np.clip(alpha, 0.0, cost)
        w = self.Xa.T @ (alpha * y)
        _dual_cd(self.Xa, y.astype(float), cost.astype(float), alpha, w, self.tol, self.max_epochs)
        return alpha, w


def primal_objective(w, f, y, cost):
    """1/2 ||w||^2 + sum cost_i * max(0, 1 - y_i f_i); ``w`` excludes the bias."""
    return 0.5 * float(w @ w) + float(np.sum(cost * np.maximum(0.0, 1.0 - y * f)))


def balanced_pseudo_labels(f, pos_fraction):
    """+1 for the ``round(pos_fraction * u)`` highest decision values, else -1."""
    u = len(f)
    n_pos = int(round(pos_fraction * u))
    labels = -np.ones(u)
    if n_pos:
        labels[np.argsort(-f, kind="stable")[:n_pos]] = 1.0
    return labels


def improving_swaps(f, labels):
    """Disjoint (+, -) pseudo-label pairs whose swap lowers the hinge sum at fixed f.

    Returns index arrays ``(pos, neg)`` of equal length.
    """
    pos = np.flatnonzero(labels > 0)
    neg = np.flatnonzero(labels < 0)
    if not len(pos) or not len(neg):
        return pos[:0], neg[:0]
    # change in slack if each row alone flipped sign
    d_pos = np.maximum(0, 1 + f[pos]) - np.maximum(0, 1 - f[pos])
    d_neg = np.maximum(0, 1 - f[neg]) - np.maximum(0, 1 + f[neg])
    pos = pos[np.argsort(d_pos, kind="stable")]
    neg = neg[np.argsort(d_neg, kind="stable")]
    k = min(len(pos), len(neg))
    gain = np.sort(d_pos)[:k] + np.sort(d_neg)[:k]
    keep = gain < -SWAP_TOL
    # gain is nondecreasing along the pairing, so ``keep`` is a prefix
    n = int(keep.sum())
    return pos[:n], neg[:n]


def fit_binary_tsvm(Xa_lab, y_lab, Xa_unl, c_labeled, c_unlabeled, max_outer, trace=None):
    """Label-switching transductive SVM for one binary subproblem.

    ``Xa_*`` are bias-augmented design matrices, ``y_lab`` is +/-1.  Returns
    ``(w, pseudo_labels)`` where the last entry of ``w`` is the bias.  When a
    list is passed as ``trace`` one record per accepted swap batch is
    appended.
    """
    n_lab = len(y_lab)
    solver_lab = _BinarySolver(Xa_lab)
    alpha, w = solver_lab.fit(y_lab, np.full(n_lab, float(c_labeled)))
    u = Xa_unl.shape[0]
    if u == 0:
        return w, np.empty(0)

    solver = _BinarySolver(np.vstack([Xa_lab, Xa_unl]))
    f_unl = Xa_unl @ w
    pseudo = balanced_pseudo_labels(f_unl, float(np.mean(y_lab > 0)))
    alpha = np.concatenate([alpha, np.zeros(u)])

    def objective(w, y_all, cost):
        f = solver.Xa @ w
        return primal_objective(w[:-1], f, y_all, cost)

    c_u = min(C_U_START, c_unlabeled)
    while True:
        cost = np.concatenate([np.full(n_lab, float(c_labeled)), np.full(u, float(c_u))])
        y_all = np.concatenate([y_lab, pseudo])
        alpha, w = solver.fit(y_all, cost, alpha)
        # at zero unlabeled cost no swap can change the objective
        for _ in range(max_outer if c_u > 0 else 0):
            f_unl = Xa_unl @ w
            pi, ni = improving_swaps(f_unl, pseudo)
            if not len(pi):
                break
            before = objective(w, y_all, cost)
            pseudo = pseudo.copy()
            pseudo[pi], pseudo[ni] = -1.0, 1.0
            y_all = np.concatenate([y_lab, pseudo])
            # swapped rows change sign, so their dual variables restart at 0
            alpha = alpha.copy()
            alpha[n_lab + pi] = 0.0
            alpha[n_lab + ni] = 0.0
            swapped = objective(w, y_all, cost)
            new_alpha, new_w = solver.fit(y_all, cost, alpha)
            after = objective(new_w, y_all, cost)
            # the solver regularizes the bias; never accept a retrain that is worse on the true objective
            if after <= swapped:
                alpha, w = new_alpha, new_w
            else:
                after = swapped
            if trace is not None:
                trace.append({"c_unlabeled": c_u, "n_swaps": len(pi), "before": before, "after": after})
        if c_u >= c_unlabeled:
            return w, pseudo
        c_u = min(2 * c_u, c_unlabeled) if c_u > 0 else c_unlabeled


def margin_density(decision, y):
    """Fraction of labeled rows with positive hinge slack in their own class.

    ``decision`` is the (n, C) matrix of one-vs-rest decision values and
    ``y`` the class indices; row ``i`` is inside the margin when
    ``1 - decision[i, y[i]] > 0``.
    """
    decision = np.asarray(decision, dtype=float)
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("margin density needs at least one labeled row")
    slack = np.maximum(0.0, 1.0 - decision[np.arange(len(y)), y])
    return float(np.mean(slack > MARGIN_TOL))


class TransductiveSVC(ClassifierMixin, BaseEstimator):
    """Linear transductive SVM, one-vs-rest over classes.

    ``fit(X, y)`` treats rows with ``y == -1`` as unlabeled.  Features are
    standardized internally using all rows; the learned coefficients are
    mapped back so ``coef_`` and ``intercept_`` act on raw features.

    Parameters
    ----------
    c_labeled, c_unlabeled : float
        Hinge-loss costs for labeled and unlabeled rows.
    temperature : float
        Softmax temperature applied to decision values in ``predict_proba``.
    max_outer : int
        Swap batches allowed per step of the unlabeled-cost ramp.
    n_classes : int or None
        Fix the class set to ``0..n_classes-1``.

    Attributes
    ----------
    coef_ : ndarray of shape (C, d)
    intercept_ : ndarray of shape (C,)
    margin_density_ : float
        Share of labeled rows with positive slack under the final model.
    trace_ : list of list of dict
        Per-class record of every accepted swap batch.
    """

    def __init__(self, c_labeled=1.0, c_unlabeled=1.0, temperature=1.0, max_outer=20,
                 n_classes=None):
        self.c_labeled = c_labeled
        self.c_unlabeled = c_unlabeled
        self.temperature = temperature
        self.max_outer = max_outer
        self.n_classes = n_classes

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        y = y.astype(np.int64)
        lab = y != UNLABELED
        if self.n_classes is None:
            self.classes_ = np.unique(y[lab])
        else:
            self.classes_ = np.arange(self.n_classes)
        if len(np.unique(y[lab])) < 2:
            raise SingleClass("transductive SVM needs labeled rows from at least 2 classes")
        if self.c_labeled <= 0 or self.c_unlabeled < 0 or self.temperature <= 0:
            raise ValueError("need c_labeled > 0, c_unlabeled >= 0, temperature > 0")
        y_enc = np.searchsorted(self.classes_, y[lab])
        self.n_features_in_ = X.shape[1]

        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        Z = (X - mean) / scale
        Za = np.hstack([Z, np.ones((Z.shape[0], 1))])
        Xa_lab, Xa_unl = Za[lab], Za[~lab]

        C = len(self.classes_)
        W = np.zeros((C, Z.shape[1] + 1))
        self.trace_ = []
        for c in range(C):
            y_bin = np.where(y_enc == c, 1.0, -1.0)
            trace = []
            W[c], _ = fit_binary_tsvm(Xa_lab, y_bin, Xa_unl, self.c_labeled,
                                      self.c_unlabeled, self.max_outer, trace)
            self.trace_.append(trace)
        self.coef_ = W[:, :-1] / scale
        self.intercept_ = W[:, -1] - self.coef_ @ mean
        self.margin_density_ = margin_density(self.decision_function(X[lab]), y_enc)
        return self

    def _check_X(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatch(
                f"X has {X.shape[1]} features, model was trained on {self.n_features_in_}"
            )
        return X

    def decision_function(self, X):
        X = self._check_X(X)
        return X @ self.coef_.T + self.intercept_

    def predict_proba(self, X):
        return softmax(self.decision_function(X) / self.temperature, axis=1)

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def to_dict(self):
        check_is_fitted(self, "coef_")
        return {
            "kind": "tsvm",
            "params": self.get_params(),
            "classes": self.classes_.tolist(),
            "n_features": int(self.n_features_in_),
            "coef": self.coef_.tolist(),
            "intercept": self.intercept_.tolist(),
            "margin_density": self.margin_density_,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            if d["kind"] != "tsvm":
                raise CorruptBundle(f"expected a tsvm model, got {d['kind']!r}")
            model = cls(**d["params"])
            model.classes_ = np.asarray(d["classes"])
            model.n_features_in_ = int(d["n_features"])
            model.coef_ = np.asarray(d["coef"], dtype=float)
            model.intercept_ = np.asarray(d["intercept"], dtype=float)
            model.margin_density_ = float(d["margin_density"])
        except (KeyError, TypeError) as exc:
            raise CorruptBundle(f"malformed tsvm model: {exc}") from exc
        model.trace_ = []
        return model
