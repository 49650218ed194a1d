"""Second-order gradient-boosted trees with a shared softmax.

Each boosting round fits one regression tree per class against the
gradient ``p - 1{y=c}`` and hessian ``p(1-p)`` of the softmax cross-entropy.
Splits are exact: every midpoint between consecutive distinct feature values
of a node is a candidate.
"""

from __future__ import annotations

import numpy as np
from scipy.special import log_softmax, softmax
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import CorruptBundle, DimensionMismatch

LEAF = -1
# probability mass left on the other classes by a single-class model
DEGENERATE_EPS = 1e-7


class Tree:
    """Flat binary regression tree.

    Node ``i`` is a leaf when ``feature[i] == LEAF``; otherwise rows with
    ``x[feature[i]] < threshold[i]`` go to ``left[i]``, the rest to ``right[i]``.
    """

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=float)

    @property
    def n_nodes(self):
        return len(self.feature)

    def depth(self):
        depths = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] != LEAF:
                depths[self.left[i]] = depths[self.right[i]] = depths[i] + 1
        return int(depths.max())

    def predict(self, X):
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            feat = self.feature[node]
            internal = feat != LEAF
            if not internal.any():
                return self.value[node]
            f = np.where(internal, feat, 0)
            go_left = X[rows, f] < self.threshold[node]
            nxt = np.where(go_left, self.left[node], self.right[node])
            node = np.where(internal, nxt, node)

    def to_dict(self):
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["feature"], d["threshold"], d["left"], d["right"], d["value"])


def _best_split(xs, gs, hs, l2_reg, min_child_weight):
    """Return ``(gain, feature, threshold)`` of the best split, or None.

    ``xs``, ``gs``, ``hs`` are (d, m): per feature, the node's values sorted
    ascending and the matching gradients and hessians.  Ties go to the
    lowest feature index, then the lowest threshold.
    """
    m = xs.shape[1]
    if m < 2:
        return None
    gl = np.cumsum(gs, axis=1)[:, :-1]
    hl = np.cumsum(hs, axis=1)[:, :-1]
    G, H = gs[0].sum(), hs[0].sum()
    gr, hr = G - gl, H - hl
    gain = 0.5 * (gl**2 / (hl + l2_reg) + gr**2 / (hr + l2_reg) - G**2 / (H + l2_reg))
    ok = (xs[:, 1:] > xs[:, :-1]) & (hl >= min_child_weight) & (hr >= min_child_weight)
    gain = np.where(ok, gain, -np.inf)
    flat = int(np.argmax(gain))
    best = gain.flat[flat]
    if not best > 1e-12:
        return None
    j, p = divmod(flat, m - 1)
    lo, hi = xs[j, p], xs[j, p + 1]
    thr = 0.5 * (lo + hi)
    if not lo < thr <= hi:
        thr = hi
    return float(best), int(j), float(thr)


def presort(X):
    """Per-feature stable sort order and sorted values, both shaped (d, n)."""
    order = np.argsort(X.T, axis=1, kind="stable")
    return order, np.take_along_axis(X.T, order, axis=1)


def build_tree(X, g, h, max_depth, learning_rate, l2_reg, min_child_weight, sorted_=None):
    """Grow one tree depth-first on gradients ``g`` and hessians ``h``.

    ``sorted_`` is the output of :func:`presort` for ``X``, reusable across
    every tree fitted on the same rows.
    """
    order, xsorted = presort(X) if sorted_ is None else sorted_
    d = X.shape[1]
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        for arr, v in ((feature, LEAF), (threshold, 0.0), (left, LEAF), (right, LEAF), (value, 0.0)):
            arr.append(v)
        return len(feature) - 1

    stack = [(new_node(), np.arange(X.shape[0]), 0)]
    while stack:
        node, idx, depth = stack.pop()
        split = None
        if depth < max_depth and len(idx) >= 2:
            in_node = np.zeros(X.shape[0], dtype=bool)
            in_node[idx] = True
            sel = in_node[order]
            rows = order[sel].reshape(d, len(idx))
            xs = xsorted[sel].reshape(d, len(idx))
            split = _best_split(xs, g[rows], h[rows], l2_reg, min_child_weight)
        if split is None:
            G, H = g[idx].sum(), h[idx].sum()
            value[node] = -learning_rate * G / max(H + l2_reg, 1e-16)
            continue
        _, j, thr = split
        mask = X[idx, j] < thr
        lnode, rnode = new_node(), new_node()
        feature[node], threshold[node] = j, thr
        left[node], right[node] = lnode, rnode
        # right pushed first so the left subtree gets the lower node ids
        stack.append((rnode, idx[~mask], depth + 1))
        stack.append((lnode, idx[mask], depth + 1))
    return Tree(feature, threshold, left, right, value)


def softmax_loss(scores, y):
    """Mean softmax cross-entropy of integer labels ``y`` under raw ``scores``."""
    return float(-np.mean(log_softmax(scores, axis=1)[np.arange(len(y)), y]))


class GBDTClassifier(ClassifierMixin, BaseEstimator):
    """Gradient-boosted tree classifier.

    Parameters
    ----------
    n_rounds : int
        Boosting rounds; each round adds one tree per class.
    max_depth : int
    learning_rate : float
        Shrinkage applied to every leaf weight.
    l2_reg : float
        L2 penalty on leaf weights.
    min_child_weight : float
        Minimum hessian sum in each child of a split.  The default is low
        enough that a handful of labeled rows can still be split (each row
        contributes at most 0.25).
    n_classes : int or None
        Fix the class set to ``0..n_classes-1``.  When None the classes are
        the distinct values of ``y``.

    Attributes
    ----------
    trees_ : list of list of Tree
        ``trees_[c][r]`` is the round-``r`` tree of class ``c``.
    loss_curve_ : list of float
        Training loss before the first round and after each round.
    degenerate_ : bool
        True when ``y`` held a single class; the model then predicts that
        class with probability ``1 - 1e-7``.
    """

    def __init__(self, n_rounds=50, max_depth=3, learning_rate=0.3, l2_reg=1.0,
                 min_child_weight=0.1, n_classes=None):
        self.n_rounds = n_rounds
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.l2_reg = l2_reg
        self.min_child_weight = min_child_weight
        self.n_classes = n_classes

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        if self.n_classes is None:
            self.classes_, y_enc = np.unique(y, return_inverse=True)
        else:
            self.classes_ = np.arange(self.n_classes)
            if not np.all(np.isin(y, self.classes_)):
                raise ValueError(f"labels must lie in [0, {self.n_classes})")
            y_enc = y.astype(np.int64)
        if self.n_rounds < 0:
            raise ValueError("n_rounds must be >= 0")
        C = len(self.classes_)
        self.n_features_in_ = X.shape[1]
        self.base_score_ = np.zeros(C)
        self.trees_ = [[] for _ in range(C)]
        present = np.unique(y_enc)
        self.degenerate_ = len(present) == 1
        if self.degenerate_:
            if C > 1:
                self.base_score_[present[0]] = np.log((1 - DEGENERATE_EPS) * (C - 1) / DEGENERATE_EPS)
            self.loss_curve_ = [softmax_loss(np.tile(self.base_score_, (len(y_enc), 1)), y_enc)]
            return self

        scores = np.zeros((X.shape[0], C))
        onehot = np.eye(C)[y_enc]
        self.loss_curve_ = [softmax_loss(scores, y_enc)]
        sorted_ = presort(X)
        for _ in range(self.n_rounds):
            p = softmax(scores, axis=1)
            grad = p - onehot
            hess = p * (1 - p)
            update = np.empty_like(scores)
            for c in range(C):
                tree = build_tree(X, grad[:, c], hess[:, c], self.max_depth,
                                  self.learning_rate, self.l2_reg, self.min_child_weight,
                                  sorted_)
                self.trees_[c].append(tree)
                update[:, c] = tree.predict(X)
            scores += update
            self.loss_curve_.append(softmax_loss(scores, y_enc))
        return self

    def _check_X(self, X):
        check_is_fitted(self, "trees_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatch(
                f"X has {X.shape[1]} features, model was trained on {self.n_features_in_}"
            )
        return X

    def decision_function(self, X):
        """Raw per-class scores, shape (n, C)."""
        X = self._check_X(X)
        scores = np.tile(self.base_score_, (X.shape[0], 1))
        for c, trees in enumerate(self.trees_):
            for tree in trees:
                scores[:, c] += tree.predict(X)
        return scores

    def predict_proba(self, X):
        return softmax(self.decision_function(X), axis=1)

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def to_dict(self):
        check_is_fitted(self, "trees_")
        return {
            "kind": "gbdt",
            "params": self.get_params(),
            "classes": self.classes_.tolist(),
            "n_features": int(self.n_features_in_),
            "base_score": self.base_score_.tolist(),
            "degenerate": bool(self.degenerate_),
            "trees": [[t.to_dict() for t in trees] for trees in self.trees_],
        }

    @classmethod
    def from_dict(cls, d):
        try:
            if d["kind"] != "gbdt":
                raise CorruptBundle(f"expected a gbdt model, got {d['kind']!r}")
            model = cls(**d["params"])
            model.classes_ = np.asarray(d["classes"])
            model.n_features_in_ = int(d["n_features"])
            model.base_score_ = np.asarray(d["base_score"], dtype=float)
            model.degenerate_ = bool(d["degenerate"])
            model.trees_ = [[Tree.from_dict(t) for t in trees] for trees in d["trees"]]
        except (KeyError, TypeError) as exc:
            raise CorruptBundle(f"malformed gbdt model: {exc}") from exc
        model.loss_curve_ = []
        return model
