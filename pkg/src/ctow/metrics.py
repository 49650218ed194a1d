"""Accuracy, pairwise diversity and cross-validation reports."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .cotrain import CTOWClassifier, _split_arrays, make_estimator
from .data import stratified_split
from .exceptions import LengthMismatch


def accuracy(predicted, truth):
    predicted, truth = np.asarray(predicted), np.asarray(truth)
    if predicted.shape != truth.shape:
        raise LengthMismatch(f"{len(predicted)} predictions for {len(truth)} labels")
    if predicted.size == 0:
        raise LengthMismatch("accuracy of an empty prediction")
    return float(np.mean(predicted == truth))


@dataclass(frozen=True)
class ContingencyTable:
    """Joint correct/wrong counts of two classifiers.

    The first digit is classifier two, the second classifier one:
    ``n10`` counts rows where two is right and one is wrong.
    """

    n11: int
    n10: int
    n01: int
    n00: int

    @property
    def total(self):
        return self.n11 + self.n10 + self.n01 + self.n00


def contingency(pred_a, pred_b, truth):
    """Cross-tabulate correctness of classifier one (``pred_a``) and two (``pred_b``)."""
    pred_a, pred_b, truth = map(np.asarray, (pred_a, pred_b, truth))
    if not pred_a.shape == pred_b.shape == truth.shape:
        raise LengthMismatch("predictions and truth must have equal length")
    one = pred_a == truth
    two = pred_b == truth
    return ContingencyTable(
        n11=int(np.sum(one & two)),
        n10=int(np.sum(~one & two)),
        n01=int(np.sum(one & ~two)),
        n00=int(np.sum(~one & ~two)),
    )


def rho(table):
    """Correlation of the two classifiers' correctness, or None when a marginal is empty."""
    t = table
    denom = (t.n11 + t.n10) * (t.n01 + t.n00) * (t.n11 + t.n01) * (t.n10 + t.n00)
    if denom == 0:
        return None
    return float((t.n11 * t.n00 - t.n01 * t.n10) / np.sqrt(float(denom)))


@dataclass
class CvReport:
    method: str
    label_rate: float
    seed: int
    fold_accuracies: list
    histories: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def mean(self):
        return float(np.mean(self.fold_accuracies))

    @property
    def std(self):
        return float(np.std(self.fold_accuracies))

    def to_dict(self):
        # wall time is left out so identical runs serialize identically
        return {
            "method": self.method,
            "label_rate": self.label_rate,
            "seed": self.seed,
            "fold_accuracies": self.fold_accuracies,
            "mean": self.mean,
            "std": self.std,
            "histories": self.histories,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["method"], d["label_rate"], d["seed"], d["fold_accuracies"],
                   d["histories"], d["config"])


CSV_COLUMNS = ("dataset", "method", "label_rate", "seed", "mean", "std", "time")


def reports_to_csv(reports, dataset_name):
    """Flat CSV with one row per report, columns :data:`CSV_COLUMNS`."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in reports:
        writer.writerow([dataset_name, r.method, r.label_rate, r.seed,
                         f"{r.mean:.6f}", f"{r.std:.6f}", f"{r.wall_time:.3f}"])
    return buf.getvalue()


def _run_fold(ds, method, params, folds, fold, label_rate, seed):
    split = stratified_split(ds, label_rate, folds, fold, seed)
    X_train, y_train = _split_arrays(ds, split)
    est = make_estimator(method, **{**params, "random_state": seed}).fit(X_train, y_train)
    pred = est.predict(ds.features[split.test_ids])
    acc = accuracy(pred, ds.labels[split.test_ids])
    history = est.history_ if isinstance(est, CTOWClassifier) else []
    return acc, history


def cross_validate(ds, params=None, folds=5, label_rate=0.1, seed=0, method="ctow", n_jobs=1):
    """Stratified k-fold evaluation of one method at one label rate.

    ``params`` are :class:`CTOWClassifier` parameters.  Folds are independent
    and may run in parallel; results do not depend on ``n_jobs``.
    """
    params = dict(params or {})
    start = time.perf_counter()
    results = Parallel(n_jobs=n_jobs)(
        delayed(_run_fold)(ds, method, params, folds, f, label_rate, seed) for f in range(folds)
    )
    est = make_estimator(method, **{**params, "random_state": seed})
    if not isinstance(est, CTOWClassifier):
        est = CTOWClassifier(**{**params, "random_state": seed})
    config = est.get_params()
    return CvReport(
        method=method,
        label_rate=float(label_rate),
        seed=int(seed),
        fold_accuracies=[acc for acc, _ in results],
        histories=[h for _, h in results],
        config=config,
        wall_time=time.perf_counter() - start,
    )
