"""Dataset ingestion, stratified label-rate splitting and CV folds."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.model_selection import StratifiedKFold

from .exceptions import (
    BadFoldIndex,
    ClassTooSmall,
    EmptyDataset,
    MalformedCsv,
    UnknownColumn,
)

#: label value marking a row whose label is absent
UNLABELED = -1
MAX_CLASSES = 1000


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with optional per-row labels.

    ``labels`` is ``None`` for feature-only data; otherwise an integer array
    where :data:`UNLABELED` marks rows with no label.  ``class_names`` maps a
    class index back to the label string seen in the source file.
    """

    features: np.ndarray
    labels: np.ndarray | None = None
    class_count: int = 0
    feature_names: tuple = ()
    class_names: tuple = ()
    row_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise EmptyDataset("dataset needs at least one row and one feature")
        if not np.all(np.isfinite(X)):
            raise MalformedCsv("features must be finite numbers")
        object.__setattr__(self, "features", _frozen(X))
        n, d = X.shape
        if not self.feature_names:
            object.__setattr__(self, "feature_names", tuple(f"x{j}" for j in range(d)))
        elif len(self.feature_names) != d:
            raise MalformedCsv("feature_names length does not match feature count")
        object.__setattr__(self, "row_ids", _frozen(np.arange(n)))
        if self.labels is not None:
            y = np.asarray(self.labels)
            if y.shape != (n,) or not np.issubdtype(y.dtype, np.integer):
                raise MalformedCsv("labels must be one integer per row")
            present = y[y != UNLABELED]
            if self.class_count < 2:
                raise MalformedCsv("labeled data needs at least 2 classes")
            if present.size and (present.min() < 0 or present.max() >= self.class_count):
                raise MalformedCsv("label index outside [0, class_count)")
            object.__setattr__(self, "labels", _frozen(y.astype(np.int64)))
            if not self.class_names:
                object.__setattr__(
                    self, "class_names", tuple(str(c) for c in range(self.class_count))
                )

    @property
    def n_rows(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def fully_labeled(self):
        return self.labels is not None and bool(np.all(self.labels != UNLABELED))

    def fingerprint(self):
        """Row/column counts plus a content hash of features and labels."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features).tobytes())
        if self.labels is not None:
            h.update(np.ascontiguousarray(self.labels).tobytes())
        return {"rows": self.n_rows, "cols": self.n_features, "sha256": h.hexdigest()}


def load_csv(path, label_column=None):
    """Read a headered, comma-separated numeric file into a :class:`Dataset`.

    Label values are arbitrary strings, remapped to ``0..C-1`` by order of
    first appearance.  Empty label cells make the row unlabeled.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows:
        raise EmptyDataset(f"{path}: no header row")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise EmptyDataset(f"{path}: no data rows")

    label_idx = None
    if label_column is not None:
        if label_column not in header:
            raise UnknownColumn(f"{path}: no column named {label_column!r}")
        label_idx = header.index(label_column)
    feat_idx = [j for j in range(len(header)) if j != label_idx]
    if not feat_idx:
        raise EmptyDataset(f"{path}: no feature columns")

    X = np.empty((len(body), len(feat_idx)))
    raw_labels = []
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise MalformedCsv(f"{path}:{i}: expected {len(header)} cells, got {len(row)}")
        for out_j, j in enumerate(feat_idx):
            cell = row[j].strip()
            try:
                v = float(cell)
            except ValueError:
                raise MalformedCsv(f"{path}:{i}: cannot parse {cell!r} as a number") from None
            if not math.isfinite(v):
                raise MalformedCsv(f"{path}:{i}: non-finite value {cell!r}")
            X[i - 2, out_j] = v
        if label_idx is not None:
            raw_labels.append(row[label_idx].strip())

    feature_names = tuple(header[j] for j in feat_idx)
    if label_idx is None:
        return Dataset(features=X, feature_names=feature_names)

    mapping = {}
    y = np.full(len(body), UNLABELED, dtype=np.int64)
    for i, lab in enumerate(raw_labels):
        if lab == "":
            continue
        if lab not in mapping:
            mapping[lab] = len(mapping)
            if len(mapping) > MAX_CLASSES:
                raise MalformedCsv(f"{path}: more than {MAX_CLASSES} distinct labels")
        y[i] = mapping[lab]
    return Dataset(
        features=X,
        labels=y,
        class_count=len(mapping),
        feature_names=feature_names,
        class_names=tuple(mapping),
    )


@dataclass(frozen=True)
class SplitPlan:
    labeled_ids: np.ndarray
    unlabeled_ids: np.ndarray
    test_ids: np.ndarray
    label_rate: float
    seed: int

    @property
    def train_ids(self):
        return np.sort(np.concatenate([self.labeled_ids, self.unlabeled_ids]))


def labeled_count(class_size, label_rate):
    """Number of rows of a class that keep their label: ceil(rate * size), at least 1."""
    # guard against 0.1 * 400 -> 40.000000000000004
    return max(1, math.ceil(label_rate * class_size - 1e-9))


def stratified_split(ds, label_rate, folds, fold_index, seed):
    """Hold out one stratified CV fold, then hide labels on the rest.

    Within the training rows, each class keeps ``labeled_count`` rows
    labeled; the others become the unlabeled pool.
    """
    if not ds.fully_labeled:
        raise MalformedCsv("stratified_split needs a fully labeled dataset")
    if not 0 < label_rate <= 1:
        raise ValueError(f"label_rate must be in (0, 1], got {label_rate}")
    if folds < 2:
        raise ValueError(f"need at least 2 folds, got {folds}")
    if not 0 <= fold_index < folds:
        raise BadFoldIndex(f"fold_index {fold_index} outside [0, {folds})")
    y = ds.labels
    counts = np.bincount(y, minlength=ds.class_count)
    if counts.min() < folds:
        c = int(np.argmin(counts))
        raise ClassTooSmall(
            f"class {ds.class_names[c]!r} has {counts[c]} rows, fewer than {folds} folds"
        )

    skf = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    train, test = list(skf.split(np.zeros(len(y)), y))[fold_index]

    rng = np.random.default_rng([seed, fold_index])
    labeled = []
    for c in range(ds.class_count):
        members = train[y[train] == c]
        take = labeled_count(len(members), label_rate)
        labeled.append(rng.permutation(members)[:take])
    labeled = np.sort(np.concatenate(labeled))
    unlabeled = np.setdiff1d(train, labeled)
    return SplitPlan(
        labeled_ids=_frozen(labeled),
        unlabeled_ids=_frozen(unlabeled),
        test_ids=_frozen(np.sort(test)),
        label_rate=float(label_rate),
        seed=int(seed),
    )
