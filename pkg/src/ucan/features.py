"""Measure how strongly an embedding set encodes a categorical feature.

A bank of one-vs-all linear SVMs is trained on a stratified 80% split and the
macro-averaged ROC AUC is computed on the held-out 20%.  The procedure is
repeated and averaged; an AUC well above 0.5 means the feature is embedded.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numba
import numpy as np

from .errors import DataError, DegenerateDataError, DomainError, ShapeError


@dataclass
class LabeledEmbeddingSet:
    vectors: np.ndarray
    labels: np.ndarray
    num_classes: Optional[int] = None
    class_names: Optional[list[str]] = None
    ids: Optional[list[str]] = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.vectors.ndim != 2:
            raise ShapeError("vectors must be a 2-D matrix")
        if self.labels.shape != (len(self.vectors),):
            raise ShapeError(f"{len(self.labels)} labels for {len(self.vectors)} vectors")
        if self.num_classes is None:
            self.num_classes = len(self.class_names) if self.class_names else int(self.labels.max()) + 1
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"class ids must lie in [0, {self.num_classes})")
        counts = self.class_counts()
        empty = [c for c in range(self.num_classes) if counts[c] == 0]
        if empty:
            raise DataError(f"classes without members: {empty}")

    def __len__(self):
        return len(self.vectors)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def partitions(self) -> list[np.ndarray]:
        return [self.vectors[self.labels == c] for c in range(self.num_classes)]

    def with_vectors(self, vectors) -> "LabeledEmbeddingSet":
        return LabeledEmbeddingSet(vectors, self.labels, self.num_classes, self.class_names, self.ids)


# -- AUC -------------------------------------------------------------------------

def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing the mean of their positions."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    starts = np.concatenate([[True], sorted_vals[1:] != sorted_vals[:-1]])
    group = np.cumsum(starts) - 1
    first = np.flatnonzero(starts)
    last = np.concatenate([first[1:], [len(values)]]) - 1
    ranks = np.empty(len(values))
    ranks[order] = (first[group] + last[group]) / 2.0 + 1.0
    return ranks


def auc(scores, binary_labels) -> float:
    """ROC AUC as the Mann-Whitney statistic; ties count one half."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(binary_labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise ShapeError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DomainError("AUC needs both positive and negative labels")
    ranks = _average_ranks(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# -- linear SVM ----------------------------------------------------------------

@dataclass(frozen=True)
class SvmHyper:
    reg: float = 1e-3
    epochs: int = 50
    lr: float = 0.1


@dataclass
class LinearClassifier:
    """One-vs-all bank: row ``m`` of ``weights`` scores class ``m`` against the rest."""

    weights: np.ndarray  # (M, d)
    biases: np.ndarray  # (M,)
    hyper: SvmHyper = field(default_factory=SvmHyper)
    seed: int = 0

    def decision_function(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.weights.T + self.biases

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.decision_function(x), axis=1)


@numba.njit(cache=True)
def _hinge_sgd(x, labels, classes, orders, reg, lr0):
    n, d = x.shape
    m = len(classes)
    w = np.zeros((m, d))
    b = np.zeros(m)
    t = 0
    for epoch in range(orders.shape[0]):
        for j in range(n):
            i = orders[epoch, j]
            lr = lr0 / (1.0 + lr0 * reg * t)
            shrink = 1.0 - lr * reg
            for c in range(m):
                y = 1.0 if labels[i] == classes[c] else -1.0
                margin = b[c]
                for k in range(d):
                    margin += w[c, k] * x[i, k]
                margin *= y
                for k in range(d):
                    w[c, k] *= shrink
                if margin < 1.0:
                    for k in range(d):
                        w[c, k] += lr * y * x[i, k]
                    b[c] += lr * y
            t += 1
    return w, b


def train_svm_bank(
    vectors,
    labels,
    classes: Sequence[int],
    hyper: SvmHyper = SvmHyper(),
    seed: int = 0,
) -> LinearClassifier:
    """Train one L2-regularized hinge-loss scorer per entry of ``classes``.

    SGD visits the samples in a fresh seeded permutation each epoch, with step
    size ``lr / (1 + lr * reg * t)``.  All scorers see the same sample order.
    """
    x = np.ascontiguousarray(vectors, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if len(x) == 0:
        raise DegenerateDataError("empty training set")
    for c in classes:
        present = (y == c).sum()
        if present == 0 or present == len(y):
            raise DegenerateDataError(f"class {c} vs rest has a single class in training data")
    rng = np.random.default_rng(seed)
    orders = np.stack([rng.permutation(len(x)) for _ in range(hyper.epochs)]) if hyper.epochs else np.zeros((0, len(x)), np.int64)
    w, b = _hinge_sgd(x, y, np.asarray(classes, dtype=np.int64), orders, hyper.reg, hyper.lr)
    return LinearClassifier(w, b, hyper, seed)


def train_linear_svm(train: LabeledEmbeddingSet, class_id: int, hyper: SvmHyper = SvmHyper(), seed: int = 0) -> LinearClassifier:
    """Binary scorer with ``class_id`` as the positive class."""
    if not 0 <= class_id < train.num_classes:
        raise DomainError(f"class id {class_id} out of range")
    return train_svm_bank(train.vectors, train.labels, [class_id], hyper, seed)


# -- measurement ---------------------------------------------------------------

def stratified_split(labels, train_fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Per-class shuffle split; returns sorted train and test row indices."""
    labels = np.asarray(labels)
    train_idx, test_idx = [], []
    for c in np.unique(labels):
        rows = rng.permutation(np.flatnonzero(labels == c))
        k = int(round(train_fraction * len(rows)))
        k = min(max(k, 1), len(rows) - 1)
        train_idx.append(rows[:k])
        test_idx.append(rows[k:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(test_idx))


@dataclass
class FeatureWeightReport:
    feature: str
    class_aucs: list[float]
    mean_auc: float
    repetitions: int
    rep_aucs: list[float]
    split: float
    tau: float
    embedded: bool
    epsilon: Optional[float] = None
    dataset: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureWeightReport":
        return cls(**doc)

    CSV_FIELDS = ("dataset", "feature", "mean_auc", "class_aucs", "tau", "embedded")

    def csv_row(self) -> list:
        return [
            self.dataset,
            self.feature,
            repr(self.mean_auc),
            ";".join(repr(a) for a in self.class_aucs),
            repr(self.tau),
            str(self.embedded).lower(),
        ]


def measure_feature(
    data: LabeledEmbeddingSet,
    repetitions: int = 10,
    split: float = 0.8,
    tau: float = 0.55,
    seed: int = 0,
    hyper: SvmHyper = SvmHyper(),
    feature: str = "feature",
    dataset: str = "",
) -> FeatureWeightReport:
    """Repeated stratified shuffle-split estimate of the one-vs-all AUC."""
    if repetitions < 1:
        raise DomainError("repetitions must be >= 1")
    if not 0.0 < split < 1.0:
        raise DomainError("split must lie in (0, 1)")
    counts = data.class_counts()
    if counts.min() < 5:
        raise DomainError(f"class {int(np.argmin(counts))} has {counts.min()} items; need >= 5 for a split")
    m = data.num_classes
    classes = list(range(m))
    per_class = np.zeros((repetitions, m))
    accuracies = []
    seeds = np.random.SeedSequence(seed).spawn(repetitions)
    for r in range(repetitions):
        rng = np.random.default_rng(seeds[r])
        tr, te = stratified_split(data.labels, split, rng)
        svm_seed = int(rng.integers(2**31))
        bank = train_svm_bank(data.vectors[tr], data.labels[tr], classes, hyper, svm_seed)
        scores = bank.decision_function(data.vectors[te])
        y_te = data.labels[te]
        for c in classes:
            per_class[r, c] = auc(scores[:, c], y_te == c)
        if m == 2:
            accuracies.append(float(np.mean((scores[:, 1] > 0) == (y_te == 1))))
    class_aucs = per_class.mean(axis=0)
    mean_auc = float(class_aucs.mean())
    epsilon = None
    if m == 2 and counts.min() >= 0.9 * counts.max():
        epsilon = float(np.mean(accuracies)) - 0.5
    return FeatureWeightReport(
        feature=feature,
        class_aucs=[float(a) for a in class_aucs],
        mean_auc=mean_auc,
        repetitions=repetitions,
        rep_aucs=[float(a) for a in per_class.mean(axis=1)],
        split=split,
        tau=tau,
        embedded=mean_auc > tau,
        epsilon=epsilon,
        dataset=dataset,
    )


def ratio_score(f1_after: float, f2_after: float, f1_before: float) -> Optional[float]:
    """Retained/removed AUC ratio, or ``None`` (NA) if F1 lost more than 10%."""
    for name, v in (("f1_after", f1_after), ("f2_after", f2_after), ("f1_before", f1_before)):
        if not 0.0 <= v <= 1.0:
            raise DomainError(f"{name}={v} is not an AUC in [0, 1]")
    if f2_after == 0:
        raise DomainError("f2_after is zero")
    # the slack keeps an exact 10% drop (0.72 vs 0.8) from flipping on rounding
    if f1_after < 0.9 * f1_before - 1e-12:
        return None
    return f1_after / f2_after


def bin_numeric_feature(values, thresholds) -> np.ndarray:
    """Class id = number of thresholds <= value, so a value on a threshold goes up."""
    t = np.asarray(thresholds, dtype=np.float64)
    if t.size == 0:
        raise DomainError("at least one threshold is required")
    if np.any(np.diff(t) <= 0):
        raise DomainError("thresholds must be strictly increasing")
    return np.searchsorted(t, np.asarray(values, dtype=np.float64), side="right")
