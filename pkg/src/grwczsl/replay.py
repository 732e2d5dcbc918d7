"""Class-balanced experience replay, with a generative variant for comparison."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Dict, Optional, Protocol

import numpy as np

from .data import TaskData
from .exceptions import ConfigError, StateError

MODES = ("real", "generative")


class ReplayClassifier(Protocol):
    """What generative replay needs from the model at the end of a task."""

    def sample_features(self, attrs: np.ndarray) -> np.ndarray: ...

    def predict_seen(self, X: np.ndarray) -> np.ndarray: ...


class ReplayBuffer:
    """Fixed-budget store of ``(feature, label)`` pairs plus every seen attribute.

    In ``"real"`` mode the budget ``capacity`` is split evenly across all seen
    classes after every task: ``capacity // n_seen`` each, with the remainder
    handed out one slot at a time in ascending class id order. In
    ``"generative"`` mode up to ``generative_per_class`` generated features
    are kept per class, but only those the current classifier gets right.
    """

    def __init__(self, capacity=5000, mode="real", seed=0, generative_per_class=200):
        if mode not in MODES:
            raise ConfigError(f"replay mode must be one of {MODES}, got {mode!r}")
        if capacity < 0:
            raise ConfigError("buffer capacity must be non-negative")
        self.capacity = int(capacity)
        self.mode = mode
        self.generative_per_class = int(generative_per_class)
        self.rng = np.random.default_rng(seed)
        self.store: Dict[int, np.ndarray] = {}
        self.attr_bank: Dict[int, np.ndarray] = {}

    def __len__(self):
        return sum(len(v) for v in self.store.values())

    @property
    def seen_classes(self):
        return sorted(self.attr_bank)

    def quotas(self, classes):
        classes = sorted(classes)
        q, rem = divmod(self.capacity, len(classes))
        return {c: q + (1 if i < rem else 0) for i, c in enumerate(classes)}

    def _subsample(self, X, k):
        if len(X) <= k:
            return X
        keep = np.sort(self.rng.choice(len(X), size=k, replace=False))
        return X[keep]

    def update(self, task: TaskData, classifier: Optional[ReplayClassifier] = None):
        if len(task) == 0:
            raise StateError("cannot update the replay buffer from empty task data")
        new_classes = task.classes
        for c in new_classes:
            self.attr_bank[c] = np.asarray(task.attributes[c], dtype=np.float64)
        if self.mode == "real":
            self._update_real(task, new_classes)
        else:
            self._update_generative(task, new_classes, classifier)

    def _update_real(self, task, new_classes):
        quota = self.quotas(set(self.store) | set(new_classes))
        for c in sorted(self.store):
            if c not in new_classes:
                self.store[c] = self._subsample(self.store[c], quota[c])
        for c in new_classes:
            X = task.features[task.labels == c]
            if c in self.store:
                X = np.concatenate([self.store[c], X])
            self.store[c] = self._subsample(X, quota[c])

    def _update_generative(self, task, new_classes, classifier):
        if classifier is None:
            raise StateError("generative replay needs a classifier")
        for c in new_classes:
            attrs = np.repeat(self.attr_bank[c][None, :], self.generative_per_class, axis=0)
            X = classifier.sample_features(attrs)
            pred = np.asarray(classifier.predict_seen(X))
            self.store[c] = X[pred == c]

    def items(self):
        """All stored pairs, classes in ascending order."""
        if not self.store:
            return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
        classes = sorted(self.store)
        X = np.concatenate([self.store[c] for c in classes])
        y = np.concatenate([np.full(len(self.store[c]), c, dtype=np.int64) for c in classes])
        return X, y

    def class_centers(self, classes):
        """Mean stored feature per class (classes with no stored rows are skipped)."""
        return {c: self.store[c].mean(axis=0) for c in classes
                if c in self.store and len(self.store[c])}

    def to_csv(self, path):
        X, y = self.items()
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            d = X.shape[1] if X.size else 0
            w.writerow(["class_id"] + [f"f{i}" for i in range(d)])
            for label, row in zip(y, X):
                w.writerow([int(label)] + [repr(float(v)) for v in row])


def end_of_task_update(buf: ReplayBuffer, task_data: TaskData, classifier_state=None):
    buf.update(task_data, classifier_state)


def sample_batch(buf: ReplayBuffer, n, rng):
    """``n`` draws with replacement over every stored pair.

    Returns ``(features, labels, attrs)``; all three are empty when the buffer
    holds nothing yet.
    """
    X, y = buf.items()
    if len(y) == 0:
        return np.zeros((0, X.shape[1])), np.zeros(0, dtype=np.int64), np.zeros((0, 0))
    idx = rng.integers(0, len(y), size=n)
    labels = y[idx]
    attrs = np.stack([buf.attr_bank[c] for c in labels]) if n else np.zeros((0, 0))
    return X[idx], labels, attrs


def per_class_counts(buf: ReplayBuffer) -> Dict[int, int]:
    return {c: len(v) for c, v in sorted(buf.store.items())}
