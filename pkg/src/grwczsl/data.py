"""Datasets, synthetic benchmarks, CSV ingestion and task schedules."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .exceptions import ConfigError, DataParseError, InvalidInputError


@dataclass
class TaskData:
    """Training-side slice of a dataset: only the requested classes.

    ``attributes`` maps class id to attribute vector and holds nothing beyond
    the classes the slice was built for.
    """

    features: np.ndarray
    labels: np.ndarray
    attributes: Dict[int, np.ndarray]

    @property
    def classes(self):
        return sorted(self.attributes)

    def __len__(self):
        return self.features.shape[0]


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_attrs: np.ndarray
    names: Optional[List[str]] = None
    class_means: Optional[np.ndarray] = None  # known only for synthetic data

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.class_attrs = np.asarray(self.class_attrs, dtype=np.float64)

    @property
    def n_classes(self):
        return self.class_attrs.shape[0]

    @property
    def d_x(self):
        return self.features.shape[1]

    @property
    def d_a(self):
        return self.class_attrs.shape[1]

    def __len__(self):
        return self.features.shape[0]

    def validate(self, require_all_classes=True):
        if self.features.ndim != 2 or self.class_attrs.ndim != 2:
            raise InvalidInputError("features and class attributes must be 2-D")
        if self.labels.shape != (self.features.shape[0],):
            raise InvalidInputError("one label per feature row is required")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise InvalidInputError(f"labels must lie in [0, {self.n_classes})")
        if require_all_classes:
            missing = np.setdiff1d(np.arange(self.n_classes), self.labels)
            if missing.size:
                raise InvalidInputError(f"classes without samples: {missing.tolist()}")
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.class_attrs))):
            raise InvalidInputError("dataset contains non-finite values")
        return self

    def task_data(self, class_ids) -> TaskData:
        ids = sorted(int(c) for c in class_ids)
        mask = np.isin(self.labels, ids)
        return TaskData(
            features=self.features[mask].copy(),
            labels=self.labels[mask].copy(),
            attributes={c: self.class_attrs[c].copy() for c in ids},
        )

    def split(self, test_fraction, rng):
        """Stratified train/test split; each class keeps at least one training row."""
        train_idx, test_idx = [], []
        for c in range(self.n_classes):
            idx = np.flatnonzero(self.labels == c)
            idx = idx[rng.permutation(len(idx))]
            n_test = int(round(test_fraction * len(idx)))
            n_test = min(n_test, len(idx) - 1) if len(idx) > 1 else 0
            test_idx.append(idx[:n_test])
            train_idx.append(idx[n_test:])
        tr = np.sort(np.concatenate(train_idx))
        te = np.sort(np.concatenate(test_idx))
        return self._subset(tr), self._subset(te)

    def _subset(self, idx):
        return Dataset(self.features[idx], self.labels[idx], self.class_attrs,
                       self.names, self.class_means)


@dataclass
class TaskSchedule:
    task_classes: List[List[int]]
    mode: str = "static"

    def __post_init__(self):
        self.task_classes = [sorted(int(c) for c in task) for task in self.task_classes]
        flat = [c for task in self.task_classes for c in task]
        if not self.task_classes or any(len(t) == 0 for t in self.task_classes):
            raise ConfigError("every task needs at least one class")
        if len(flat) != len(set(flat)):
            raise ConfigError("task class sets must be disjoint")

    @property
    def n_tasks(self):
        return len(self.task_classes)

    def seen(self, t) -> List[int]:
        """Classes of tasks ``1..t`` (1-based)."""
        return sorted(c for task in self.task_classes[:t] for c in task)

    def unseen(self, t) -> List[int]:
        return sorted(c for task in self.task_classes[t:] for c in task)

    def current(self, t) -> List[int]:
        return list(self.task_classes[t - 1])

    def all_classes(self):
        return self.seen(self.n_tasks)

    def to_json(self):
        return json.dumps({"tasks": self.task_classes})

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        if "tasks" not in obj:
            raise ConfigError("schedule JSON needs a 'tasks' key")
        return cls(obj["tasks"])


def build_static_schedule(K, T, sizes: Optional[Sequence[int]] = None) -> TaskSchedule:
    if T < 1 or K < 1:
        raise ConfigError("K and T must be positive")
    if sizes is None:
        if K % T:
            raise ConfigError(f"{K} classes do not split evenly into {T} tasks")
        sizes = [K // T] * T
    sizes = list(sizes)
    if len(sizes) != T or sum(sizes) != K or min(sizes) < 1:
        raise ConfigError(f"task sizes {sizes} do not add up to {K} classes over {T} tasks")
    bounds = np.cumsum([0] + sizes)
    return TaskSchedule([list(range(bounds[i], bounds[i + 1])) for i in range(T)])


# --- synthetic -----------------------------------------------------------------

ATTR_FAMILIES = ("unit_sphere", "sparse_binary")


@dataclass
class SyntheticSpec:
    n_classes: int = 20
    d_a: int = 16
    d_x: int = 32
    samples_per_class: int = 100
    attr_family: str = "unit_sphere"
    sparsity: float = 0.3
    noise_sigma: float = 0.3
    seed: int = 0
    n_tasks: int = 5

    def validate(self):
        if self.n_classes < 4:
            raise ConfigError("n_classes must be at least 4")
        if min(self.d_a, self.d_x, self.samples_per_class) < 1:
            raise ConfigError("dimensions and samples_per_class must be positive")
        if self.attr_family not in ATTR_FAMILIES:
            raise ConfigError(f"attr_family must be one of {ATTR_FAMILIES}")
        if not (0 < self.sparsity <= 1):
            raise ConfigError("sparsity must lie in (0, 1]")
        if not self.noise_sigma > 0:
            raise ConfigError("noise_sigma must be positive")
        if self.n_tasks < 1 or self.n_classes % self.n_tasks:
            raise ConfigError("n_classes must split evenly into n_tasks")
        return self

    def to_dict(self):
        return asdict(self)


def mixing_matrix(spec: SyntheticSpec) -> np.ndarray:
    """The fixed ``d_x x d_a`` map from attributes to class means."""
    rng_m = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(3)[0])
    return rng_m.standard_normal((spec.d_x, spec.d_a))


def _draw_attributes(spec, rng):
    if spec.attr_family == "unit_sphere":
        A = rng.standard_normal((spec.n_classes, spec.d_a))
        return A / np.linalg.norm(A, axis=1, keepdims=True)
    A = (rng.random((spec.n_classes, spec.d_a)) < spec.sparsity).astype(np.float64)
    empty = A.sum(axis=1) == 0
    A[empty, rng.integers(0, spec.d_a, size=int(empty.sum()))] = 1.0
    return A


def generate_synthetic(spec: SyntheticSpec, rng=None) -> Dataset:
    """Linear ground truth: ``x = M a_c + N(0, sigma^2 I)``.

    ``rng`` draws attributes and noise; when omitted it is derived from
    ``spec.seed``. The mixing matrix always comes from ``spec.seed``.
    """
    spec.validate()
    M = mixing_matrix(spec)
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(3)[1])
    A = _draw_attributes(spec, rng)
    means = A @ M.T
    labels = np.repeat(np.arange(spec.n_classes), spec.samples_per_class)
    X = means[labels] + spec.noise_sigma * rng.standard_normal((len(labels), spec.d_x))
    return Dataset(X, labels, A, class_means=means).validate()


# --- CSV -------------------------------------------------------------------------

def _read_rows(path, key, prefix):
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataParseError(path, 1, "empty file") from None
        if not header or header[0].strip() != key:
            raise DataParseError(path, 1, f"header must start with '{key}'")
        width = len(header) - 1
        for i, name in enumerate(header[1:]):
            if name.strip() != f"{prefix}{i}":
                raise DataParseError(path, 1, f"expected column '{prefix}{i}', got '{name}'")
        ids, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width + 1:
                raise DataParseError(path, lineno, f"expected {width + 1} fields, got {len(row)}")
            try:
                ids.append(int(row[0]))
                vals = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise DataParseError(path, lineno, str(exc)) from None
            if not all(np.isfinite(vals)):
                raise DataParseError(path, lineno, "non-finite value")
            rows.append(vals)
    if width < 1:
        raise DataParseError(path, 1, "no value columns")
    return np.array(ids, dtype=np.int64), np.array(rows, dtype=np.float64).reshape(-1, width)


def load_dataset_csv(features_path, attrs_path) -> Dataset:
    class_ids, attrs = _read_rows(attrs_path, "class_id", "a")
    K = len(class_ids)
    if not np.array_equal(np.sort(class_ids), np.arange(K)):
        raise DataParseError(attrs_path, 2, "class ids must be 0-based consecutive integers")
    A = np.empty_like(attrs)
    A[class_ids] = attrs
    labels, X = _read_rows(features_path, "label", "f")
    bad = np.flatnonzero((labels < 0) | (labels >= K))
    if bad.size:
        raise DataParseError(features_path, int(bad[0]) + 2,
                             f"label {labels[bad[0]]} has no attribute row")
    try:
        return Dataset(X, labels, A).validate()
    except InvalidInputError as exc:
        raise DataParseError(features_path, 0, str(exc)) from None


def _fmt(v):
    return repr(float(v))


def save_dataset_csv(dataset: Dataset, features_path, attrs_path):
    """Write the two CSV files; ``repr`` floats keep the round trip bitwise exact."""
    with Path(features_path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"] + [f"f{i}" for i in range(dataset.d_x)])
        for y, x in zip(dataset.labels, dataset.features):
            w.writerow([int(y)] + [_fmt(v) for v in x])
    with Path(attrs_path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class_id"] + [f"a{i}" for i in range(dataset.d_a)])
        for c, a in enumerate(dataset.class_attrs):
            w.writerow([c] + [_fmt(v) for v in a])


def load_schedule(path) -> TaskSchedule:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"schedule file not found: {path}") from None
    try:
        return TaskSchedule.from_json(text)
    except json.JSONDecodeError as exc:
        raise DataParseError(path, exc.lineno, exc.msg) from None
