"""Attribute vectors for hallucinated classes.

Two sources: convex interpolation between random pairs of seen attributes,
or a learnable dictionary initialised the same way and sampled per batch.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import InsufficientClassesError, NumericError, StateError
from .nets import AdamState

ALPHA_LOW = 0.2
ALPHA_HIGH = 0.8


@dataclass
class HallucinatedBatch:
    attributes: np.ndarray
    pairs: Optional[np.ndarray] = None  # (n, 2) parent rows, interpolation only
    alphas: Optional[np.ndarray] = None
    indices: Optional[np.ndarray] = None  # dictionary rows, dictionary only

    def __len__(self):
        return self.attributes.shape[0]


def _distinct_pairs(n_classes, n, rng):
    first = rng.integers(0, n_classes, size=n)
    # shift by 1..n_classes-1 so the second parent never equals the first
    second = (first + rng.integers(1, n_classes, size=n)) % n_classes
    return np.stack([first, second], axis=1)


def mix_attributes(seen_attrs, pairs, alphas) -> np.ndarray:
    """Rows ``alpha * A[i] + (1 - alpha) * A[j]`` for each ``(i, j)`` in ``pairs``."""
    A = np.asarray(seen_attrs, dtype=np.float64)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    alphas = np.asarray(alphas, dtype=np.float64).reshape(-1, 1)
    return alphas * A[pairs[:, 0]] + (1 - alphas) * A[pairs[:, 1]]


def interpolate_attributes(seen_attrs, n, rng) -> HallucinatedBatch:
    """``alpha * a1 + (1 - alpha) * a2`` for ``n`` random distinct seen pairs."""
    A = np.asarray(seen_attrs, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] < 2:
        raise InsufficientClassesError("interpolation needs at least 2 seen classes")
    pairs = _distinct_pairs(A.shape[0], n, rng)
    alphas = rng.uniform(ALPHA_LOW, ALPHA_HIGH, size=n)
    return HallucinatedBatch(mix_attributes(A, pairs, alphas), pairs=pairs, alphas=alphas)


class AttributeDictionary:
    """Learnable bank of hallucinated attributes.

    ``entries`` has one row per seen class at (re)initialisation time. Gradients
    from sampled rows are scattered back with :meth:`accumulate` and applied
    with :meth:`step`.
    """

    def __init__(self, entries, lr=0.005, weight_decay=0.0):
        self.entries = np.array(entries, dtype=np.float64)
        self.grad = np.zeros_like(self.entries)
        self.optimizer = AdamState(lr=lr, weight_decay=weight_decay)

    def __len__(self):
        return self.entries.shape[0]

    def accumulate(self, batch: HallucinatedBatch, d_attributes):
        np.add.at(self.grad, batch.indices, d_attributes)

    def step(self):
        self.optimizer.update({"entries": self.entries}, {"entries": self.grad})
        self.grad[:] = 0.0
        if not np.all(np.isfinite(self.entries)):
            raise NumericError("attribute dictionary entries became non-finite")


def dictionary_init(seen_attrs, rng, lr=0.005) -> AttributeDictionary:
    A = np.asarray(seen_attrs, dtype=np.float64)
    batch = interpolate_attributes(A, A.shape[0], rng)
    return AttributeDictionary(batch.attributes, lr=lr)


def dictionary_sample(dictionary: AttributeDictionary, n, rng) -> HallucinatedBatch:
    if dictionary is None or len(dictionary) == 0:
        raise StateError("attribute dictionary is empty")
    idx = rng.integers(0, len(dictionary), size=n)
    return HallucinatedBatch(dictionary.entries[idx].copy(), indices=idx)
