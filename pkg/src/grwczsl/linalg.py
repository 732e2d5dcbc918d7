"""Dense probability and similarity primitives.

Every function takes and returns plain ``float64`` numpy arrays. Shapes are
checked explicitly; nothing relies on broadcasting between operands. Each
differentiable primitive has a ``*_backward`` companion that maps an upstream
gradient on the output to gradients on the inputs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .exceptions import InvalidInputError, ShapeError

EPS_LOG = 1e-12
EPS_NORM = 1e-12


def as_matrix(a, name="matrix") -> np.ndarray:
    """Return ``a`` as a finite 2-D float64 array or raise."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return m


def _same_cols(A, B, op):
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"{op}: column mismatch {A.shape} vs {B.shape}")


def row_softmax(logits) -> np.ndarray:
    """Softmax over each row, with max-subtraction for stability."""
    Z = as_matrix(logits, "logits")
    if Z.shape[0] < 1 or Z.shape[1] < 1:
        raise InvalidInputError("logits must have at least one row and column")
    E = np.exp(Z - Z.max(axis=1, keepdims=True))
    return E / E.sum(axis=1, keepdims=True)


def row_softmax_backward(P: np.ndarray, dP: np.ndarray) -> np.ndarray:
    """Gradient on the logits given the softmax output ``P`` and ``dL/dP``."""
    return P * (dP - np.sum(dP * P, axis=1, keepdims=True))


def neg_sq_dist_matrix(A, B) -> np.ndarray:
    """Pairwise ``-||A_i - B_j||^2``."""
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    _same_cols(A, B, "neg_sq_dist_matrix")
    diff = A[:, None, :] - B[None, :, :]
    return -np.einsum("ijk,ijk->ij", diff, diff)


def neg_sq_dist_backward(A, B, dS):
    """Gradients of ``neg_sq_dist_matrix(A, B)`` w.r.t. ``A`` and ``B``."""
    dA = -2.0 * (dS.sum(axis=1)[:, None] * A - dS @ B)
    dB = 2.0 * (dS.T @ A - dS.sum(axis=0)[:, None] * B)
    return dA, dB


def cosine_sim_matrix(A, B) -> np.ndarray:
    """Pairwise cosine similarity ``<A_i, B_j> / (|A_i||B_j| + eps)``."""
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    _same_cols(A, B, "cosine_sim_matrix")
    na = np.linalg.norm(A, axis=1)
    nb = np.linalg.norm(B, axis=1)
    return (A @ B.T) / (np.outer(na, nb) + EPS_NORM)


def cosine_sim_backward(A, B, dC):
    """Gradients of ``cosine_sim_matrix(A, B)`` w.r.t. ``A`` and ``B``."""
    na = np.linalg.norm(A, axis=1)
    nb = np.linalg.norm(B, axis=1)
    den = np.outer(na, nb) + EPS_NORM
    dot = A @ B.T
    G = dC / den
    # d den / d A_i = nb_j * A_i / na_i
    H = dC * dot / den**2
    inv_na = np.divide(1.0, na, out=np.zeros_like(na), where=na > 0)
    inv_nb = np.divide(1.0, nb, out=np.zeros_like(nb), where=nb > 0)
    dA = G @ B - (H @ nb)[:, None] * A * inv_na[:, None]
    dB = G.T @ A - (H.T @ na)[:, None] * B * inv_nb[:, None]
    return dA, dB


def rowwise_cosine(A, B) -> np.ndarray:
    """Cosine similarity between matching rows of two equally shaped arrays."""
    if A.shape != B.shape:
        raise ShapeError(f"rowwise_cosine: shape mismatch {A.shape} vs {B.shape}")
    na = np.linalg.norm(A, axis=1)
    nb = np.linalg.norm(B, axis=1)
    return np.sum(A * B, axis=1) / (na * nb + EPS_NORM)


def rowwise_cosine_backward(A, B, dc):
    na = np.linalg.norm(A, axis=1)
    nb = np.linalg.norm(B, axis=1)
    den = na * nb + EPS_NORM
    dot = np.sum(A * B, axis=1)
    g = dc / den
    h = dc * dot / den**2
    inv_na = np.divide(1.0, na, out=np.zeros_like(na), where=na > 0)
    inv_nb = np.divide(1.0, nb, out=np.zeros_like(nb), where=nb > 0)
    dA = g[:, None] * B - (h * nb * inv_na)[:, None] * A
    dB = g[:, None] * A - (h * na * inv_nb)[:, None] * B
    return dA, dB


@dataclass(frozen=True)
class Uniform:
    """Uniform target over the columns."""


@dataclass(frozen=True)
class Identity:
    """One-hot target at each row's own index; needs a square prediction."""


@dataclass(frozen=True)
class Labels:
    indices: Sequence[int]


Target = Union[Uniform, Identity, Labels]


def target_matrix(shape, target: Target) -> np.ndarray:
    """Dense target distribution of the given ``(n, k)`` shape."""
    n, k = shape
    if isinstance(target, Uniform):
        return np.full((n, k), 1.0 / k)
    if isinstance(target, Identity):
        if n != k:
            raise ShapeError(f"Identity target needs a square prediction, got {shape}")
        return np.eye(n)
    if isinstance(target, Labels):
        idx = np.asarray(target.indices, dtype=np.int64)
        if idx.shape != (n,):
            raise ShapeError(f"Labels target needs {n} indices, got {idx.shape}")
        if np.any(idx < 0) or np.any(idx >= k):
            raise ShapeError(f"label index out of range for {k} columns")
        T = np.zeros((n, k))
        T[np.arange(n), idx] = 1.0
        return T
    raise TypeError(f"unknown target {target!r}")


def cross_entropy_to_target(pred, target: Target) -> float:
    """Mean over rows of ``-sum_j t_j log(p_j + eps)``."""
    P = np.asarray(pred, dtype=np.float64)
    if P.ndim != 2:
        raise ShapeError(f"prediction must be 2-D, got {P.shape}")
    T = target_matrix(P.shape, target)
    return float(-np.sum(T * np.log(P + EPS_LOG)) / P.shape[0])


def cross_entropy_backward(pred, target: Target) -> np.ndarray:
    P = np.asarray(pred, dtype=np.float64)
    T = target_matrix(P.shape, target)
    return -T / (P + EPS_LOG) / P.shape[0]


def frobenius_sq_diff(A, B) -> float:
    """Squared Frobenius norm of ``A - B``."""
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    if A.shape != B.shape:
        raise ShapeError(f"frobenius_sq_diff: shape mismatch {A.shape} vs {B.shape}")
    D = A - B
    return float(np.sum(D * D))
