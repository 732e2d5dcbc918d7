"""Scalar training objectives for the discriminator and the generator.

Each loss comes in two flavours: ``name(...)`` returns the value, and
``name_grad(...)`` returns the value followed by gradients on its matrix
arguments. The discriminator ``D`` maps attributes into feature space, so
every loss here consumes already-embedded attributes; chaining into network
parameters is the trainer's job.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import linalg
from .exceptions import ConfigError, InsufficientClassesError, InvalidLabelError, ShapeError
from .linalg import EPS_LOG, Labels


@dataclass
class LossWeights:
    lambda_cls: float = 1.0
    lambda_c: float = 1.0
    lambda_i: float = 1.0
    lambda_rd: float = 1.0
    lambda_rg: float = 1.0
    tau: float = 10.0
    gamma: float = 0.7
    R: int = 3
    sal_margin: float = 0.1
    sal_neighbors: int = 3

    def __post_init__(self):
        self.validate()

    def validate(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                raise ConfigError(f"{f.name} must be a finite number, got {v!r}")
            if v < 0:
                raise ConfigError(f"{f.name} must be non-negative, got {v}")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if not (0 < self.gamma <= 1):
            raise ConfigError("gamma must lie in (0, 1]")
        if int(self.R) != self.R:
            raise ConfigError("R must be an integer")
        if self.sal_neighbors < 1 or int(self.sal_neighbors) != self.sal_neighbors:
            raise ConfigError("sal_neighbors must be an integer >= 1")

    def to_dict(self):
        return asdict(self)


# --- real / fake -----------------------------------------------------------

def _squash(c):
    """Map a cosine into the log domain: ``clamp((c + 1) / 2, eps, 1)``."""
    return np.clip((c + 1.0) / 2.0, EPS_LOG, 1.0)


def _squash_log_grad(c):
    raw = (c + 1.0) / 2.0
    active = (raw > EPS_LOG) & (raw < 1.0)
    return np.where(active, 0.5 / _squash(c), 0.0)


def _check_rows(*arrays):
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise ShapeError(f"row-aligned inputs disagree: {shape} vs {a.shape}")


def real_fake_loss(real_x, fake_x, embedded_attrs) -> float:
    return real_fake_loss_grad(real_x, fake_x, embedded_attrs)[0]


def real_fake_loss_grad(real_x, fake_x, embedded_attrs):
    """``mean log s(cos(x, D(a))) - mean log s(cos(G(z, a), D(a)))``.

    Returns ``(value, d_real, d_fake, d_embedded)``.
    """
    real_x, fake_x, E = (np.asarray(a, dtype=np.float64) for a in (real_x, fake_x, embedded_attrs))
    _check_rows(real_x, fake_x, E)
    n = real_x.shape[0]
    if n == 0:
        return 0.0, np.zeros_like(real_x), np.zeros_like(fake_x), np.zeros_like(E)
    c_real = linalg.rowwise_cosine(real_x, E)
    c_fake = linalg.rowwise_cosine(fake_x, E)
    value = float(np.mean(np.log(_squash(c_real))) - np.mean(np.log(_squash(c_fake))))
    dr_real, de_real = linalg.rowwise_cosine_backward(real_x, E, _squash_log_grad(c_real) / n)
    dr_fake, de_fake = linalg.rowwise_cosine_backward(fake_x, E, -_squash_log_grad(c_fake) / n)
    return value, dr_real, dr_fake, de_real + de_fake


# --- cosine classification ---------------------------------------------------

def cosine_logits(x, embedded_bank, tau):
    return tau * linalg.cosine_sim_matrix(x, embedded_bank)


def classification_loss(x, labels, embedded_bank, tau=10.0) -> float:
    return classification_loss_grad(x, labels, embedded_bank, tau)[0]


def classification_loss_grad(x, labels, embedded_bank, tau=10.0):
    """Cross-entropy of ``softmax(tau * cos(x, D(A)))`` against ``labels``.

    Returns ``(value, d_x, d_embedded_bank)``.
    """
    x = np.asarray(x, dtype=np.float64)
    E = np.asarray(embedded_bank, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (x.shape[0],):
        raise ShapeError(f"expected {x.shape[0]} labels, got {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= E.shape[0]):
        raise InvalidLabelError(f"labels must lie in [0, {E.shape[0]})")
    if x.shape[0] == 0:
        return 0.0, np.zeros_like(x), np.zeros_like(E)
    P = linalg.row_softmax(cosine_logits(x, E, tau))
    target = Labels(labels)
    value = linalg.cross_entropy_to_target(P, target)
    dZ = linalg.row_softmax_backward(P, linalg.cross_entropy_backward(P, target))
    dx, dE = linalg.cosine_sim_backward(x, E, tau * dZ)
    return value, dx, dE


# --- creativity --------------------------------------------------------------

def creativity_loss(fake_h, embedded_bank, tau=10.0) -> float:
    return creativity_loss_grad(fake_h, embedded_bank, tau)[0]


def creativity_loss_grad(fake_h, embedded_bank, tau=10.0):
    """Mean ``KL(p || uniform)`` of the seen-class distribution of each sample.

    Returns ``(value, d_fake_h, d_embedded_bank)``.
    """
    X = np.asarray(fake_h, dtype=np.float64)
    E = np.asarray(embedded_bank, dtype=np.float64)
    k = E.shape[0]
    if k < 2:
        raise InsufficientClassesError("creativity loss needs at least 2 seen classes")
    n = X.shape[0]
    P = linalg.row_softmax(cosine_logits(X, E, tau))
    logpk = np.log(np.maximum(P, np.finfo(float).tiny) * k)
    value = float(np.sum(P * logpk) / n)
    dP = (np.log(np.maximum(P, EPS_LOG) * k) + 1.0) / n
    dZ = linalg.row_softmax_backward(P, dP)
    dX, dE = linalg.cosine_sim_backward(X, E, tau * dZ)
    return value, dX, dE


# --- regularizers ------------------------------------------------------------

def discriminator_regularizer(embedded_attrs, real_class_centers) -> float:
    """``||D(A) - C||_F^2`` over the seen classes."""
    return linalg.frobenius_sq_diff(embedded_attrs, real_class_centers)


def discriminator_regularizer_grad(embedded_attrs, real_class_centers):
    value = discriminator_regularizer(embedded_attrs, real_class_centers)
    return value, 2.0 * (np.asarray(embedded_attrs) - np.asarray(real_class_centers))


def attribute_neighbors(attrs, k):
    """Indices of the ``k`` most cosine-similar other classes, per class."""
    S = linalg.cosine_sim_matrix(attrs, attrs)
    np.fill_diagonal(S, -np.inf)
    # stable sort keeps ties in class order
    return np.argsort(-S, axis=1, kind="stable")[:, :k]


def nuclear_loss_grad(real_centers_t, gen_centers_t):
    """``||C_s - C_g||_F^2`` between real and generated class centers.

    Returns ``(value, d_gen_centers)``.
    """
    Cs = linalg.as_matrix(real_centers_t, "real_centers_t")
    Cg = linalg.as_matrix(gen_centers_t, "gen_centers_t")
    return linalg.frobenius_sq_diff(Cs, Cg), -2.0 * (Cs - Cg)


def semantic_alignment_loss_grad(real_centers_t, gen_centers_t, attrs_t, k, margin):
    """Bidirectional hinge keeping center similarities near attribute similarities.

    For each class ``i`` and each of its ``k`` nearest attribute neighbours
    ``j`` the cosine between real center ``j`` and generated center ``i``
    must stay within ``margin`` of the attribute cosine; violations are
    squared and averaged over classes. Returns ``(value, d_gen_centers)``.
    """
    Cs = linalg.as_matrix(real_centers_t, "real_centers_t")
    Cg = linalg.as_matrix(gen_centers_t, "gen_centers_t")
    A = linalg.as_matrix(attrs_t, "attrs_t")
    if Cs.shape != Cg.shape or A.shape[0] != Cs.shape[0]:
        raise ShapeError("class-aligned inputs disagree in shape")
    n = Cs.shape[0]
    k = int(k)
    if k >= n:
        raise ConfigError(f"sal_neighbors={k} must be smaller than the {n} current classes")
    nbrs = attribute_neighbors(A, k)
    rows = np.repeat(np.arange(n), k)
    cols = nbrs.ravel()
    a_sim = linalg.rowwise_cosine(A[rows], A[cols])
    c_sim = linalg.rowwise_cosine(Cs[cols], Cg[rows])
    upper = np.maximum(0.0, c_sim - (a_sim + margin))
    lower = np.maximum(0.0, (a_sim - margin) - c_sim)
    value = float(np.sum(upper**2 + lower**2) / n)
    dc = (2.0 * upper - 2.0 * lower) / n
    _, d_rows = linalg.rowwise_cosine_backward(Cs[cols], Cg[rows], dc)
    d_cg = np.zeros_like(Cg)
    np.add.at(d_cg, rows, d_rows)
    return value, d_cg


def generator_regularizer(real_centers_t, gen_centers_t, attrs_t, weights: LossWeights) -> float:
    return generator_regularizer_grad(real_centers_t, gen_centers_t, attrs_t, weights)[0]


def generator_regularizer_grad(real_centers_t, gen_centers_t, attrs_t, weights: LossWeights):
    """Nuclear loss plus the semantic alignment hinge.

    Returns ``(value, d_gen_centers)``.
    """
    sal, d_sal = semantic_alignment_loss_grad(real_centers_t, gen_centers_t, attrs_t,
                                              weights.sal_neighbors, weights.sal_margin)
    nuc, d_nuc = nuclear_loss_grad(real_centers_t, gen_centers_t)
    return nuc + sal, d_nuc + d_sal


# --- composition -------------------------------------------------------------

def discriminator_coefficients(weights: LossWeights) -> dict:
    return {"real_fake": -1.0, "classification": weights.lambda_cls, "rd": weights.lambda_rd}


def generator_coefficients(weights: LossWeights) -> dict:
    return {
        "real_fake": 1.0,
        "classification": weights.lambda_cls,
        "creativity": weights.lambda_c,
        "grw": weights.lambda_i,
        "grw_reg": weights.lambda_i,
        "rg": weights.lambda_rg,
    }


def _compose(parts, coeffs):
    unknown = set(parts) - set(coeffs)
    if unknown:
        raise KeyError(f"unknown loss parts: {sorted(unknown)}")
    return float(sum(coeffs[name] * value for name, value in parts.items()))


def compose_discriminator_loss(parts: dict, weights: LossWeights) -> float:
    """``-real_fake + lambda_cls * classification + lambda_rd * rd``."""
    return _compose(parts, discriminator_coefficients(weights))


def compose_generator_loss(parts: dict, weights: LossWeights) -> float:
    """``real_fake + lambda_cls * cls + lambda_c * creativity
    + lambda_i * (grw + grw_reg) + lambda_rg * rg``."""
    return _compose(parts, generator_coefficients(weights))
