"""Random walks between class centers and generated samples.

Three row-stochastic transition matrices are built from negative squared
Euclidean distances: centers to samples, samples to samples (self-transition
masked out), and samples back to centers. A walk of ``r`` inner steps lands on
``p_cx @ p_xx**r @ p_xc``; the walk objective scores every landing for
``r = 0..R`` against a target distribution, plus a term asking every sample
to be visited evenly from the centers.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import List

import numpy as np
import scipy.linalg

from . import linalg
from .exceptions import ConfigError, InvalidInputError, ShapeError
from .linalg import Identity, Uniform

MASK_LOGIT = -1e9


@dataclass
class TransitionTriple:
    p_cx: np.ndarray
    p_xx: np.ndarray
    p_xc: np.ndarray
    centers: np.ndarray
    samples: np.ndarray

    @property
    def n_centers(self):
        return self.p_cx.shape[0]

    @property
    def n_samples(self):
        return self.p_cx.shape[1]


@dataclass
class WalkResult:
    landings: List[np.ndarray]
    visit: np.ndarray
    triple: TransitionTriple
    # q[r] = p_xx**r @ p_xc, kept for the backward pass
    q: List[np.ndarray] = field(default_factory=list)

    @property
    def R(self):
        return len(self.landings) - 1


def build_transitions(centers, samples) -> TransitionTriple:
    C = linalg.as_matrix(centers, "centers")
    X = linalg.as_matrix(samples, "samples")
    if C.shape[1] != X.shape[1]:
        raise ShapeError(f"centers {C.shape} and samples {X.shape} differ in width")
    if C.shape[0] < 2 or X.shape[0] < 2:
        raise InvalidInputError("a walk needs at least 2 centers and 2 samples")
    s_xx = linalg.neg_sq_dist_matrix(X, X)
    np.fill_diagonal(s_xx, MASK_LOGIT)
    return TransitionTriple(
        p_cx=linalg.row_softmax(linalg.neg_sq_dist_matrix(C, X)),
        p_xx=linalg.row_softmax(s_xx),
        p_xc=linalg.row_softmax(linalg.neg_sq_dist_matrix(X, C)),
        centers=C,
        samples=X,
    )


def walk_landing(t: TransitionTriple, R: int) -> WalkResult:
    if R < 0:
        raise ConfigError("R must be non-negative")
    q = [t.p_xc]
    for _ in range(R):
        q.append(t.p_xx @ q[-1])
    landings = [t.p_cx @ qr for qr in q]
    visit = t.p_cx.mean(axis=0)
    return WalkResult(landings=landings, visit=visit, triple=t, q=q)


def _check_gamma(gamma):
    if not (0.0 < gamma <= 1.0):
        raise ConfigError(f"gamma must lie in (0, 1], got {gamma}")


def grw_objective(result: WalkResult, target, gamma) -> float:
    """Decayed landing cross-entropies plus the visit cross-entropy."""
    _check_gamma(gamma)
    total = 0.0
    for r, land in enumerate(result.landings):
        total += gamma**r * linalg.cross_entropy_to_target(land, target)
    total += linalg.cross_entropy_to_target(result.visit[None, :], Uniform())
    return total


def grw_objective_backward(result: WalkResult, target, gamma):
    """Gradients of :func:`grw_objective` w.r.t. the centers and the samples."""
    _check_gamma(gamma)
    t = result.triple
    A = t.p_xx
    d_cx = np.zeros_like(t.p_cx)
    d_xx = np.zeros_like(A)
    d_xc = np.zeros_like(t.p_xc)

    # landing_r = p_cx @ q_r,  q_r = A @ q_{r-1},  q_0 = p_xc
    g_q = None
    for r in range(result.R, -1, -1):
        d_land = gamma**r * linalg.cross_entropy_backward(result.landings[r], target)
        d_cx += d_land @ result.q[r].T
        g = t.p_cx.T @ d_land
        g_q = g if g_q is None else g_q + g
        if r > 0:
            d_xx += g_q @ result.q[r - 1].T
            g_q = A.T @ g_q
    d_xc += g_q

    d_visit = linalg.cross_entropy_backward(result.visit[None, :], Uniform())
    d_cx += d_visit / t.n_centers

    ds_cx = linalg.row_softmax_backward(t.p_cx, d_cx)
    ds_xx = linalg.row_softmax_backward(A, d_xx)
    np.fill_diagonal(ds_xx, 0.0)
    ds_xc = linalg.row_softmax_backward(t.p_xc, d_xc)

    dC, dX = linalg.neg_sq_dist_backward(t.centers, t.samples, ds_cx)
    dX1, dX2 = linalg.neg_sq_dist_backward(t.samples, t.samples, ds_xx)
    dX3, dC2 = linalg.neg_sq_dist_backward(t.samples, t.centers, ds_xc)
    return dC + dC2, dX + dX1 + dX2 + dX3


def grw_loss(centers, samples, target, gamma, R):
    """Forward and backward in one call: ``(value, d_centers, d_samples)``."""
    result = walk_landing(build_transitions(centers, samples), R)
    value = grw_objective(result, target, gamma)
    d_c, d_x = grw_objective_backward(result, target, gamma)
    return value, d_c, d_x


def grw_floor(n_centers, n_samples, gamma, R) -> float:
    """Value of the uniform-target objective when every distribution is uniform."""
    return sum(gamma**r for r in range(R + 1)) * np.log(n_centers) + np.log(n_samples)


def diversity_diagnostics(t: TransitionTriple, R: int) -> dict:
    """Determinant of the sample-to-sample transitions and landing diagonal mass.

    Diagnostics only; nothing here is differentiated.
    """
    with warnings.catch_warnings():
        # an exactly singular p_xx is a legitimate answer here: det = 0
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(t.p_xx, check_finite=True)
    swaps = np.sum(piv != np.arange(len(piv)))
    det = float((-1) ** swaps * np.prod(np.diag(lu)))
    landing = walk_landing(t, R).landings[R]
    return {"det_pxx": det, "diag_mass_landing": float(np.mean(np.diag(landing)))}


__all__ = [
    "Identity", "Uniform", "TransitionTriple", "WalkResult", "build_transitions",
    "walk_landing", "grw_objective", "grw_objective_backward", "grw_loss",
    "grw_floor", "diversity_diagnostics",
]
